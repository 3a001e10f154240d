import numpy as np
import pytest
from hypothesis import given, strategies as st

from rumorlab.bandit import (
    BanditError,
    Baseline,
    BucketBaseline,
    ConstantBaseline,
    LinearValueBaseline,
    LinUcbPolicy,
    MinMax,
    RewardShaper,
    SchemaMismatch,
    StepContext,
    TimeBaseline,
    baseline_adjust,
    beta_ml,
    closed_form_theta,
    make_baseline,
    predictive_variance,
    shape_reward,
    variance_check,
)

from oracles import pooled_variance_loops, ridge_oracle


# ---------------------------------------------------------------- select


def test_fresh_policy_greedy_picks_first():
    pol = LinUcbPolicy(3, alpha=0.0)
    assert pol.select(np.random.default_rng(0).random((5, 3))) == 0


def test_zero_alpha_is_greedy():
    pol = LinUcbPolicy(2, alpha=0.0)
    pol.theta = np.array([1.0, -1.0])
    assert pol.select([[0.1, 0.0], [0.9, 0.2], [0.5, 0.5]]) == 1


def test_select_matches_dense_oracle():
    pol = LinUcbPolicy(2, alpha=0.7)
    pol.A = np.array([[2.0, 0.5], [0.5, 3.0]])
    pol.A_inv = np.linalg.inv(pol.A)
    pol.b = np.array([1.0, -0.5])
    pol.theta = np.linalg.solve(pol.A, pol.b)
    C = np.array([[1.0, 0.0], [0.0, 1.0], [0.6, 0.6]])
    want = [c @ np.linalg.solve(pol.A, pol.b) + 0.7 * np.sqrt(c @ np.linalg.solve(pol.A, c)) for c in C]
    assert np.allclose(pol.scores(C), want, atol=1e-14)
    assert pol.select(C) == int(np.argmax(want))


def test_select_errors():
    pol = LinUcbPolicy(2)
    with pytest.raises(BanditError):
        pol.select([])
    with pytest.raises(BanditError):
        pol.select([[1.0, 2.0, 3.0]])
    with pytest.raises(BanditError):
        LinUcbPolicy(2, alpha=-1.0)


@given(st.integers(0, 2**31 - 1), st.floats(0.01, 100))
def test_positive_scaling_keeps_choice(seed, c):
    rng = np.random.default_rng(seed)
    pol = LinUcbPolicy(4, alpha=0.5)
    pol.episode_update(rng.random((6, 4)), rng.random(6))
    C = rng.random((8, 4))
    s = pol.scores(C)
    assert int(np.argmax(c * s)) == pol.select(C)


# ---------------------------------------------------------------- updates


def test_initialization_is_identity_and_zero():
    pol = LinUcbPolicy(3)
    assert np.array_equal(pol.A, np.eye(3)) and not pol.b.any() and not pol.theta.any()


def test_empty_trace_keeps_theta():
    pol = LinUcbPolicy(2)
    pol.episode_update([[1.0, 0.0]], [1.0])
    before = pol.theta.copy()
    pol.episode_update([], [])
    assert np.array_equal(pol.theta, before)


def test_single_sample_closed_form():
    assert np.allclose(closed_form_theta([[1.0, 0.0]], [1.0]), [0.5, 0.0], atol=1e-15)
    pol = LinUcbPolicy(2)
    pol.episode_update([[1.0, 0.0]], [1.0])
    assert np.allclose(pol.theta, [0.5, 0.0], atol=1e-15)


def test_closed_form_without_rows_is_zero():
    assert closed_form_theta(np.zeros((0, 4)), []).tolist() == [0.0] * 4


def test_closed_form_dimension_mismatch():
    with pytest.raises(BanditError):
        closed_form_theta(np.zeros((3, 2)), [1.0, 2.0])


def test_closed_form_normal_equation_residual():
    rng = np.random.default_rng(5)
    X, r = rng.normal(size=(20, 5)), rng.normal(size=20)
    th = closed_form_theta(X, r)
    assert np.max(np.abs((X.T @ X + np.eye(5)) @ th - X.T @ r)) < 1e-10
    assert np.allclose(th, ridge_oracle(X, r), atol=1e-12)


@given(st.integers(0, 2**31 - 1), st.integers(1, 10))
def test_incremental_equals_closed_form(seed, episodes):
    rng = np.random.default_rng(seed)
    X, r = rng.random((50, 6)), rng.normal(size=50)
    cuts = np.sort(rng.choice(np.arange(1, 50), size=episodes - 1, replace=False)) if episodes > 1 else []
    pol = LinUcbPolicy(6)
    for xs, rs in zip(np.split(X, cuts), np.split(r, cuts)):
        pol.episode_update(xs, rs)
        assert np.linalg.eigvalsh(pol.A).min() >= 1 - 1e-9
    assert np.max(np.abs(pol.theta - ridge_oracle(X, r))) < 1e-8
    hx, hr = pol.history()
    assert np.array_equal(hx, X) and np.array_equal(hr, r)


def test_update_length_mismatch():
    with pytest.raises(BanditError):
        LinUcbPolicy(2).episode_update([[1.0, 0.0]], [1.0, 2.0])


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    pol = LinUcbPolicy(3, alpha=0.4, schema_hash="abc")
    pol.episode_update(rng.random((4, 3)), rng.random(4))
    pol.save(tmp_path / "p.json")
    back = LinUcbPolicy.load(tmp_path / "p.json", expected_schema="abc")
    assert np.array_equal(back.A, pol.A) and np.array_equal(back.theta, pol.theta) and back.alpha == 0.4
    C = rng.random((5, 3))
    assert np.allclose(back.scores(C), pol.scores(C), atol=1e-12)


def test_checkpoint_schema_mismatch_rejected(tmp_path):
    LinUcbPolicy(3, schema_hash="abc").save(tmp_path / "p.json")
    with pytest.raises(SchemaMismatch):
        LinUcbPolicy.load(tmp_path / "p.json", expected_schema="xyz")
    with pytest.raises(BanditError):
        LinUcbPolicy.from_dict({"format": "other"})


# ---------------------------------------------------------------- shaping


def test_shape_reward_affine_map():
    sh = RewardShaper(MinMax(-0.2, 0.6))
    assert shape_reward(sh, 0.6) == 1.0
    assert shape_reward(sh, -0.2) == 0.0
    assert shape_reward(sh, 0.2) == pytest.approx(0.5, abs=1e-15)
    assert shape_reward(sh, 5.0) == 1.0 and shape_reward(sh, -5.0) == 0.0


def test_uncalibrated_shaper_rejected():
    with pytest.raises(BanditError):
        shape_reward(RewardShaper(None), 0.1)
    with pytest.raises(BanditError):
        RewardShaper(MinMax(0, 1)).shape_total(0.1)
    with pytest.raises(BanditError):
        MinMax(1.0, 1.0)


def test_minmax_from_samples_widens():
    mm = MinMax.from_samples([0.0, 1.0, 0.5], widen=0.1)
    assert (mm.lo, mm.hi) == pytest.approx((-0.1, 1.1))
    flat = MinMax.from_samples([0.3, 0.3])
    assert flat.lo < 0.3 < flat.hi


# ---------------------------------------------------------------- baselines


def test_first_episode_is_unadjusted():
    b = TimeBaseline(3)
    assert [baseline_adjust(b, t, r) for t, r in zip((1, 2, 3), (0.2, 0.5, 0.9))] == [0.2, 0.5, 0.9]


def test_second_episode_subtracts_constant():
    b = TimeBaseline(3)
    for t in (1, 2, 3):
        baseline_adjust(b, t, 0.4)
    assert [baseline_adjust(b, t, r) for t, r in zip((1, 2, 3), (0.2, 0.5, 0.9))] == pytest.approx([-0.2, 0.1, 0.5])


def test_single_episode_retrospective_adjustment_is_zero():
    R = np.array([[0.3, 0.1, 0.7]])
    assert not (R - R.mean(axis=0)).any()
    assert variance_check(R).sigma2_adjusted == 0.0


@given(st.lists(st.lists(st.floats(0, 1), min_size=4, max_size=4), min_size=1, max_size=15))
def test_baseline_mean_is_exact_arithmetic_mean(rows):
    b = TimeBaseline(4)
    for row in rows:
        for t, r in enumerate(row, 1):
            baseline_adjust(b, t, r)
    for t in range(1, 5):
        col = [row[t - 1] for row in rows]
        assert b.value(t) == sum(col) / len(col)


def test_time_baseline_rejects_bad_step():
    with pytest.raises(BanditError):
        TimeBaseline(3).value(4)
    with pytest.raises(BanditError):
        TimeBaseline(3).value(0)


def test_exponential_time_baseline():
    b = TimeBaseline(1, momentum=0.5)
    baseline_adjust(b, 1, 1.0)
    baseline_adjust(b, 1, 0.0)
    assert b.value(1) == 0.5
    baseline_adjust(b, 1, 0.0)
    assert b.value(1) == 0.25


def test_constant_baseline_pools_steps():
    b = ConstantBaseline()
    b.adjust(1.0, StepContext(1))
    b.adjust(0.0, StepContext(2))
    assert b.adjust(0.8, StepContext(1)) == pytest.approx((0.3, 0.3))


def test_bucket_baseline_separates_levels():
    b = BucketBaseline()
    b.adjust(1.0, StepContext(1, bucket_g=0, bucket_n=2))
    assert b.adjust(0.5, StepContext(2, bucket_g=0, bucket_n=3)) == (-0.5, 0.5)


def test_linear_value_baseline_matches_ridge_fit():
    rng = np.random.default_rng(3)
    b = LinearValueBaseline(2, 3)
    xg, xn, r = rng.random((30, 2)), rng.random((30, 3)), rng.random(30)
    for i in range(30):
        b.adjust(r[i], StepContext(1, x_g=xg[i], x_n=xn[i]))
    b.end_episode()
    Z = np.hstack([xg, np.ones((30, 1))])
    reg = np.eye(3)
    reg[-1, -1] = 0.0
    w = np.linalg.solve(Z.T @ Z + reg, Z.T @ r)
    assert np.allclose(b.coef[0], w, atol=1e-12)
    got = b.adjust(0.5, StepContext(2, x_g=xg[0], x_n=xn[0]))[0]
    assert got == pytest.approx(0.5 - Z[0] @ w, abs=1e-12)


def test_make_baseline_modes():
    assert isinstance(make_baseline("time", 5, 2, 2), TimeBaseline)
    assert isinstance(make_baseline("graph-bucket", 5, 2, 2), BucketBaseline)
    assert isinstance(make_baseline("function", 5, 2, 2), LinearValueBaseline)
    assert type(make_baseline("none", 5, 2, 2)) is Baseline
    with pytest.raises(BanditError):
        make_baseline("bogus", 5, 2, 2)


# ---------------------------------------------------------------- variance diagnostics


def test_variance_check_hand_case():
    vc = variance_check([[1, 0], [3, 2]])
    assert (vc.sigma2, vc.sigma2_adjusted, vc.ok) == (1.25, 1.0, True)


@given(st.integers(0, 2**31 - 1))
def test_variance_check_sweep(seed):
    rng = np.random.default_rng(seed)
    for _ in range(20):  # 50 examples x 20 = 1000 matrices
        E, T = rng.integers(1, 12, size=2)
        R = rng.normal(size=(E, T)) * rng.random() + rng.normal(size=T)
        vc = variance_check(R)
        s2, s2p = pooled_variance_loops(R.tolist())
        assert vc.ok
        assert vc.sigma2 == pytest.approx(s2, abs=1e-10) and vc.sigma2_adjusted == pytest.approx(s2p, abs=1e-10)


def test_beta_ml_cases():
    X = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert beta_ml(X, [2.0, 3.0], [2.0, 3.0]) == 0.0
    assert beta_ml(X, [1.0, -1.0], [0.0, 0.0]) == 1.0
    with pytest.raises(BanditError):
        beta_ml(X[:1], [1.0], [0.0, 0.0])


def test_zero_residual_predictive_variance_is_posterior_term():
    pol = LinUcbPolicy(2)
    pol.episode_update([[1.0, 2.0], [0.5, 0.1]], [0.3, 0.2])
    x = np.array([0.4, 0.7])
    assert predictive_variance(pol, x, 0.0) == pytest.approx(x @ np.linalg.solve(pol.A, x), abs=1e-14)


@given(st.integers(0, 2**31 - 1))
def test_predictive_variance_shrinks_with_samples(seed):
    rng = np.random.default_rng(seed)
    pol = LinUcbPolicy(4)
    x = rng.random(4)
    prev = predictive_variance(pol, x, 0.1)
    for _ in range(15):
        pol.episode_update(rng.random((3, 4)), rng.random(3))
        cur = predictive_variance(pol, x, 0.1)
        assert cur <= prev + 1e-12
        prev = cur
