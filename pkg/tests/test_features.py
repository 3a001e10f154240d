import numpy as np
import pytest
from hypothesis import given, strategies as st

from rumorlab.features import (
    NODE_INDEX,
    NODE_SLOTS,
    SUBGRAPH_INDEX,
    SUBGRAPH_SLOTS,
    FeatureBounds,
    FeatureContext,
    fit_bounds,
    node_features,
    pair_slot_names,
    pair_vector,
    raw_node_features,
    raw_subgraph_features,
    schema_document,
    schema_hash,
    subgraph_features,
)
from rumorlab.graph import Comment, Message, User, build_graph

from conftest import L1, L2, L3, random_typed_graph

NAN = float("nan")


def _as_dict(vec, slots):
    return dict(zip(slots, vec.tolist()))


def _check(got: dict, want: dict):
    assert set(got) == set(want)
    for k in want:
        assert got[k] == pytest.approx(want[k], abs=1e-12), k


# ---------------------------------------------------------------- subgraph level


@pytest.fixture
def six_nodes():
    """0 rumor (target), 1 non-rumor, 2 bad author of 0, 3 re-poster, 4 comment, 5 author of 1."""
    nodes = [(0, Message(True)), (1, Message(False)), (2, User(True)), (3, User()), (4, Comment()), (5, User(True))]
    edges = [(2, 0, L1), (3, 0, L1), (0, 4, L2), (5, 1, L1), (2, 3, L3), (3, 5, L3)]
    g = build_graph(nodes, edges)
    prob = np.array([0.8, 0.3, NAN, NAN, NAN, NAN])
    infl = np.array([0.9, 0.4, 0.3, 0.2, 0.0, 0.5])
    return g, prob, infl


def test_six_node_component_hand_oracle(six_nodes):
    g, prob, infl = six_nodes
    ctx = FeatureContext.build(g, prob, infl, targets=[0], bad_authors=[2], horizon=4)
    ctx.attack_edges = [(3, 1)]
    got = _as_dict(raw_subgraph_features(g, 0, ctx), SUBGRAPH_SLOTS)
    # degrees 3,1,2,3,1,2; one triangle 0-2-3 over 8 connected triples
    want = {
        "n_nodes": 6, "n_edges": 6, "clustering_coefficient": 3 / 8,
        "avg_degree": 2.0, "max_degree": 3.0, "min_degree": 1.0,
        "message_ratio": 2 / 6, "author_ratio": 2 / 6, "re_tweeter_ratio": 1 / 6, "review_ratio": 1 / 6,
        "bad_author_ratio": 1 / 2, "rumor_ratio": 1 / 2, "rumor_retweet_ratio": 1.0, "rumor_review_ratio": 1.0,
        "avg_author_inf": 0.4, "max_author_inf": 0.5, "min_author_inf": 0.3,
        "avg_user_inf": 1 / 3, "max_user_inf": 0.5, "min_user_inf": 0.2,
        "avg_rumor_inf": 0.9, "max_rumor_inf": 0.9, "min_rumor_inf": 0.9,
        "avg_nonrumor_inf": 0.4, "max_nonrumor_inf": 0.4, "min_nonrumor_inf": 0.4,
        "avg_target_suspicious": 0.8, "max_target_suspicious": 0.8, "min_target_suspicious": 0.8,
        "attack_degree": 1 / 4,
        # no non-target rumor in the component: imputed
        "avg_rhm_suspicious": 0.0, "max_rhm_suspicious": 0.0, "min_rhm_suspicious": 0.0,
    }
    _check(got, want)


def test_rhm_all_messages_flag(six_nodes):
    g, prob, infl = six_nodes
    ctx = FeatureContext.build(g, prob, infl, targets=[0], bad_authors=[2], horizon=4, rhm_all_messages=True)
    got = _as_dict(raw_subgraph_features(g, 0, ctx), SUBGRAPH_SLOTS)
    assert (got["avg_rhm_suspicious"], got["max_rhm_suspicious"]) == (0.3, 0.3)


def test_rumor_free_component():
    g = build_graph([(0, Message(False)), (1, User(True))], [(1, 0, L1)])
    ctx = FeatureContext.build(g, np.array([0.4, NAN]), np.array([0.2, 0.6]), targets=[], bad_authors=[], horizon=5)
    got = _as_dict(raw_subgraph_features(g, 0, ctx), SUBGRAPH_SLOTS)
    assert got["rumor_ratio"] == 0.0
    assert (got["avg_rumor_inf"], got["max_rumor_inf"], got["min_rumor_inf"]) == (0.0, 0.0, 0.0)
    assert got["attack_degree"] == 0.0


def test_rhm_fields_read_only_non_target_rumors(six_nodes):
    g, prob, infl = six_nodes
    ctx = FeatureContext.build(g, prob, infl, targets=[0], bad_authors=[2], horizon=4)
    base = raw_subgraph_features(g, 0, ctx)
    ctx.prob = prob.copy()
    ctx.prob[1] = 0.99  # non-rumor message
    after = raw_subgraph_features(g, 0, ctx)
    rhm = [SUBGRAPH_INDEX[f"{s}_rhm_suspicious"] for s in ("avg", "max", "min")]
    assert np.array_equal(base[rhm], after[rhm])


# ---------------------------------------------------------------- node level


@pytest.fixture
def eight_nodes():
    """0 target rumor, 1 other rumor, 2 non-rumor, 3 bad author of 0, 4 re-poster,
    5 good author of 2, 6 comment on 0, 7 bad author of 1."""
    nodes = [
        (0, Message(True)), (1, Message(True)), (2, Message(False)), (3, User(True)),
        (4, User()), (5, User(True)), (6, Comment()), (7, User(True)),
    ]
    edges = [(3, 0, L1), (4, 0, L1), (0, 6, L2), (4, 5, L3), (5, 2, L1), (7, 1, L1), (5, 7, L3)]
    g = build_graph(nodes, edges)
    prob = np.array([0.7, 0.6, 0.2] + [NAN] * 5)
    infl = np.array([0.9, 0.5, 0.3, 0.4, 0.1, 0.2, 0.0, 0.35])
    ctx = FeatureContext.build(g, prob, infl, targets=[0], bad_authors=[3, 7], horizon=4)
    ctx.node_attack[5] = 2
    return g, ctx


def test_eight_node_hand_oracle(eight_nodes):
    g, ctx = eight_nodes
    got = _as_dict(raw_node_features(g, 4, ctx, k=3), NODE_SLOTS)
    # hops from 4: {0, 5} at 1, {2, 3, 6, 7} at 2, {1} at 3
    want = {
        "degree": 2, "ego_n_edges": 2, "good_bad": 0.0,
        "type_rumor": 0.0, "type_nonrumor": 0.0, "type_good_author": 1.0, "type_bad_author": 0.0,
        "ego_rumor_ratio": 1 / 3, "ego_bu_ratio": 0.0, "ego_review_ratio": 0.0,
        "node_inf": 0.1, "ego_user_inf": 0.15, "ego_message_inf": 0.9,
        "avg_node_potential": 0.7, "max_node_potential": 0.7, "min_node_potential": 0.7,
        "avg_neighbor_suspicious": 0.7, "max_neighbor_suspicious": 0.7, "min_neighbor_suspicious": 0.7,
        "avg_node_attack_degree": 1 / 6, "max_node_attack_degree": 0.5, "min_node_attack_degree": 0.0,
        "n_targets": 1, "n_targets_distance": 1 / 3,
        "avg_rhm_suspicious": 0.6, "max_rhm_suspicious": 0.6, "min_rhm_suspicious": 0.6,
    }
    _check(got, want)


def test_rumor_node_flags(eight_nodes):
    g, ctx = eight_nodes
    got = _as_dict(raw_node_features(g, 0, ctx), NODE_SLOTS)
    assert got["good_bad"] == 1.0
    assert [got[s] for s in ("type_rumor", "type_nonrumor", "type_good_author", "type_bad_author")] == [1, 0, 0, 0]


def test_target_out_of_range_uses_sentinel():
    g = build_graph([(0, Message(True)), (1, User(True)), (2, User()), (3, Message(False))], [(1, 0, L1), (2, 3, L1)])
    ctx = FeatureContext.build(g, np.array([0.5, NAN, NAN, 0.1]), np.zeros(4), targets=[0], bad_authors=[1], horizon=2)
    got = _as_dict(raw_node_features(g, 2, ctx), NODE_SLOTS)
    assert (got["n_targets"], got["n_targets_distance"]) == (0, 1.0)


def test_extraction_is_pure(eight_nodes):
    g, ctx = eight_nodes
    fp = g.fingerprint()
    prob, attack = ctx.prob.copy(), ctx.node_attack.copy()
    bounds = fit_bounds(g, ctx)
    for r in g.component_roots():
        subgraph_features(g, r, ctx, bounds)
    for v in range(g.n_nodes):
        node_features(g, v, ctx, bounds)
    assert g.fingerprint() == fp
    assert np.array_equal(ctx.prob, prob, equal_nan=True) and np.array_equal(ctx.node_attack, attack)


@given(st.integers(6, 30), st.integers(0, 2**31 - 1))
def test_normalized_features_in_unit_box(n, seed):
    rng = np.random.default_rng(seed)
    g, kinds, _ = random_typed_graph(rng, n, p=0.25)
    prob = np.where(g.kind_code == 0, rng.random(n), np.nan)
    msgs = [i for i, k in enumerate(kinds) if isinstance(k, Message) and k.is_rumor]
    ctx = FeatureContext.build(g, prob, rng.random(n), targets=msgs[:1], bad_authors=[], horizon=3)
    bounds = fit_bounds(g, ctx)
    ctx.node_attack[:] = rng.integers(0, 5, n)  # beyond clean-graph ranges
    for r in g.component_roots():
        x = subgraph_features(g, r, ctx, bounds)
        assert x.shape == (len(SUBGRAPH_SLOTS),) and x.min() >= 0 and x.max() <= 1
    for v in range(n):
        x = node_features(g, v, ctx, bounds)
        assert x.shape == (len(NODE_SLOTS),) and x.min() >= 0 and x.max() <= 1


# ---------------------------------------------------------------- pairs and schema


def test_pair_vector_length_and_order():
    a, b = np.arange(33.0), np.arange(33.0) + 100
    x = pair_vector(a, b)
    assert len(x) == 66
    assert not np.array_equal(x, pair_vector(b, a))
    with pytest.raises(ValueError):
        pair_vector(np.zeros(3), np.zeros(4))


@pytest.mark.parametrize("level,slots,names", [("subgraph", SUBGRAPH_SLOTS, ("G_i", "G_j")), ("node", NODE_SLOTS, ("v_p", "v_q"))])
def test_pair_layout_matches_index_map(level, slots, names):
    d = len(slots)
    a = np.arange(d) / d
    b = 1 - a
    x = pair_vector(a, b)
    layout = pair_slot_names(level)
    doc = schema_document()[f"{level}_pair"]
    assert layout == doc
    for i, s in enumerate(slots):
        assert layout[i] == f"{names[0]} {s}" and x[i] == a[i]
        assert layout[d + i] == f"{names[1]} {s}" and x[d + i] == b[i]


def test_schema_dimensions_and_hash():
    assert (len(SUBGRAPH_SLOTS), len(NODE_SLOTS)) == (33, 27)
    assert len(SUBGRAPH_INDEX) == 33 and len(NODE_INDEX) == 27
    assert schema_document()["hash"] == schema_hash()
    assert len(schema_hash()) == 64


# ---------------------------------------------------------------- bounds


def _bounds():
    rows = np.array([[1.0, 5.0, 0.2], [3.0, 5.0, 0.7]])
    return FeatureBounds.from_rows(rows, np.array([True, True, False]))


def test_constant_feature_normalizes_to_zero():
    b = _bounds()
    assert b.constant.tolist() == [False, True, False]
    assert b.normalize([2.0, 5.0, 0.5])[1] == 0.0
    assert b.normalize([2.0, 9.0, 0.5])[1] == 0.0


def test_value_above_max_clamps_to_one():
    assert _bounds().normalize([10.0, 5.0, 0.5])[0] == 1.0
    assert _bounds().normalize([-3.0, 5.0, 0.5])[0] == 0.0


@given(st.floats(-10, 10), st.floats(-1, 2))
def test_normalize_round_trip(x0, x2):
    b = _bounds()
    x = np.array([x0, 5.0, x2])
    back = b.denormalize(b.normalize(x))
    assert back[0] == pytest.approx(np.clip(x0, 1.0, 3.0), abs=1e-12)
    assert back[2] == pytest.approx(np.clip(x2, 0.0, 1.0), abs=1e-12)
