"""LinUCB policies, reward shaping, reward baselines and variance diagnostics."""
from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve

POLICY_FORMAT = "rumorlab-linucb"


class BanditError(RuntimeError):
    pass


class SchemaMismatch(BanditError):
    """Checkpoint was written under a different feature schema."""


def closed_form_theta(X, r) -> np.ndarray:
    """Ridge solution (X^T X + I)^-1 X^T r, via a Cholesky solve."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    r = np.asarray(r, dtype=float).ravel()
    if X.shape[0] != len(r):
        raise BanditError(f"{X.shape[0]} sample rows but {len(r)} rewards")
    d = X.shape[1]
    if X.shape[0] == 0:
        return np.zeros(d)
    A = X.T @ X + np.eye(d)
    return cho_solve(cho_factor(A), X.T @ r)


class LinUcbPolicy:
    """Linear UCB over state-action vectors of dimension d.

    ``A = I + sum x x^T`` and ``b = sum r x`` are updated once per episode;
    between updates the exploration term uses the frozen inverse of ``A``.
    """

    def __init__(self, d: int, alpha: float = 1.0, schema_hash: str = "", keep_history: bool = True):
        if alpha < 0:
            raise BanditError("exploration coefficient must be >= 0")
        self.d = d
        self.alpha = float(alpha)
        self.schema_hash = schema_hash
        self.A = np.eye(d)
        self.b = np.zeros(d)
        self.theta = np.zeros(d)
        self.A_inv = np.eye(d)
        self.keep_history = keep_history
        self.history_x: list[np.ndarray] = []
        self.history_r: list[float] = []

    def scores(self, candidates) -> np.ndarray:
        X = np.atleast_2d(np.asarray(candidates, dtype=float))
        if X.shape[1] != self.d:
            raise BanditError(f"candidate dim {X.shape[1]} != policy dim {self.d}")
        bonus = ((X @ self.A_inv) * X).sum(axis=1)
        return X @ self.theta + self.alpha * np.sqrt(np.maximum(bonus, 0.0))

    def select(self, candidates) -> int:
        if len(candidates) == 0:
            raise BanditError("no candidate actions")
        return int(np.argmax(self.scores(candidates)))

    def episode_update(self, xs: Sequence[np.ndarray], rewards: Sequence[float]) -> None:
        if len(xs) != len(rewards):
            raise BanditError("one reward per state-action vector required")
        if len(xs) == 0:
            return
        X = np.asarray(xs, dtype=float)
        r = np.asarray(rewards, dtype=float)
        self.A += X.T @ X
        self.b += X.T @ r
        try:
            factor = cho_factor(self.A)
        except np.linalg.LinAlgError as e:  # A >= I, so this is an internal fault
            raise BanditError(f"design matrix lost positive definiteness: {e}") from e
        self.theta = cho_solve(factor, self.b)
        self.A_inv = cho_solve(factor, np.eye(self.d))
        if self.keep_history:
            self.history_x.extend(X)
            self.history_r.extend(r.tolist())

    def history(self) -> tuple[np.ndarray, np.ndarray]:
        if not self.history_x:
            return np.zeros((0, self.d)), np.zeros(0)
        return np.asarray(self.history_x), np.asarray(self.history_r)

    def to_dict(self) -> dict:
        return {
            "format": POLICY_FORMAT,
            "d": self.d,
            "alpha": self.alpha,
            "schema_hash": self.schema_hash,
            "A": self.A.tolist(),
            "b": self.b.tolist(),
            "theta": self.theta.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict, expected_schema: Optional[str] = None) -> "LinUcbPolicy":
        if doc.get("format") != POLICY_FORMAT:
            raise BanditError("not a policy checkpoint")
        if expected_schema is not None and doc["schema_hash"] != expected_schema:
            raise SchemaMismatch(
                f"feature schema mismatch: checkpoint {doc['schema_hash'][:12]} vs current {expected_schema[:12]}"
            )
        pol = cls(int(doc["d"]), float(doc["alpha"]), doc["schema_hash"], keep_history=False)
        pol.A = np.array(doc["A"], dtype=float)
        pol.b = np.array(doc["b"], dtype=float)
        pol.theta = np.array(doc["theta"], dtype=float)
        pol.A_inv = np.linalg.inv(pol.A)
        return pol

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path, expected_schema: Optional[str] = None) -> "LinUcbPolicy":
        return cls.from_dict(json.loads(Path(path).read_text()), expected_schema)


# --------------------------------------------------------------------------
# reward shaping


@dataclass
class MinMax:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise BanditError(f"min-max bounds must satisfy lo < hi, got ({self.lo}, {self.hi})")

    def __call__(self, value: float) -> float:
        return float(min(1.0, max(0.0, (value - self.lo) / (self.hi - self.lo))))

    @classmethod
    def from_samples(cls, values, widen: float = 0.1) -> "MinMax":
        """Observed range, widened by ``widen`` of its span on each side."""
        values = np.asarray(list(values), dtype=float)
        lo, hi = (float(values.min()), float(values.max())) if len(values) else (0.0, 0.0)
        span = hi - lo
        if span <= 0:
            span = max(abs(hi), 1e-6)
        return cls(lo - widen * span, hi + widen * span)


@dataclass
class StepContext:
    """What a baseline may condition on for one step."""

    t: int
    x_g: Optional[np.ndarray] = None
    x_n: Optional[np.ndarray] = None
    bucket_g: int = 0
    bucket_n: int = 0


class Baseline:
    """Control variate subtracted from step rewards.

    ``adjust`` returns the adjusted reward for the subgraph and node level
    and folds the raw reward into the baseline's running statistics.
    """

    name = "none"

    def adjust(self, r: float, ctx: StepContext) -> tuple[float, float]:
        return r, r

    def end_episode(self) -> None:
        pass


class TimeBaseline(Baseline):
    """Per-step expected reward V(t), estimated across episodes.

    Running arithmetic mean with prior 0 by default; ``momentum`` switches
    to an exponentially weighted mean.
    """

    name = "time"

    def __init__(self, horizon: int, momentum: Optional[float] = None):
        self.horizon = horizon
        self.momentum = momentum
        self.total = np.zeros(horizon + 1)
        self.count = np.zeros(horizon + 1, dtype=np.int64)
        self.ewm = np.zeros(horizon + 1)

    def value(self, t: int) -> float:
        if not 1 <= t <= self.horizon:
            raise BanditError(f"step {t} outside 1..{self.horizon}")
        if self.count[t] == 0:
            return 0.0
        if self.momentum is not None:
            return float(self.ewm[t])
        return float(self.total[t] / self.count[t])

    @property
    def means(self) -> np.ndarray:
        return np.array([self.value(t) for t in range(1, self.horizon + 1)])

    def record(self, t: int, r: float) -> None:
        if self.momentum is not None:
            m = self.momentum
            self.ewm[t] = r if self.count[t] == 0 else m * self.ewm[t] + (1 - m) * r
        self.total[t] += r
        self.count[t] += 1

    def adjust(self, r: float, ctx: StepContext) -> tuple[float, float]:
        rt = r - self.value(ctx.t)
        self.record(ctx.t, r)
        return rt, rt


def baseline_adjust(shaper: TimeBaseline, t: int, r: float) -> float:
    return shaper.adjust(r, StepContext(t))[0]


class ConstantBaseline(Baseline):
    """Mean of every reward seen so far, regardless of step."""

    name = "constant"

    def __init__(self):
        self.total = 0.0
        self.count = 0

    def adjust(self, r: float, ctx: StepContext) -> tuple[float, float]:
        b = self.total / self.count if self.count else 0.0
        self.total += r
        self.count += 1
        return r - b, r - b


class BucketBaseline(Baseline):
    """Mean reward grouped by how often the chosen subgraphs / nodes were attacked."""

    name = "graph"

    def __init__(self):
        self.stats = [defaultdict(lambda: [0.0, 0]), defaultdict(lambda: [0.0, 0])]

    def _one(self, level: int, key: int, r: float) -> float:
        s = self.stats[level][key]
        b = s[0] / s[1] if s[1] else 0.0
        s[0] += r
        s[1] += 1
        return r - b

    def adjust(self, r: float, ctx: StepContext) -> tuple[float, float]:
        return self._one(0, ctx.bucket_g, r), self._one(1, ctx.bucket_n, r)


class LinearValueBaseline(Baseline):
    """Linear state-value regressors V(x) = w.x + c, one per level.

    Refitted by ridge-regularised least squares on all past samples at the
    end of every episode.
    """

    name = "function"

    def __init__(self, d_g: int, d_n: int, ridge: float = 1.0):
        self.ridge = ridge
        self._acc = [self._new(d_g), self._new(d_n)]
        self.coef = [np.zeros(d_g + 1), np.zeros(d_n + 1)]
        self._pending: list[tuple[int, np.ndarray, float]] = []

    @staticmethod
    def _new(d: int):
        return [np.zeros((d + 1, d + 1)), np.zeros(d + 1)]

    def _predict(self, level: int, x: np.ndarray) -> float:
        return float(self.coef[level][:-1] @ x + self.coef[level][-1])

    def adjust(self, r: float, ctx: StepContext) -> tuple[float, float]:
        out = []
        for level, x in enumerate((ctx.x_g, ctx.x_n)):
            out.append(r - self._predict(level, x))
            self._pending.append((level, np.append(x, 1.0), r))
        return out[0], out[1]

    def end_episode(self) -> None:
        for level, z, r in self._pending:
            self._acc[level][0] += np.outer(z, z)
            self._acc[level][1] += r * z
        self._pending.clear()
        for level, (G, h) in enumerate(self._acc):
            reg = self.ridge * np.eye(len(h))
            reg[-1, -1] = 0.0 if G[-1, -1] > 0 else self.ridge
            self.coef[level] = np.linalg.solve(G + reg, h)


BASELINE_MODES = ("time", "constant", "graph-bucket", "state-function", "none", "graph", "function")


def make_baseline(mode: str, horizon: int, d_g: int, d_n: int, momentum: Optional[float] = None) -> Baseline:
    if mode == "time":
        return TimeBaseline(horizon, momentum)
    if mode == "constant":
        return ConstantBaseline()
    if mode in ("graph", "graph-bucket"):
        return BucketBaseline()
    if mode in ("function", "state-function"):
        return LinearValueBaseline(d_g, d_n)
    if mode == "none":
        return Baseline()
    raise BanditError(f"unknown baseline mode {mode!r}")


@dataclass
class RewardShaper:
    """Min-max normalisation of NDCG changes plus a reward baseline.

    ``step_bounds`` normalise per-step changes (step-wise credit);
    ``total_bounds`` normalise the episode return when it is handed to
    every step (delayed credit).
    """

    step_bounds: Optional[MinMax]
    total_bounds: Optional[MinMax] = None
    baseline: Baseline = field(default_factory=Baseline)

    def shape_reward(self, delta: float) -> float:
        if self.step_bounds is None:
            raise BanditError("reward shaper is not calibrated")
        return self.step_bounds(delta)

    def shape_total(self, delta: float) -> float:
        if self.total_bounds is None:
            raise BanditError("reward shaper has no bounds for episode returns")
        return self.total_bounds(delta)


def shape_reward(shaper: RewardShaper, delta: float) -> float:
    return shaper.shape_reward(delta)


# --------------------------------------------------------------------------
# variance diagnostics


def pooled_variance(R) -> float:
    R = np.asarray(R, dtype=float)
    return float(np.mean((R - R.mean()) ** 2))


@dataclass
class VarianceCheck:
    sigma2: float
    sigma2_adjusted: float
    ok: bool


def variance_check(R, tol: float = 1e-12) -> VarianceCheck:
    """Pooled variance of an episodes x steps reward matrix before and after
    subtracting the per-step (column) means."""
    R = np.atleast_2d(np.asarray(R, dtype=float))
    if R.shape[0] < 1 or R.shape[1] < 1:
        raise BanditError("reward matrix must be at least 1 x 1")
    s2 = pooled_variance(R)
    s2_adj = pooled_variance(R - R.mean(axis=0, keepdims=True))
    return VarianceCheck(s2, s2_adj, s2 >= s2_adj - tol)


def beta_ml(X, r, theta) -> float:
    """Maximum-likelihood noise variance 1/beta: mean squared residual."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    r = np.asarray(r, dtype=float).ravel()
    if len(r) < 2:
        raise BanditError("need at least two samples to estimate the noise precision")
    res = r - X @ np.asarray(theta, dtype=float)
    return float(np.mean(res**2))


def predictive_variance(policy: LinUcbPolicy, x, inv_beta: float) -> float:
    """Noise term plus posterior term x^T S x, with S taken as A^-1."""
    x = np.asarray(x, dtype=float)
    return float(inv_beta + x @ policy.A_inv @ x)
