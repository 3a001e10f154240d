"""Interpretable state-action features at subgraph and node level.

Every extractor returns a raw vector in a fixed slot order; a
:class:`FeatureBounds` fitted on the clean graph maps count-like slots into
[0, 1] (ratios and probabilities are already there and pass through).
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .graph import COMMENT, MESSAGE, USER, HeteroGraph, bfs_distances, clustering_coefficient

_STATS = ("avg", "max", "min")


def _triple(prefix: str, suffix: str) -> list[str]:
    return [f"{s}_{suffix}" if not prefix else f"{s}_{prefix}_{suffix}" for s in _STATS]


SUBGRAPH_SLOTS: list[str] = [
    "n_nodes",
    "n_edges",
    "clustering_coefficient",
    *_triple("", "degree"),
    "message_ratio",
    "author_ratio",
    "re_tweeter_ratio",
    "review_ratio",
    "bad_author_ratio",
    "rumor_ratio",
    "rumor_retweet_ratio",
    "rumor_review_ratio",
    *_triple("author", "inf"),
    *_triple("user", "inf"),
    *_triple("rumor", "inf"),
    *_triple("nonrumor", "inf"),
    *_triple("target", "suspicious"),
    "attack_degree",
    *_triple("rhm", "suspicious"),
]

NODE_SLOTS: list[str] = [
    "degree",
    "ego_n_edges",
    "good_bad",
    "type_rumor",
    "type_nonrumor",
    "type_good_author",
    "type_bad_author",
    "ego_rumor_ratio",
    "ego_bu_ratio",
    "ego_review_ratio",
    "node_inf",
    "ego_user_inf",
    "ego_message_inf",
    *_triple("node", "potential"),
    *_triple("neighbor", "suspicious"),
    *_triple("node_attack", "degree"),
    "n_targets",
    "n_targets_distance",
    *_triple("rhm", "suspicious"),
]

# slots whose natural range is not [0, 1] and therefore get min-max scaled
SUBGRAPH_SCALED = frozenset(
    ["n_nodes", "n_edges", *_triple("", "degree")]
    + [n for n in SUBGRAPH_SLOTS if n.endswith("_inf")]
)
NODE_SCALED = frozenset(["degree", "ego_n_edges", "node_inf", "ego_user_inf", "ego_message_inf", "n_targets"])

SUBGRAPH_INDEX = {n: i for i, n in enumerate(SUBGRAPH_SLOTS)}
NODE_INDEX = {n: i for i, n in enumerate(NODE_SLOTS)}


def pair_slot_names(level: str) -> list[str]:
    """Slot names of a concatenated pair vector, e.g. ``G_i n_nodes``."""
    if level == "subgraph":
        a, b, slots = "G_i", "G_j", SUBGRAPH_SLOTS
    elif level == "node":
        a, b, slots = "v_p", "v_q", NODE_SLOTS
    else:
        raise ValueError(f"unknown level {level!r}")
    return [f"{a} {s}" for s in slots] + [f"{b} {s}" for s in slots]


def schema_hash() -> str:
    doc = "subgraph:" + ",".join(SUBGRAPH_SLOTS) + "|node:" + ",".join(NODE_SLOTS)
    return hashlib.sha256(doc.encode()).hexdigest()


def schema_document() -> dict:
    return {
        "hash": schema_hash(),
        "subgraph": [{"index": i, "name": n, "scaled": n in SUBGRAPH_SCALED} for i, n in enumerate(SUBGRAPH_SLOTS)],
        "node": [{"index": i, "name": n, "scaled": n in NODE_SCALED} for i, n in enumerate(NODE_SLOTS)],
        "subgraph_pair": pair_slot_names("subgraph"),
        "node_pair": pair_slot_names("node"),
    }


def _stats(values: np.ndarray) -> tuple[float, float, float]:
    if len(values) == 0:
        return 0.0, 0.0, 0.0
    return float(values.mean()), float(values.max()), float(values.min())


@dataclass
class FeatureContext:
    """Per-node arrays the extractors read. Owned and refreshed by the environment.

    ``prob`` holds the detector's current rumor probability (NaN for
    non-messages); ``influence`` user PageRank or message influence.
    """

    prob: np.ndarray
    influence: np.ndarray
    target: np.ndarray
    rhm: np.ndarray
    rumor: np.ndarray
    nonrumor: np.ndarray
    bad_author: np.ndarray
    node_attack: np.ndarray
    horizon: int
    attack_edges: list[tuple[int, int]] = field(default_factory=list)

    @classmethod
    def build(
        cls,
        g: HeteroGraph,
        prob: np.ndarray,
        influence: np.ndarray,
        targets: Iterable[int],
        bad_authors: Iterable[int],
        horizon: int,
        rhm_all_messages: bool = False,
    ) -> "FeatureContext":
        n = g.n_nodes
        target = np.zeros(n, dtype=bool)
        target[list(targets)] = True
        is_msg = g.kind_code == MESSAGE
        rumor = is_msg & (g.rumor_label == 1)
        nonrumor = is_msg & (g.rumor_label == 0)
        rhm = (is_msg if rhm_all_messages else rumor) & ~target
        bad = np.zeros(n, dtype=bool)
        bad[list(bad_authors)] = True
        return cls(prob, influence, target, rhm, rumor, nonrumor, bad, np.zeros(n, dtype=np.int64), max(horizon, 1))

    def copy(self) -> "FeatureContext":
        return FeatureContext(
            self.prob.copy(), self.influence.copy(), self.target, self.rhm, self.rumor, self.nonrumor,
            self.bad_author, self.node_attack.copy(), self.horizon, list(self.attack_edges),
        )

    def component_attack_edges(self, g: HeteroGraph, root: int) -> int:
        r = g.component_of(root)
        return sum(1 for u, _ in self.attack_edges if g.component_of(u) == r)


def raw_subgraph_features(g: HeteroGraph, root: int, ctx: FeatureContext) -> np.ndarray:
    nodes = np.array(g.component_members(root), dtype=np.int64)
    code = g.kind_code[nodes]
    n = len(nodes)
    deg = np.array([g.degree(int(v)) for v in nodes], dtype=float)
    is_msg = code == MESSAGE
    is_author = (code == USER) & g.is_author[nodes]
    is_rt = (code == USER) & ~g.is_author[nodes]
    is_cm = code == COMMENT
    rumor = ctx.rumor[nodes]
    nonrumor = ctx.nonrumor[nodes]
    n_msg, n_auth, n_rt, n_cm = is_msg.sum(), is_author.sum(), is_rt.sum(), is_cm.sum()

    rumor_set = ctx.rumor
    rt_nodes = nodes[is_rt]
    cm_nodes = nodes[is_cm]
    rt_on_rumor = sum(1 for v in rt_nodes if any(rumor_set[u] for u in g.neighbors(int(v))))
    cm_on_rumor = sum(1 for v in cm_nodes if any(rumor_set[u] for u in g.neighbors(int(v))))

    infl = ctx.influence[nodes]
    prob = ctx.prob[nodes]
    out = [
        n,
        g.component_edge_count(root),
        clustering_coefficient(g, nodes.tolist()),
        *_stats(deg),
        n_msg / n,
        n_auth / n,
        n_rt / n,
        n_cm / n,
        ctx.bad_author[nodes][is_author].sum() / n_auth if n_auth else 0.0,
        rumor.sum() / n_msg if n_msg else 0.0,
        rt_on_rumor / n_rt if n_rt else 0.0,
        cm_on_rumor / n_cm if n_cm else 0.0,
        *_stats(infl[is_author]),
        *_stats(infl[code == USER]),
        *_stats(infl[rumor]),
        *_stats(infl[nonrumor]),
        *_stats(prob[ctx.target[nodes]]),
        ctx.component_attack_edges(g, root) / ctx.horizon,
        *_stats(prob[ctx.rhm[nodes]]),
    ]
    return np.array(out, dtype=float)


def raw_node_features(g: HeteroGraph, v: int, ctx: FeatureContext, k: int = 3) -> np.ndarray:
    dist = bfs_distances(g, v, k)
    hop_nodes = np.fromiter(dist.keys(), dtype=np.int64, count=len(dist))
    hop_dist = np.fromiter(dist.values(), dtype=np.int64, count=len(dist))
    ego = hop_nodes[hop_dist <= 1]
    ego_set = set(ego.tolist())
    ego_edges = 0
    for u in ego_set:
        ego_edges += sum(1 for w in g.neighbors(u) if w in ego_set)
    ego_edges //= 2

    code = int(g.kind_code[v])
    is_rumor = bool(ctx.rumor[v])
    is_bad = bool(ctx.bad_author[v])
    one_hot = [
        float(code == MESSAGE and is_rumor),
        float(code == MESSAGE and bool(ctx.nonrumor[v])),
        float(code == USER and not is_bad),
        float(code == USER and is_bad),
    ]
    ego_code = g.kind_code[ego]
    ego_infl = ctx.influence[ego]
    ego_users = ego_infl[ego_code == USER]
    ego_msgs = ego_infl[ego_code == MESSAGE]

    t_mask = ctx.target[hop_nodes]
    near = hop_nodes[t_mask & (hop_dist <= 1)]
    far = hop_nodes[t_mask]
    far_dist = hop_dist[t_mask]
    rhm = hop_nodes[ctx.rhm[hop_nodes]]

    out = [
        g.degree(v),
        ego_edges,
        float(is_rumor or is_bad),
        *one_hot,
        ctx.rumor[ego].sum() / len(ego),
        ctx.bad_author[ego].sum() / len(ego),
        (ego_code == COMMENT).sum() / len(ego),
        ctx.influence[v],
        float(ego_users.mean()) if len(ego_users) else 0.0,
        float(ego_msgs.mean()) if len(ego_msgs) else 0.0,
        *_stats(ctx.prob[near]),
        *_stats(ctx.prob[far]),
        *_stats(ctx.node_attack[ego] / ctx.horizon),
        len(far),
        float(far_dist.mean()) / k if len(far) else 1.0,
        *_stats(ctx.prob[rhm]),
    ]
    return np.array(out, dtype=float)


@dataclass
class FeatureBounds:
    """Clean-graph (min, max) per slot; unscaled slots carry (0, 1)."""

    lo: np.ndarray
    hi: np.ndarray
    scaled: np.ndarray  # bool per slot

    @property
    def constant(self) -> np.ndarray:
        return self.scaled & (self.hi <= self.lo)

    def normalize(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        span = self.hi - self.lo
        safe = np.where(span > 0, span, 1.0)
        scaled = np.where(span > 0, (x - self.lo) / safe, 0.0)
        return np.clip(np.where(self.scaled, scaled, x), 0.0, 1.0)

    def denormalize(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return np.where(self.scaled, self.lo + y * (self.hi - self.lo), y)

    @classmethod
    def from_rows(cls, rows: np.ndarray, scaled: np.ndarray) -> "FeatureBounds":
        rows = np.atleast_2d(rows)
        lo = np.where(scaled, rows.min(axis=0), 0.0)
        hi = np.where(scaled, rows.max(axis=0), 1.0)
        return cls(lo, hi, scaled.copy())


def _scaled_mask(slots: list[str], scaled: frozenset) -> np.ndarray:
    return np.array([s in scaled for s in slots], dtype=bool)


@dataclass
class BoundsPair:
    subgraph: FeatureBounds
    node: FeatureBounds


def fit_bounds(g_clean: HeteroGraph, ctx_clean: FeatureContext, k: int = 3, nodes: Optional[Iterable[int]] = None) -> BoundsPair:
    """Per-slot bounds over every component and every node (or ``nodes``) of the clean graph."""
    sub_rows = np.array([raw_subgraph_features(g_clean, r, ctx_clean) for r in g_clean.component_roots()])
    node_ids = range(g_clean.n_nodes) if nodes is None else nodes
    node_rows = np.array([raw_node_features(g_clean, int(v), ctx_clean, k) for v in node_ids])
    return BoundsPair(
        FeatureBounds.from_rows(sub_rows, _scaled_mask(SUBGRAPH_SLOTS, SUBGRAPH_SCALED)),
        FeatureBounds.from_rows(node_rows, _scaled_mask(NODE_SLOTS, NODE_SCALED)),
    )


def subgraph_features(g: HeteroGraph, root: int, ctx: FeatureContext, bounds: BoundsPair) -> np.ndarray:
    return bounds.subgraph.normalize(raw_subgraph_features(g, root, ctx))


def node_features(g: HeteroGraph, v: int, ctx: FeatureContext, bounds: BoundsPair, k: int = 3) -> np.ndarray:
    return bounds.node.normalize(raw_node_features(g, v, ctx, k))


def pair_vector(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"pair halves differ in schema: {a.shape} vs {b.shape}")
    return np.concatenate([a, b])
