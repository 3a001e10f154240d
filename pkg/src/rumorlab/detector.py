"""R-GCN rumor detector with hand-written backpropagation.

Layer update for node i (mean aggregation per relation, ReLU):

    h_i' = relu( sum_l mean_{j in N_i^l} h_j W_l + h_i W_0 )

A linear unit plus sigmoid on the last hidden layer gives the rumor
probability of every message. Row-vector convention throughout: hidden
states are rows, weights have shape (in, out).

Outside this module the detector is only reachable through
:class:`BlackBoxDetector`, which answers ranking queries and nothing else.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.sparse import csr_matrix

from .graph import COMMENT, MESSAGE, USER, HeteroGraph, Relation

CHECKPOINT_FORMAT = "rumorlab-rgcn"
CHECKPOINT_VERSION = 1


class DetectorError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# input encoding


@dataclass
class NodeEncoder:
    """Structure-only node input: one-hot kind (4 slots) plus scaled degree.

    Kind slots: message, author user, non-author user, comment. Degree is
    min-max scaled with bounds fitted on the clean graph and clipped to
    [0, 1], so attack edits never shift the encoding of untouched nodes.
    """

    deg_min: float = 0.0
    deg_max: float = 1.0

    dim = 5

    @classmethod
    def fit(cls, g: HeteroGraph) -> "NodeEncoder":
        deg = g.degrees()
        if len(deg) == 0:
            return cls()
        return cls(float(deg.min()), float(deg.max()))

    def encode(self, g: HeteroGraph, nodes: Optional[np.ndarray] = None) -> np.ndarray:
        if nodes is None:
            nodes = np.arange(g.n_nodes)
        X = np.zeros((len(nodes), self.dim))
        code = g.kind_code[nodes]
        author = g.is_author[nodes]
        X[code == MESSAGE, 0] = 1.0
        X[(code == USER) & author, 1] = 1.0
        X[(code == USER) & ~author, 2] = 1.0
        X[code == COMMENT, 3] = 1.0
        span = self.deg_max - self.deg_min
        if span > 0:
            X[:, 4] = np.clip((g.deg[nodes] - self.deg_min) / span, 0.0, 1.0)
        return X


def _normalised(rows: np.ndarray, cols: np.ndarray, n: int) -> csr_matrix:
    deg = np.bincount(rows, minlength=n).astype(float)
    vals = 1.0 / deg[rows] if len(rows) else np.zeros(0)
    return csr_matrix((vals, (rows, cols)), shape=(n, n))


def relation_operators(g: HeteroGraph, nodes: Optional[np.ndarray] = None) -> list[csr_matrix]:
    """Row-normalised adjacency per relation (rows without neighbours are zero).

    With ``nodes`` (a union of whole components, sorted) the operators act
    on that induced subgraph, indexed by position in ``nodes``.
    """
    if nodes is not None:
        index = {int(v): i for i, v in enumerate(nodes)}
        ops = []
        for rel in Relation:
            rows, cols = [], []
            for v in nodes:
                i = index[int(v)]
                for u in g.nbrs[rel][int(v)]:
                    rows.append(i)
                    cols.append(index[u])
            ops.append(_normalised(np.array(rows, dtype=np.int64), np.array(cols, dtype=np.int64), len(nodes)))
        return ops
    n = g.n_nodes
    ops = []
    for rel in Relation:
        a, b = g.edge_arrays(rel)
        rows = np.concatenate([a, b])
        cols = np.concatenate([b, a])
        ops.append(_normalised(rows, cols, n))
    return ops


# --------------------------------------------------------------------------
# model


@dataclass
class RgcnModel:
    w_rel: list[np.ndarray]  # per layer, shape (n_relations, in, out)
    w_self: list[np.ndarray]  # per layer, shape (in, out)
    head_w: np.ndarray  # (hidden,)
    head_b: float = 0.0

    @property
    def n_layers(self) -> int:
        return len(self.w_self)

    @property
    def in_dim(self) -> int:
        return self.w_self[0].shape[0]

    @classmethod
    def init(cls, in_dim: int, hidden: int, n_layers: int, rng: np.random.Generator) -> "RgcnModel":
        w_rel, w_self = [], []
        d_in = in_dim
        for _ in range(n_layers):
            s = np.sqrt(6.0 / (d_in + hidden))
            w_rel.append(rng.uniform(-s, s, size=(len(Relation), d_in, hidden)))
            w_self.append(rng.uniform(-s, s, size=(d_in, hidden)))
            d_in = hidden
        s = np.sqrt(6.0 / (hidden + 1))
        return cls(w_rel, w_self, rng.uniform(-s, s, size=hidden), 0.0)

    @classmethod
    def zeros(cls, in_dim: int, hidden: int, n_layers: int) -> "RgcnModel":
        dims = [in_dim] + [hidden] * n_layers
        return cls(
            [np.zeros((len(Relation), dims[k], dims[k + 1])) for k in range(n_layers)],
            [np.zeros((dims[k], dims[k + 1])) for k in range(n_layers)],
            np.zeros(hidden),
            0.0,
        )

    def copy(self) -> "RgcnModel":
        return RgcnModel(
            [w.copy() for w in self.w_rel],
            [w.copy() for w in self.w_self],
            self.head_w.copy(),
            float(self.head_b),
        )

    def parameters(self) -> list[np.ndarray]:
        """Flat list of weight arrays (views, so in-place updates stick)."""
        return [*self.w_rel, *self.w_self, self.head_w]

    def check_shapes(self) -> None:
        d_in = self.in_dim
        for k, (wr, ws) in enumerate(zip(self.w_rel, self.w_self)):
            if ws.shape[0] != d_in or wr.shape[1:] != ws.shape or wr.shape[0] != len(Relation):
                raise DetectorError(f"layer {k} weight shapes do not chain: {wr.shape}, {ws.shape}")
            d_in = ws.shape[1]
        if self.head_w.shape != (d_in,):
            raise DetectorError(f"head shape {self.head_w.shape} does not match hidden size {d_in}")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def forward_logits(model: RgcnModel, ops: list[csr_matrix], X: np.ndarray, keep: bool = False):
    """Logits for every node; with ``keep`` also returns per-layer caches."""
    if X.shape[1] != model.in_dim:
        raise DetectorError(f"encoding dim {X.shape[1]} != model input dim {model.in_dim}")
    H = X
    caches = []
    for wr, ws in zip(model.w_rel, model.w_self):
        agg = [op @ H for op in ops]
        Z = H @ ws
        for l, a in enumerate(agg):
            Z += a @ wr[l]
        if keep:
            caches.append((H, agg, Z))
        H = np.maximum(Z, 0.0)
    logits = H @ model.head_w + model.head_b
    if not np.all(np.isfinite(logits)):
        raise DetectorError("non-finite activation in forward pass")
    if keep:
        return logits, H, caches
    return logits


def loss_and_grads(
    model: RgcnModel,
    ops: list[csr_matrix],
    X: np.ndarray,
    idx: np.ndarray,
    y: np.ndarray,
) -> tuple[float, RgcnModel]:
    """Mean binary cross-entropy over nodes ``idx`` and its exact gradient."""
    logits, H_last, caches = forward_logits(model, ops, X, keep=True)
    z = logits[idx]
    # stable BCE with logits
    loss = float(np.mean(np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))))
    dz = (_sigmoid(z) - y) / len(idx)

    grads = RgcnModel.zeros(model.in_dim, model.head_w.shape[0], model.n_layers)
    grads.head_b = float(dz.sum())
    grads.head_w = H_last[idx].T @ dz
    dH = np.zeros_like(H_last)
    dH[idx] = np.outer(dz, model.head_w)

    for k in range(model.n_layers - 1, -1, -1):
        H_in, agg, Z = caches[k]
        dZ = dH * (Z > 0)
        grads.w_self[k] = H_in.T @ dZ
        dH = dZ @ model.w_self[k].T
        for l, op in enumerate(ops):
            grads.w_rel[k][l] = agg[l].T @ dZ
            dH += op.T @ (dZ @ model.w_rel[k][l].T)
    return loss, grads


# --------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    epochs: int = 200
    hidden: int = 64
    n_layers: int = 3
    seed: int = 0
    optimizer: str = "gd"  # "gd" (plain full-batch) or "adam"

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning rate must be non-negative")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.optimizer not in ("gd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


def _label_arrays(labels: dict[int, int]) -> tuple[np.ndarray, np.ndarray]:
    if not labels:
        raise DetectorError("no labelled messages to train on")
    idx = np.array(sorted(labels), dtype=np.int64)
    y = np.array([float(labels[i]) for i in idx])
    return idx, y


def train(
    model: RgcnModel,
    g: HeteroGraph,
    enc: NodeEncoder,
    labels: dict[int, int],
    cfg: TrainConfig,
) -> tuple[RgcnModel, list[float]]:
    """Full-batch training on labelled messages; returns a new model and loss per epoch."""
    idx, y = _label_arrays(labels)
    if np.any(g.kind_code[idx] != MESSAGE):
        raise DetectorError("labels may only be attached to message nodes")
    model = model.copy()
    ops = relation_operators(g)
    X = enc.encode(g)
    history = []
    params = model.parameters()
    m1 = [np.zeros_like(p) for p in params] + [0.0]
    m2 = [np.zeros_like(p) for p in params] + [0.0]
    b1, b2, eps = 0.9, 0.999, 1e-8
    for epoch in range(cfg.epochs):
        loss, grads = loss_and_grads(model, ops, X, idx, y)
        if not np.isfinite(loss):
            raise DetectorError(f"training diverged at epoch {epoch} (loss={loss})")
        history.append(loss)
        gparams = grads.parameters() + [grads.head_b]
        if cfg.optimizer == "gd":
            steps = [cfg.learning_rate * gp for gp in gparams]
        else:
            steps = []
            t = epoch + 1
            for i, gp in enumerate(gparams):
                m1[i] = b1 * m1[i] + (1 - b1) * gp
                m2[i] = b2 * m2[i] + (1 - b2) * gp * gp
                mhat = m1[i] / (1 - b1**t)
                vhat = m2[i] / (1 - b2**t)
                steps.append(cfg.learning_rate * mhat / (np.sqrt(vhat) + eps))
        for p, s in zip(params, steps[:-1]):
            p -= s
        model.head_b -= float(steps[-1])
    return model, history


# --------------------------------------------------------------------------
# ranking


@dataclass
class RankingSnapshot:
    """Per-message probability and rank (1 = most suspicious).

    Ties in probability break by ascending node id. ``message_ids`` is
    sorted ascending; ``prob`` and ``rank`` are aligned with it.
    """

    message_ids: np.ndarray
    prob: np.ndarray
    rank: np.ndarray
    step: int = 0
    _pos: np.ndarray = field(default=None, repr=False)

    @classmethod
    def from_probabilities(cls, message_ids, prob, n_nodes: Optional[int] = None, step: int = 0) -> "RankingSnapshot":
        ids = np.asarray(message_ids, dtype=np.int64)
        p = np.asarray(prob, dtype=float)
        order = np.argsort(ids, kind="stable")
        ids, p = ids[order], p[order]
        by_rank = np.lexsort((ids, -p))
        rank = np.empty(len(ids), dtype=np.int64)
        rank[by_rank] = np.arange(1, len(ids) + 1)
        size = int(n_nodes if n_nodes is not None else (ids.max() + 1 if len(ids) else 0))
        pos = np.full(size, -1, dtype=np.int64)
        pos[ids] = np.arange(len(ids))
        return cls(ids, p, rank, step, pos)

    def __len__(self) -> int:
        return len(self.message_ids)

    def _index(self, v: int) -> int:
        if not 0 <= v < len(self._pos) or self._pos[v] < 0:
            raise KeyError(f"node {v} is not a ranked message")
        return int(self._pos[v])

    def rank_of(self, v: int) -> int:
        return int(self.rank[self._index(v)])

    def prob_of(self, v: int) -> float:
        return float(self.prob[self._index(v)])

    def ranks_of(self, nodes) -> np.ndarray:
        nodes = np.asarray(nodes, dtype=np.int64)
        if np.any((nodes < 0) | (nodes >= len(self._pos))):
            raise KeyError("some nodes are outside the ranked universe")
        idx = self._pos[nodes]
        if np.any(idx < 0):
            raise KeyError("some nodes are not ranked messages")
        return self.rank[idx]

    def probs_of(self, nodes) -> np.ndarray:
        nodes = np.asarray(nodes, dtype=np.int64)
        if np.any((nodes < 0) | (nodes >= len(self._pos))):
            raise KeyError("some nodes are outside the ranked universe")
        idx = self._pos[nodes]
        if np.any(idx < 0):
            raise KeyError("some nodes are not ranked messages")
        return self.prob[idx]

    def prob_array(self, n_nodes: int) -> np.ndarray:
        """Dense per-node probability, NaN for non-messages."""
        out = np.full(n_nodes, np.nan)
        out[self.message_ids] = self.prob
        return out


def rgcn_forward(model: RgcnModel, g: HeteroGraph, enc: NodeEncoder) -> dict[int, float]:
    logits = forward_logits(model, relation_operators(g), enc.encode(g))
    msgs = g.nodes_of_kind(MESSAGE)
    p = _sigmoid(logits[msgs])
    return {int(m): float(q) for m, q in zip(msgs, p)}


def message_probabilities(model: RgcnModel, g: HeteroGraph, enc: NodeEncoder) -> tuple[np.ndarray, np.ndarray]:
    logits = forward_logits(model, relation_operators(g), enc.encode(g))
    msgs = g.nodes_of_kind(MESSAGE)
    return msgs, _sigmoid(logits[msgs])


def component_probabilities(
    model: RgcnModel, g: HeteroGraph, enc: NodeEncoder, nodes
) -> tuple[np.ndarray, np.ndarray]:
    """Message probabilities inside a union of whole components.

    Propagation never crosses component boundaries, so this equals the
    full-graph forward pass restricted to ``nodes``.
    """
    nodes = np.unique(np.asarray(nodes, dtype=np.int64))
    logits = forward_logits(model, relation_operators(g, nodes), enc.encode(g, nodes))
    is_msg = g.kind_code[nodes] == MESSAGE
    return nodes[is_msg], _sigmoid(logits[is_msg])


def snapshot(model: RgcnModel, g: HeteroGraph, enc: NodeEncoder, step: int = 0) -> RankingSnapshot:
    msgs, p = message_probabilities(model, g, enc)
    return RankingSnapshot.from_probabilities(msgs, p, g.n_nodes, step)


@dataclass
class DetectorReport:
    accuracy: float
    recall: float
    ndcg: float


def evaluate(
    model: RgcnModel,
    g: HeteroGraph,
    enc: NodeEncoder,
    labels: dict[int, int],
    weights: dict[int, float],
    cutoff: Optional[int] = None,
) -> DetectorReport:
    """Accuracy and recall at threshold 0.5, plus NDCG with every rumor in
    ``labels`` as a target (weights taken from ``weights``)."""
    from .objective import TargetSet, ndcg

    if not labels:
        raise DetectorError("empty evaluation split")
    snap = snapshot(model, g, enc)
    idx = np.array(sorted(labels), dtype=np.int64)
    y = np.array([labels[i] for i in idx])
    pred = (snap.probs_of(idx) >= 0.5).astype(int)
    acc = float(np.mean(pred == y))
    pos = y == 1
    recall = float(np.mean(pred[pos] == 1)) if pos.any() else 0.0
    rumors = [int(i) for i in idx[pos]]
    score = 0.0
    if rumors:
        ts = TargetSet.build(rumors, [weights.get(r, 0.0) for r in rumors], n_ranked=len(snap), cutoff=cutoff)
        if ts.normalizer > 0:
            score = ndcg(ts, snap)
    return DetectorReport(acc, recall, score)


# --------------------------------------------------------------------------
# black-box handle


class BlackBoxDetector:
    """Query-only view of a trained detector.

    The attack side receives one of these; it can ask for a ranking of the
    current graph but has no attribute path to the weights.
    """

    __slots__ = ("_query", "_local", "queries")

    def __init__(self, model: RgcnModel, enc: NodeEncoder):
        frozen = model.copy()

        def query(g: HeteroGraph, step: int = 0) -> RankingSnapshot:
            return snapshot(frozen, g, enc, step)

        def local(g: HeteroGraph, nodes) -> tuple[np.ndarray, np.ndarray]:
            return component_probabilities(frozen, g, enc, nodes)

        self._query = query
        self._local = local
        self.queries = 0

    def snapshot(self, g: HeteroGraph, step: int = 0) -> RankingSnapshot:
        self.queries += 1
        return self._query(g, step)

    def probabilities(self, g: HeteroGraph, nodes) -> tuple[np.ndarray, np.ndarray]:
        """Probabilities of the messages among ``nodes`` (whole components)."""
        self.queries += 1
        return self._local(g, nodes)


# --------------------------------------------------------------------------
# checkpoints


def _pack(a: np.ndarray) -> dict:
    return {"shape": list(a.shape), "data": [float(x) for x in a.ravel(order="C")]}


def _unpack(d: dict) -> np.ndarray:
    return np.array(d["data"], dtype=float).reshape(d["shape"], order="C")


def save_model(model: RgcnModel, enc: NodeEncoder, path) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "encoder": {"deg_min": enc.deg_min, "deg_max": enc.deg_max},
        "layers": [{"w_rel": _pack(wr), "w_self": _pack(ws)} for wr, ws in zip(model.w_rel, model.w_self)],
        "head_w": _pack(model.head_w),
        "head_b": float(model.head_b),
    }
    Path(path).write_text(json.dumps(doc))


def load_model(path) -> tuple[RgcnModel, NodeEncoder]:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
        raise DetectorError(f"{path}: not a version-{CHECKPOINT_VERSION} detector checkpoint")
    model = RgcnModel(
        [_unpack(layer["w_rel"]) for layer in doc["layers"]],
        [_unpack(layer["w_self"]) for layer in doc["layers"]],
        _unpack(doc["head_w"]),
        float(doc["head_b"]),
    )
    model.check_shapes()
    enc = NodeEncoder(float(doc["encoder"]["deg_min"]), float(doc["encoder"]["deg_max"]))
    return model, enc
