"""Dataset files, the synthetic social-graph generator and attack splits."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .graph import (
    MESSAGE,
    USER,
    Comment,
    GraphError,
    HeteroGraph,
    Message,
    Relation,
    User,
    build_graph,
)

DATASET_FORMAT = "rumorlab-dataset"


class DatasetError(ValueError):
    pass


@dataclass
class DatasetSpec:
    """Node records, edge records and the train/test message split.

    Node record: ``{"id", "kind": message|user|comment, "label"?, "is_author"?}``
    where ``label`` is 1 (rumor), 0 (non-rumor) or null. Edge record:
    ``{"src", "dst", "relation": L1|L2|L3}``.
    """

    nodes: list[dict]
    edges: list[dict]
    split: dict[str, list[int]] = field(default_factory=lambda: {"train": [], "test": []})
    meta: dict = field(default_factory=dict)

    def to_graph(self) -> HeteroGraph:
        if not self.nodes:
            raise DatasetError("no nodes")
        kinds = []
        for i, rec in enumerate(self.nodes):
            if rec.get("id") != i:
                raise DatasetError(f"node record {i}: field 'id' must equal its position ({rec.get('id')!r})")
            kind = rec.get("kind")
            if kind == "message":
                label = rec.get("label")
                if label not in (0, 1, None):
                    raise DatasetError(f"node record {i}: field 'label' must be 0, 1 or null")
                kinds.append((i, Message(None if label is None else bool(label))))
            elif kind == "user":
                kinds.append((i, User(bool(rec.get("is_author", False)))))
            elif kind == "comment":
                kinds.append((i, Comment()))
            else:
                raise DatasetError(f"node record {i}: field 'kind' has unknown value {kind!r}")
        edges = []
        for j, rec in enumerate(self.edges):
            try:
                edges.append((int(rec["src"]), int(rec["dst"]), Relation[rec["relation"]]))
            except (KeyError, TypeError, ValueError) as e:
                raise DatasetError(f"edge record {j}: bad or missing field ({e})") from None
        try:
            g = build_graph(kinds, edges)
        except GraphError as e:
            raise DatasetError(str(e)) from None
        for part, ids in self.split.items():
            for v in ids:
                if not 0 <= v < len(self.nodes) or self.nodes[v].get("kind") != "message":
                    raise DatasetError(f"split '{part}' lists non-message node {v}")
        return g

    def labels(self, part: Optional[str] = None) -> dict[int, int]:
        ids = self.split[part] if part else [r["id"] for r in self.nodes if r.get("kind") == "message"]
        out = {}
        for v in ids:
            lab = self.nodes[v].get("label")
            if lab is not None:
                out[int(v)] = int(lab)
        return out

    def save(self, path) -> None:
        doc = {"format": DATASET_FORMAT, "nodes": self.nodes, "edges": self.edges, "split": self.split, "meta": self.meta}
        Path(path).write_text(json.dumps(doc, indent=0))

    @classmethod
    def from_dict(cls, doc: dict) -> "DatasetSpec":
        for key in ("nodes", "edges"):
            if key not in doc:
                raise DatasetError(f"missing top-level field '{key}'")
        split = doc.get("split") or {"train": [], "test": []}
        return cls(list(doc["nodes"]), list(doc["edges"]), {k: list(v) for k, v in split.items()}, dict(doc.get("meta", {})))


def graph_summary(g: HeteroGraph) -> dict:
    return {"nodes": g.n_nodes, "edges": g.n_edges, "components": g.n_components}


def load_dataset(path) -> tuple[DatasetSpec, HeteroGraph]:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise DatasetError(f"{path}: cannot read dataset ({e})") from None
    spec = DatasetSpec.from_dict(doc)
    return spec, spec.to_graph()


def dataset_from_graph(g: HeteroGraph, split: Optional[dict] = None, meta: Optional[dict] = None) -> DatasetSpec:
    nodes = []
    for i in range(g.n_nodes):
        code = int(g.kind_code[i])
        if code == MESSAGE:
            lab = int(g.rumor_label[i])
            nodes.append({"id": i, "kind": "message", "label": None if lab < 0 else lab})
        elif code == USER:
            nodes.append({"id": i, "kind": "user", "is_author": bool(g.is_author[i])})
        else:
            nodes.append({"id": i, "kind": "comment"})
    edges = [{"src": a, "dst": b, "relation": Relation(r).name} for (a, b), r in sorted(g.edges.items())]
    return DatasetSpec(nodes, edges, split or {"train": [], "test": []}, meta or {})


# --------------------------------------------------------------------------
# synthetic generator


@dataclass
class SyntheticSpec:
    """Target statistics for a generated dataset.

    Each community is a connected cascade cluster seeded by one or more
    authors. Rumor messages cluster on "bad" authors and draw more
    re-posters, comments and co-re-post links, which gives a structure-only
    detector something to learn.
    """

    n_components: int = 239
    n_rumors: int = 154
    n_nonrumors: int = 185
    n_authors: int = 244
    n_retweeters: int = 442
    n_comments: int = 4
    n_edges: int = 1641
    bad_author_fraction: float = 0.4
    rumor_affinity: float = 6.0  # odds multiplier for messages of bad authors
    rumor_cascade_weight: float = 2.5  # relative re-post attraction of rumors
    train_ratio: float = 0.7
    seed: int = 0

    @property
    def n_messages(self) -> int:
        return self.n_rumors + self.n_nonrumors

    @property
    def n_nodes(self) -> int:
        return self.n_messages + self.n_authors + self.n_retweeters + self.n_comments


# full-size dataset statistics (nodes/edges/components and node mix)
TABLE_STATS = {
    "weibo": dict(n_components=2392, n_edges=16412, n_rumors=1538, n_nonrumors=1849, n_authors=2440, n_retweeters=4415, n_comments=38),
    "twitter": dict(n_components=467, n_edges=7206, n_rumors=981, n_nonrumors=1158, n_authors=992, n_retweeters=82, n_comments=0),
    "pheme": dict(n_components=2450, n_edges=14737, n_rumors=1972, n_nonrumors=3830, n_authors=2837, n_retweeters=1496, n_comments=1815),
}


def scaled_spec(name: str, scale: float, seed: int = 0, **overrides) -> SyntheticSpec:
    if scale <= 0:
        raise DatasetError("scale factor must be positive")
    base = TABLE_STATS[name]
    counts = {k: max(0, int(round(v * scale))) for k, v in base.items()}
    counts["n_components"] = max(1, counts["n_components"])
    counts["n_authors"] = max(counts["n_authors"], counts["n_components"])
    counts.update(overrides)
    return SyntheticSpec(seed=seed, **counts)


PRESETS = {"weibo-mini": lambda seed=0: scaled_spec("weibo", 0.1, seed)}


def preset(name: str, seed: int = 0) -> SyntheticSpec:
    try:
        return PRESETS[name](seed)
    except KeyError:
        raise DatasetError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


def spec_for_totals(n_nodes: int, n_components: int, n_edges: Optional[int] = None, seed: int = 0) -> SyntheticSpec:
    """Weibo node mix rescaled to the requested node and component counts."""
    base = TABLE_STATS["weibo"]
    total = sum(base[k] for k in ("n_rumors", "n_nonrumors", "n_authors", "n_retweeters", "n_comments"))
    s = n_nodes / total
    counts = {k: int(round(base[k] * s)) for k in ("n_rumors", "n_nonrumors", "n_retweeters", "n_comments")}
    counts["n_authors"] = n_nodes - sum(counts.values())
    counts["n_components"] = n_components
    counts["n_edges"] = int(round(base["n_edges"] * s)) if n_edges is None else n_edges
    return SyntheticSpec(seed=seed, **counts)


def _weighted_pick(rng: np.random.Generator, weights: np.ndarray, k: int) -> np.ndarray:
    """k distinct indices, sampled without replacement proportionally to weights."""
    keys = rng.random(len(weights)) ** (1.0 / np.maximum(weights, 1e-12))
    return np.argsort(-keys, kind="stable")[:k]


def generate_synthetic(spec: SyntheticSpec) -> DatasetSpec:
    rng = np.random.default_rng(spec.seed)
    n_msg = spec.n_messages
    if spec.n_components < 1:
        raise DatasetError("need at least one component")
    if spec.n_authors < spec.n_components:
        raise DatasetError("every component needs an author: n_authors must be >= n_components")
    if n_msg < spec.n_authors:
        raise DatasetError("every author posts at least one message: need n_messages >= n_authors")
    min_edges = spec.n_nodes - spec.n_components
    if spec.n_edges < min_edges:
        raise DatasetError(f"infeasible: {spec.n_edges} edges cannot connect {spec.n_nodes} nodes into {spec.n_components} components")

    # node ids: messages, authors, retweeters, comments
    msg_ids = np.arange(n_msg)
    author_ids = n_msg + np.arange(spec.n_authors)
    rt_ids = n_msg + spec.n_authors + np.arange(spec.n_retweeters)
    cm_ids = n_msg + spec.n_authors + spec.n_retweeters + np.arange(spec.n_comments)

    # authors -> components (one each, the rest preferential)
    comp_of_author = np.empty(spec.n_authors, dtype=np.int64)
    perm = rng.permutation(spec.n_authors)
    comp_of_author[perm[: spec.n_components]] = np.arange(spec.n_components)
    comp_size = np.ones(spec.n_components)
    for a in perm[spec.n_components:]:
        c = rng.choice(spec.n_components, p=comp_size / comp_size.sum())
        comp_of_author[a] = c
        comp_size[c] += 1

    # messages -> authors (one each, extra ones favour already-active authors)
    author_of_msg = np.empty(n_msg, dtype=np.int64)
    perm = rng.permutation(n_msg)
    author_of_msg[perm[: spec.n_authors]] = rng.permutation(spec.n_authors)
    posts = np.ones(spec.n_authors)
    for m in perm[spec.n_authors:]:
        a = rng.choice(spec.n_authors, p=posts / posts.sum())
        author_of_msg[m] = a
        posts[a] += 1

    # labels: rumors concentrate on bad authors
    bad = rng.random(spec.n_authors) < spec.bad_author_fraction
    w = np.where(bad[author_of_msg], spec.rumor_affinity, 1.0)
    is_rumor = np.zeros(n_msg, dtype=bool)
    is_rumor[_weighted_pick(rng, w, spec.n_rumors)] = True

    edges: set[tuple[int, int]] = set()
    rel_of: dict[tuple[int, int], str] = {}

    def link(a: int, b: int, rel: str) -> bool:
        key = (min(a, b), max(a, b))
        if a == b or key in edges:
            return False
        edges.add(key)
        rel_of[key] = rel
        return True

    for m in msg_ids:
        link(int(author_ids[author_of_msg[m]]), int(m), "L1")

    # keep multi-author components connected: chain authors by L3
    for c in range(spec.n_components):
        members = author_ids[comp_of_author == c]
        for a, b in zip(members[:-1], members[1:]):
            link(int(a), int(b), "L3")

    # re-posters: each joins one cascade (L1 to the message, L3 to its author)
    cascade_w = np.where(is_rumor, spec.rumor_cascade_weight, 1.0)
    msg_of_rt = rng.choice(n_msg, size=spec.n_retweeters, p=cascade_w / cascade_w.sum())
    for r, m in zip(rt_ids, msg_of_rt):
        link(int(r), int(m), "L1")
        link(int(r), int(author_ids[author_of_msg[m]]), "L3")

    cm_w = np.where(is_rumor, 3.0, 1.0)
    for c, m in zip(cm_ids, rng.choice(n_msg, size=spec.n_comments, p=cm_w / cm_w.sum())):
        link(int(m), int(c), "L2")

    # densify inside communities until the edge target is met
    comp_of_msg = comp_of_author[author_of_msg]
    rts_of_msg: dict[int, list[int]] = {}
    for r, m in zip(rt_ids, msg_of_rt):
        rts_of_msg.setdefault(int(m), []).append(int(r))
    msgs_of_comp: dict[int, list[int]] = {}
    for m in msg_ids:
        msgs_of_comp.setdefault(int(comp_of_msg[m]), []).append(int(m))
    candidates = []
    for m, rts in rts_of_msg.items():
        wt = spec.rumor_cascade_weight if is_rumor[m] else 1.0
        for i, a in enumerate(rts):
            for b in rts[i + 1:]:
                candidates.append((a, b, "L3", wt))  # co-re-posters of one message
    for r, m in zip(rt_ids, msg_of_rt):
        for m2 in msgs_of_comp[int(comp_of_msg[m])]:
            if m2 != m and not is_rumor[m2]:
                candidates.append((int(r), m2, "L1", 1.0))  # ordinary users re-post several messages
    need = spec.n_edges - len(edges)
    if need > 0 and candidates:
        cw = np.array([c[3] for c in candidates])
        for i in _weighted_pick(rng, cw, len(candidates)):
            if need <= 0:
                break
            a, b, rel, _ = candidates[i]
            if link(a, b, rel):
                need -= 1
    if need > 0:
        # fall back to arbitrary user-user links inside a community
        users_of_comp: dict[int, list[int]] = {}
        for a in range(spec.n_authors):
            users_of_comp.setdefault(int(comp_of_author[a]), []).append(int(author_ids[a]))
        for r, m in zip(rt_ids, msg_of_rt):
            users_of_comp[int(comp_of_msg[m])].append(int(r))
        pools = [u for u in users_of_comp.values() if len(u) > 2]
        tries = 0
        while need > 0 and pools and tries < 50 * spec.n_edges:
            tries += 1
            pool = pools[rng.integers(len(pools))]
            a, b = rng.choice(pool, size=2, replace=False)
            if link(int(a), int(b), "L3"):
                need -= 1

    nodes = []
    for m in msg_ids:
        nodes.append({"id": int(m), "kind": "message", "label": int(is_rumor[m])})
    for a in author_ids:
        nodes.append({"id": int(a), "kind": "user", "is_author": True})
    for r in rt_ids:
        nodes.append({"id": int(r), "kind": "user", "is_author": False})
    for c in cm_ids:
        nodes.append({"id": int(c), "kind": "comment"})
    edge_recs = [{"src": a, "dst": b, "relation": rel_of[(a, b)]} for a, b in sorted(edges)]

    order = rng.permutation(n_msg)
    n_train = int(round(spec.train_ratio * n_msg))
    split = {"train": sorted(int(m) for m in order[:n_train]), "test": sorted(int(m) for m in order[n_train:])}
    meta = {"generator": asdict(spec)}
    return DatasetSpec(nodes, edge_recs, split, meta)


# --------------------------------------------------------------------------
# split and controllable set


@dataclass
class AttackSetup:
    train: list[int]
    test: list[int]
    controllable_users: list[int]
    controllable_messages: list[int]
    targets: list[int]

    @property
    def controllable(self) -> set[int]:
        return set(self.controllable_users) | set(self.controllable_messages)


def authors_of(g: HeteroGraph, m: int) -> list[int]:
    return sorted(u for u in g.nbrs[Relation.L1][m] if g.is_author[u])


def message_split(messages, ratio: float, rng: np.random.Generator) -> tuple[list[int], list[int]]:
    order = rng.permutation(np.asarray(messages, dtype=np.int64))
    n_train = int(round(ratio * len(order)))
    return sorted(order[:n_train].tolist()), sorted(order[n_train:].tolist())


def split_and_controllables(
    spec: DatasetSpec,
    g: HeteroGraph,
    ratio: float = 0.7,
    fraction: float = 0.2,
    seed: int = 0,
    use_file_split: bool = True,
) -> AttackSetup:
    """Train/test split plus the attacker's controllable accounts and targets.

    A ``fraction`` of the authors of training messages is sampled; they and
    their training messages form the controllable set, and the rumors among
    those messages are the targets.
    """
    if not 0 < fraction <= 1:
        raise DatasetError("controllable fraction must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    if use_file_split and spec.split.get("train"):
        train, test = sorted(spec.split["train"]), sorted(spec.split.get("test", []))
    else:
        train, test = message_split(g.nodes_of_kind(MESSAGE), ratio, rng)
    train_set = set(train)
    authored: dict[int, list[int]] = {}
    for m in train:
        for a in authors_of(g, m):
            authored.setdefault(a, []).append(m)
    pool = sorted(authored)
    if not pool:
        raise DatasetError("no authors in the training split")
    k = max(1, int(round(fraction * len(pool))))
    chosen = sorted(int(a) for a in rng.choice(pool, size=k, replace=False))
    messages = sorted({m for a in chosen for m in authored[a]})
    targets = [m for m in messages if m in train_set and g.rumor_label[m] == 1]
    if not targets:
        raise DatasetError("no target rumors among the controllable messages; raise the fraction or use a larger dataset")
    return AttackSetup(train, test, chosen, messages, targets)
