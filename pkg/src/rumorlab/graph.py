"""Heterogeneous social graph: users, messages and comments.

Nodes are dense integer ids. Edges are undirected and typed by relation;
the relation is fully determined by the endpoint kinds, so a node pair can
carry at most one edge. Connected components ("subgraphs") are tracked
incrementally with a union-find, since the attack only ever adds edges.
"""
from __future__ import annotations

import hashlib
from collections import deque
from dataclasses import dataclass
from enum import IntEnum
from typing import Iterable, Optional, Union

import numpy as np
from scipy.sparse import csr_matrix


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class Message:
    is_rumor: Optional[bool] = None


@dataclass(frozen=True)
class User:
    is_author: bool = False


@dataclass(frozen=True)
class Comment:
    pass


NodeKind = Union[Message, User, Comment]

# integer codes used in the array-backed node table
MESSAGE, USER, COMMENT = 0, 1, 2


class Relation(IntEnum):
    L1 = 0  # user - message
    L2 = 1  # message - comment
    L3 = 2  # user - user


N_RELATIONS = len(Relation)

_RELATION_KINDS = {
    frozenset((USER, MESSAGE)): Relation.L1,
    frozenset((MESSAGE, COMMENT)): Relation.L2,
    frozenset((USER,)): Relation.L3,
}


def relation_for(kind_a: int, kind_b: int) -> Optional[Relation]:
    return _RELATION_KINDS.get(frozenset((kind_a, kind_b)))


def _kind_code(kind: NodeKind) -> int:
    if isinstance(kind, Message):
        return MESSAGE
    if isinstance(kind, User):
        return USER
    if isinstance(kind, Comment):
        return COMMENT
    raise GraphError(f"unknown node kind {kind!r}")


class UnionFind:
    """Union by size with path compression, plus member lists per root."""

    def __init__(self, n: int):
        self.parent = list(range(n))
        self.size = [1] * n
        self.members = {i: [i] for i in range(n)}
        self.n_edges = {i: 0 for i in range(n)}

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: int, b: int) -> int:
        """Merge the sets of a and b and count one edge; returns the new root."""
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            self.n_edges[ra] += 1
            return ra
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]
        self.members[ra].extend(self.members.pop(rb))
        self.n_edges[ra] += self.n_edges.pop(rb) + 1
        return ra

    def copy(self) -> "UnionFind":
        new = UnionFind.__new__(UnionFind)
        new.parent = list(self.parent)
        new.size = list(self.size)
        new.members = {r: list(m) for r, m in self.members.items()}
        new.n_edges = dict(self.n_edges)
        return new


class HeteroGraph:
    """Undirected typed graph with an incremental component index.

    Single writer, many readers: ``add_edge`` must not run concurrently with
    queries. Episodes restore state with :meth:`copy` of a clean graph.
    """

    def __init__(self, kinds: list[NodeKind]):
        self.kinds = list(kinds)
        n = len(self.kinds)
        self.kind_code = np.array([_kind_code(k) for k in self.kinds], dtype=np.int8)
        # -1 unknown, 0 non-rumor, 1 rumor; only meaningful for messages
        self.rumor_label = np.full(n, -1, dtype=np.int8)
        self.is_author = np.zeros(n, dtype=bool)
        for i, k in enumerate(self.kinds):
            if isinstance(k, Message) and k.is_rumor is not None:
                self.rumor_label[i] = int(k.is_rumor)
            elif isinstance(k, User):
                self.is_author[i] = k.is_author
        self.nbrs: list[list[set[int]]] = [[set() for _ in range(n)] for _ in Relation]
        self.edges: dict[tuple[int, int], Relation] = {}
        self.deg = np.zeros(n, dtype=np.int64)
        self.rel_edges: list[tuple[list[int], list[int]]] = [([], []) for _ in Relation]
        self.components = UnionFind(n)

    @property
    def n_nodes(self) -> int:
        return len(self.kinds)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def nodes_of_kind(self, code: int) -> np.ndarray:
        return np.flatnonzero(self.kind_code == code)

    def _check_node(self, v: int) -> None:
        if not 0 <= v < self.n_nodes:
            raise GraphError(f"unknown node id {v}")

    def add_edge(self, a: int, b: int, rel: Optional[Relation] = None) -> None:
        self._check_node(a)
        self._check_node(b)
        if a == b:
            raise GraphError(f"self-loop on node {a}")
        expected = relation_for(int(self.kind_code[a]), int(self.kind_code[b]))
        if expected is None or (rel is not None and Relation(rel) != expected):
            raise GraphError(
                f"edge ({a}, {b}) relation {rel!r} inconsistent with node kinds "
                f"{self.kinds[a]!r}, {self.kinds[b]!r}"
            )
        key = (a, b) if a < b else (b, a)
        if key in self.edges:
            raise GraphError(f"duplicate edge ({a}, {b})")
        self.edges[key] = expected
        self.nbrs[expected][a].add(b)
        self.nbrs[expected][b].add(a)
        self.deg[a] += 1
        self.deg[b] += 1
        self.rel_edges[expected][0].append(key[0])
        self.rel_edges[expected][1].append(key[1])
        self.components.union(a, b)

    def has_edge(self, a: int, b: int) -> bool:
        return ((a, b) if a < b else (b, a)) in self.edges

    def neighbors(self, v: int) -> set[int]:
        out: set[int] = set()
        for rel in Relation:
            out |= self.nbrs[rel][v]
        return out

    def degree(self, v: int) -> int:
        return int(self.deg[v])

    def degrees(self) -> np.ndarray:
        return self.deg.copy()

    def component_of(self, v: int) -> int:
        return self.components.find(v)

    def component_roots(self) -> list[int]:
        return sorted(self.components.members)

    def component_members(self, root: int) -> list[int]:
        return self.components.members[self.components.find(root)]

    def component_edge_count(self, root: int) -> int:
        return self.components.n_edges[self.components.find(root)]

    @property
    def n_components(self) -> int:
        return len(self.components.members)

    def edge_arrays(self, rel: Relation) -> tuple[np.ndarray, np.ndarray]:
        a, b = self.rel_edges[rel]
        return np.array(a, dtype=np.int64), np.array(b, dtype=np.int64)

    def copy(self) -> "HeteroGraph":
        new = HeteroGraph.__new__(HeteroGraph)
        new.kinds = self.kinds
        new.kind_code = self.kind_code
        new.rumor_label = self.rumor_label
        new.is_author = self.is_author
        new.nbrs = [[set(s) for s in per_rel] for per_rel in self.nbrs]
        new.edges = dict(self.edges)
        new.deg = self.deg.copy()
        new.rel_edges = [(list(a), list(b)) for a, b in self.rel_edges]
        new.components = self.components.copy()
        return new

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(self.kind_code.tobytes())
        h.update(self.rumor_label.tobytes())
        h.update(self.is_author.tobytes())
        for (a, b), rel in sorted(self.edges.items()):
            h.update(f"{a},{b},{int(rel)};".encode())
        return h.hexdigest()


def build_graph(
    nodes: Iterable[tuple[int, NodeKind]],
    edges: Iterable[tuple[int, int, Relation]],
) -> HeteroGraph:
    nodes = sorted(nodes, key=lambda p: p[0])
    ids = [i for i, _ in nodes]
    if ids != list(range(len(ids))):
        raise GraphError("node ids must be dense in [0, n) without repeats")
    g = HeteroGraph([k for _, k in nodes])
    for a, b, rel in edges:
        g.add_edge(int(a), int(b), Relation(rel))
    return g


def add_attack_edge(g: HeteroGraph, user: int, message: int, induced_l3: bool = False) -> list[tuple[int, int]]:
    """Connect a user to a message with one L1 edge.

    With ``induced_l3`` the re-post also links the user to every author of
    the message (L3), mirroring how organic re-posts are recorded. Returns
    the list of edges actually added.
    """
    g._check_node(user)
    g._check_node(message)
    if g.kind_code[user] != USER or g.kind_code[message] != MESSAGE:
        raise GraphError(f"attack edge must join a user and a message, got ({user}, {message})")
    if g.has_edge(user, message):
        raise GraphError(f"attack edge ({user}, {message}) already present")
    authors = [u for u in g.nbrs[Relation.L1][message] if g.is_author[u]] if induced_l3 else []
    g.add_edge(user, message, Relation.L1)
    added = [(user, message)]
    for u in authors:
        if u != user and not g.has_edge(user, u):
            g.add_edge(user, u, Relation.L3)
            added.append((user, u))
    return added


def bfs_distances(g: HeteroGraph, source: int, k: Optional[int] = None) -> dict[int, int]:
    g._check_node(source)
    dist = {source: 0}
    queue = deque([source])
    while queue:
        v = queue.popleft()
        d = dist[v]
        if k is not None and d >= k:
            continue
        for rel in Relation:
            for u in g.nbrs[rel][v]:
                if u not in dist:
                    dist[u] = d + 1
                    queue.append(u)
    return dist


def ego_and_khop(g: HeteroGraph, v: int, k: int) -> tuple[set[int], set[int], dict[int, int]]:
    """Ego network (v and its 1-hop neighbours), k-hop node set and hop distances."""
    if k < 1:
        raise GraphError("k must be a positive integer")
    dist = bfs_distances(g, v, k)
    ego = {u for u, d in dist.items() if d <= 1}
    return ego, set(dist), dist


def ego_edge_count(g: HeteroGraph, ego: set[int]) -> int:
    count = 0
    for u in ego:
        for rel in Relation:
            count += sum(1 for w in g.nbrs[rel][u] if w in ego)
    return count // 2


def pagerank(
    g: HeteroGraph,
    damping: float = 0.85,
    tol: float = 1e-8,
    max_iter: int = 200,
) -> dict[int, float]:
    """PageRank on the user projection (user nodes, L3 edges only).

    Dangling users spread their mass uniformly. Returns {user id: score}.
    """
    users = g.nodes_of_kind(USER)
    n = len(users)
    if n == 0:
        return {}
    index = {int(u): i for i, u in enumerate(users)}
    out_deg = np.zeros(n)
    rows, cols = [], []
    for u in users:
        i = index[int(u)]
        nb = g.nbrs[Relation.L3][int(u)]
        out_deg[i] = len(nb)
        for w in nb:
            rows.append(index[w])
            cols.append(i)
    vals = np.array([1.0 / out_deg[c] for c in cols]) if cols else np.zeros(0)
    P = csr_matrix((vals, (rows, cols)), shape=(n, n))
    dangling = out_deg == 0
    x = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        new = damping * (P @ x + x[dangling].sum() / n) + (1.0 - damping) / n
        new /= new.sum()
        # geometric contraction: remaining L1 error <= step * d / (1 - d)
        done = np.abs(new - x).sum() * damping / (1.0 - damping) < tol
        x = new
        if done:
            break
    return {int(u): float(x[i]) for i, u in enumerate(users)}


@dataclass
class InfluenceTable:
    user: dict[int, float]
    message: dict[int, float]
    z1: int
    z2: int

    def of(self, v: int) -> float:
        if v in self.message:
            return self.message[v]
        return self.user.get(v, 0.0)


def influence_normalizers(g: HeteroGraph) -> tuple[int, int]:
    """Dataset maxima of re-post count (user neighbours - 1) and comment count."""
    msgs = g.nodes_of_kind(MESSAGE)
    z1 = max((len(g.nbrs[Relation.L1][int(m)]) - 1 for m in msgs), default=1)
    z2 = max((len(g.nbrs[Relation.L2][int(m)]) for m in msgs), default=1)
    return max(z1, 1), max(z2, 1)


def single_message_influence(g: HeteroGraph, pr: dict[int, float], m: int, z1: int, z2: int) -> float:
    users = g.nbrs[Relation.L1][m]
    if not users:
        return 0.0
    top = max(pr.get(u, 0.0) for u in users)
    return top + (len(users) - 1) / z1 + len(g.nbrs[Relation.L2][m]) / z2


def message_influence(
    g: HeteroGraph,
    pr: dict[int, float],
    z1: Optional[int] = None,
    z2: Optional[int] = None,
) -> InfluenceTable:
    if z1 is None or z2 is None:
        d1, d2 = influence_normalizers(g)
        z1 = d1 if z1 is None else z1
        z2 = d2 if z2 is None else z2
    msg = {int(m): single_message_influence(g, pr, int(m), z1, z2) for m in g.nodes_of_kind(MESSAGE)}
    return InfluenceTable(user=dict(pr), message=msg, z1=int(z1), z2=int(z2))


@dataclass
class GraphStats:
    n_nodes: int
    n_edges: int
    avg_degree: float
    max_degree: int
    min_degree: int
    clustering: float


def clustering_coefficient(g: HeteroGraph, nodes: Iterable[int]) -> float:
    """Global clustering: 3 x triangles / connected triples, induced on ``nodes``."""
    node_set = set(nodes)
    closed = 0  # each triangle is seen once from each of its 3 corners
    triples = 0
    for v in node_set:
        nb = [u for u in g.neighbors(v) if u in node_set]
        d = len(nb)
        triples += d * (d - 1) // 2
        for i, a in enumerate(nb):
            na = g.neighbors(a)
            for b in nb[i + 1:]:
                if b in na:
                    closed += 1
    return closed / triples if triples else 0.0


def graph_stats(g: HeteroGraph, component: Optional[int] = None) -> GraphStats:
    if component is None:
        nodes = list(range(g.n_nodes))
        n_edges = g.n_edges
    else:
        nodes = g.component_members(component)
        n_edges = g.component_edge_count(component)
    if not nodes:
        raise GraphError("graph_stats over an empty scope")
    deg = np.array([g.degree(v) for v in nodes])
    return GraphStats(
        n_nodes=len(nodes),
        n_edges=n_edges,
        avg_degree=float(deg.mean()),
        max_degree=int(deg.max()),
        min_degree=int(deg.min()),
        clustering=clustering_coefficient(g, nodes),
    )
