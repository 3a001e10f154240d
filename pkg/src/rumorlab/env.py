"""Episodic edge-injection attack against a frozen detector.

One episode = T steps. Each step the attacker picks an ordered pair of
components (one holding a target rumor, one holding a controllable node),
then an ordered node pair across them whose user-message edge is still
addable, and the detector is queried again on the modified graph.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .bandit import LinUcbPolicy, RewardShaper, StepContext
from .data import AttackSetup, authors_of
from .detector import BlackBoxDetector, RankingSnapshot
from .features import (
    BoundsPair,
    FeatureContext,
    fit_bounds,
    node_features,
    subgraph_features,
)
from .graph import MESSAGE, USER, HeteroGraph, InfluenceTable, add_attack_edge, message_influence, pagerank, single_message_influence
from .objective import TargetSet, ndcg, tdrop_rrise


class EnvError(RuntimeError):
    pass


class SubgraphAction(NamedTuple):
    source: int  # component root holding a target rumor (G_i)
    partner: int  # component root holding a controllable node (G_j)


class NodeAction(NamedTuple):
    p: int  # node in G_i
    q: int  # node in G_j


@dataclass
class EnvConfig:
    horizon: int = 20
    cutoff: Optional[int] = None
    indicator_as_printed: bool = False
    induced_l3: bool = False
    rhm_all_messages: bool = False
    bad_author_targets_only: bool = False
    khop: int = 3
    action_cap: int = 5000


def user_message(g: HeteroGraph, a: int, b: int) -> tuple[int, int]:
    if g.kind_code[a] == USER and g.kind_code[b] == MESSAGE:
        return a, b
    if g.kind_code[b] == USER and g.kind_code[a] == MESSAGE:
        return b, a
    raise EnvError(f"pair ({a}, {b}) is not a user-message pair")


class AttackEnv:
    def __init__(
        self,
        clean: HeteroGraph,
        detector: BlackBoxDetector,
        setup: AttackSetup,
        cfg: EnvConfig = EnvConfig(),
        seed: int = 0,
    ):
        if detector is None:
            raise EnvError("a trained detector is required")
        self.clean = clean
        self.detector = detector
        self.cfg = cfg
        self.rng = np.random.default_rng(seed)
        self.horizon = cfg.horizon
        n = clean.n_nodes

        self.ctrl_users = np.array(sorted(setup.controllable_users), dtype=np.int64)
        self.ctrl_messages = np.array(sorted(setup.controllable_messages), dtype=np.int64)
        self.is_ctrl_user = np.zeros(n, dtype=bool)
        self.is_ctrl_user[self.ctrl_users] = True
        self.is_ctrl_msg = np.zeros(n, dtype=bool)
        self.is_ctrl_msg[self.ctrl_messages] = True
        self.is_ctrl = self.is_ctrl_user | self.is_ctrl_msg

        pr = pagerank(clean)
        self.influence: InfluenceTable = message_influence(clean, pr)
        targets = sorted(setup.targets)
        self.targets = TargetSet.build(
            targets,
            [self.influence.message[t] for t in targets],
            n_ranked=len(clean.nodes_of_kind(MESSAGE)),
            cutoff=cfg.cutoff,
            indicator_as_printed=cfg.indicator_as_printed,
        )
        self.is_target = np.zeros(n, dtype=bool)
        self.is_target[targets] = True

        rumor_src = targets if cfg.bad_author_targets_only else [int(m) for m in np.flatnonzero(clean.rumor_label == 1)]
        self.bad_authors = sorted({a for m in rumor_src for a in authors_of(clean, m)})
        self.author_of = {int(m): authors_of(clean, int(m)) for m in clean.nodes_of_kind(MESSAGE)}

        infl = np.zeros(n)
        for u, w in self.influence.user.items():
            infl[u] = w
        for m, w in self.influence.message.items():
            infl[m] = w

        self.clean_snapshot = detector.snapshot(clean, 0)
        self.j_clean = ndcg(self.targets, self.clean_snapshot)
        self.clean_ctx = FeatureContext.build(
            clean, self.clean_snapshot.prob_array(n), infl, targets, self.bad_authors,
            cfg.horizon, cfg.rhm_all_messages,
        )
        self.bounds: BoundsPair = fit_bounds(clean, self.clean_ctx, cfg.khop)
        self._clean_sub_cache: dict[int, np.ndarray] = {}
        self._clean_node_cache: dict[int, np.ndarray] = {}
        self.capped = False
        self.t = -1
        self.reset()
        # warm the clean caches once; reset() shares them afterwards
        for a in self.subgraph_action_space():
            self._sub(a.source)
            self._sub(a.partner)
        for v in np.flatnonzero(self.is_ctrl):
            self._node(int(v))
        self._clean_sub_cache = dict(self._sub_cache)
        self._clean_node_cache = dict(self._node_cache)

    # ------------------------------------------------------------------ state

    def reset(self) -> RankingSnapshot:
        self.graph = self.clean.copy()
        self.t = 0
        self.ctx = self.clean_ctx.copy()
        self.snap = self.clean_snapshot
        self.j = self.j_clean
        self.j0 = self.j_clean
        self.applied: list[tuple[int, int]] = []
        self._sub_cache = dict(self._clean_sub_cache)
        self._node_cache = dict(self._clean_node_cache)
        return self.snap

    @property
    def done(self) -> bool:
        return self.t >= self.horizon

    def _sub(self, root: int) -> np.ndarray:
        root = self.graph.component_of(root)
        h = self._sub_cache.get(root)
        if h is None:
            h = subgraph_features(self.graph, root, self.ctx, self.bounds)
            self._sub_cache[root] = h
        return h

    def _node(self, v: int) -> np.ndarray:
        h = self._node_cache.get(v)
        if h is None:
            h = node_features(self.graph, v, self.ctx, self.bounds, self.cfg.khop)
            self._node_cache[v] = h
        return h

    # ---------------------------------------------------------- action spaces

    def _roots_with(self, nodes: np.ndarray) -> list[int]:
        find = self.graph.component_of
        return sorted({find(int(v)) for v in nodes})

    def subgraph_action_space(self) -> list[SubgraphAction]:
        src = self._roots_with(self.targets.ids)
        dst = self._roots_with(np.flatnonzero(self.is_ctrl))
        if not src or not dst:
            raise EnvError("empty subgraph action space: no targets or no controllable nodes")
        return [SubgraphAction(i, j) for i in src for j in dst]

    def node_action_space(self, action: SubgraphAction) -> list[NodeAction]:
        vi = self.graph.component_members(action.source)
        vj = self.graph.component_members(action.partner)
        ci = [v for v in vi if self.is_ctrl[v]]
        cj = [v for v in vj if self.is_ctrl[v]]
        out = []
        for p in ci:
            p_user = self.is_ctrl_user[p]
            for q in cj:
                if (p_user and self.is_ctrl_msg[q]) or (self.is_ctrl_msg[p] and self.is_ctrl_user[q]):
                    if not self.graph.has_edge(p, q):
                        out.append(NodeAction(p, q))
        return sorted(out)

    def admissible_edges(self) -> list[tuple[int, int]]:
        """All (user, message) edges in E' that are still absent."""
        return [
            (int(u), int(m)) for u in self.ctrl_users for m in self.ctrl_messages
            if not self.graph.has_edge(int(u), int(m))
        ]

    def _cap(self, items: list) -> list:
        if len(items) <= self.cfg.action_cap:
            return items
        self.capped = True
        keep = np.sort(self.rng.choice(len(items), size=self.cfg.action_cap, replace=False))
        return [items[i] for i in keep]

    def subgraph_vectors(self, actions: list[SubgraphAction]) -> np.ndarray:
        roots = sorted({r for a in actions for r in a})
        pos = {r: i for i, r in enumerate(roots)}
        H = np.array([self._sub(r) for r in roots])
        src = np.array([pos[a.source] for a in actions], dtype=np.int64)
        dst = np.array([pos[a.partner] for a in actions], dtype=np.int64)
        return np.hstack([H[src], H[dst]])

    def node_vectors(self, actions: list[NodeAction]) -> np.ndarray:
        nodes = sorted({v for a in actions for v in a})
        pos = {v: i for i, v in enumerate(nodes)}
        H = np.array([self._node(v) for v in nodes])
        p = np.array([pos[a.p] for a in actions], dtype=np.int64)
        q = np.array([pos[a.q] for a in actions], dtype=np.int64)
        return np.hstack([H[p], H[q]])

    # ------------------------------------------------------------------- step

    def attack_count_between(self, a: int, b: int) -> int:
        roots = {self.graph.component_of(a), self.graph.component_of(b)}
        return sum(1 for u, _ in self.applied if self.graph.component_of(u) in roots)

    def step(self, action) -> tuple[float, RankingSnapshot]:
        if self.t >= self.horizon:
            raise EnvError(f"horizon exhausted (t={self.t}, T={self.horizon})")
        p, q = int(action[0]), int(action[1])
        user, msg = user_message(self.graph, p, q)
        if not (self.is_ctrl_user[user] and self.is_ctrl_msg[msg]) or self.graph.has_edge(user, msg):
            raise EnvError(f"action ({p}, {q}) is not an admissible edge")
        g = self.graph
        old_roots = {g.component_of(user), g.component_of(msg)}
        added = add_attack_edge(g, user, msg, self.cfg.induced_l3)
        root = g.component_of(user)

        for a, b in added:
            self.ctx.node_attack[a] += 1
            self.ctx.node_attack[b] += 1
        self.ctx.attack_edges.append((user, msg))
        self.applied.append((user, msg))
        if self.cfg.induced_l3 and len(added) > 1:
            pr = pagerank(g)
            for u, w in pr.items():
                self.ctx.influence[u] = w
            for m in g.component_members(root):
                if g.kind_code[m] == MESSAGE:
                    self.ctx.influence[m] = single_message_influence(g, pr, m, self.influence.z1, self.influence.z2)
        else:
            self.ctx.influence[msg] = single_message_influence(
                g, self.influence.user, msg, self.influence.z1, self.influence.z2
            )

        self.t += 1
        # only the merged component can change its scores
        members = g.component_members(root)
        ids, p_new = self.detector.probabilities(g, members)
        prob = self.ctx.prob.copy()
        prob[ids] = p_new
        self.ctx.prob = prob
        msgs = self.snap.message_ids
        snap = RankingSnapshot.from_probabilities(msgs, prob[msgs], g.n_nodes, self.t)
        j_new = ndcg(self.targets, snap)
        delta = self.j - j_new
        self.j = j_new
        self.snap = snap

        for r in old_roots | {root}:
            self._sub_cache.pop(r, None)
        for v in members:
            self._node_cache.pop(v, None)
        return delta, snap


# --------------------------------------------------------------------------
# episodes


@dataclass
class StepRecord:
    t: int
    subgraph_action: tuple[int, int]
    node_action: tuple[int, int]
    x_g: np.ndarray
    x_n: np.ndarray
    j_before: float
    j_after: float
    delta: float
    bucket_g: int
    bucket_n: int
    tdrop: int = 0
    rrise: int = 0
    reward: float = 0.0
    adjusted_g: float = 0.0
    adjusted_n: float = 0.0


@dataclass
class EpisodeTrace:
    steps: list[StepRecord] = field(default_factory=list)
    j0: float = 0.0
    jT: float = 0.0
    truncated: bool = False
    capped: bool = False

    @property
    def delta_total(self) -> float:
        return self.j0 - self.jT

    @property
    def delta_sum(self) -> float:
        return float(sum(s.delta for s in self.steps))

    def samples(self, level: str) -> tuple[np.ndarray, np.ndarray]:
        if not self.steps:
            return np.zeros((0, 0)), np.zeros(0)
        if level == "subgraph":
            return np.array([s.x_g for s in self.steps]), np.array([s.adjusted_g for s in self.steps])
        return np.array([s.x_n for s in self.steps]), np.array([s.adjusted_n for s in self.steps])

    def rewards(self) -> np.ndarray:
        return np.array([s.reward for s in self.steps])

    def log_records(self, episode: int, extra: Optional[dict] = None) -> list[dict]:
        out = []
        for s in self.steps:
            for level, action, adj in (
                ("subgraph", s.subgraph_action, s.adjusted_g),
                ("node", s.node_action, s.adjusted_n),
            ):
                rec = {
                    "episode": episode,
                    "t": s.t,
                    "level": level,
                    "action": [int(a) for a in action],
                    "delta_ndcg": s.delta,
                    "reward": s.reward,
                    "adjusted_reward": adj,
                    "tdrop": s.tdrop,
                    "rrise": s.rrise,
                }
                if extra:
                    rec.update(extra)
                out.append(rec)
        return out


def write_trace_log(fh, records: list[dict]) -> None:
    for rec in records:
        fh.write(json.dumps(rec, sort_keys=True) + "\n")


def run_episode(
    env: AttackEnv,
    policy_g: LinUcbPolicy,
    policy_n: LinUcbPolicy,
    shaper: RewardShaper,
    credit: str = "step",
    update: bool = True,
) -> EpisodeTrace:
    """Play one episode with the hierarchical policy, then update both levels.

    ``credit="step"`` rewards each step with its own normalised NDCG change;
    ``credit="delayed"`` hands the normalised episode return to every step.
    """
    if credit not in ("step", "delayed"):
        raise EnvError(f"unknown credit mode {credit!r}")
    env.reset()
    env.capped = False
    trace = EpisodeTrace(j0=env.j)
    while not env.done:
        actions = env._cap(env.subgraph_action_space())
        X_g = env.subgraph_vectors(actions)
        scores = policy_g.scores(X_g)
        chosen = None
        while chosen is None:
            if not np.isfinite(scores).any():
                break
            i = int(np.argmax(scores))
            pair = actions[i]
            node_actions = env._cap(env.node_action_space(pair))
            if node_actions:
                chosen = (i, pair, node_actions)
            else:
                scores[i] = -np.inf  # saturated pair: mask and re-select
        if chosen is None:
            trace.truncated = True
            break
        i, pair, node_actions = chosen
        X_n = env.node_vectors(node_actions)
        k = policy_n.select(X_n)
        act = node_actions[k]

        scope = set(env.graph.component_members(pair.source)) | set(env.graph.component_members(pair.partner))
        bucket_g = env.attack_count_between(pair.source, pair.partner)
        bucket_n = int(env.ctx.node_attack[act.p] + env.ctx.node_attack[act.q])
        before, j_before = env.snap, env.j
        delta, after = env.step(act)
        tdrop, rrise = tdrop_rrise(before, after, env.targets, np.flatnonzero(env.ctx.rhm), scope)
        trace.steps.append(StepRecord(
            t=env.t,
            subgraph_action=(pair.source, pair.partner),
            node_action=(act.p, act.q),
            x_g=X_g[i].copy(),  # no view: X_g can be large
            x_n=X_n[k].copy(),
            j_before=j_before,
            j_after=env.j,
            delta=delta,
            bucket_g=bucket_g,
            bucket_n=bucket_n,
            tdrop=tdrop,
            rrise=rrise,
        ))
    trace.jT = env.j
    trace.capped = env.capped
    assign_rewards(trace, shaper, credit)
    if update:
        policy_g.episode_update(*trace.samples("subgraph"))
        policy_n.episode_update(*trace.samples("node"))
    return trace


def assign_rewards(trace: EpisodeTrace, shaper: RewardShaper, credit: str = "step") -> None:
    """Normalise rewards and apply the baseline, in step order."""
    total = trace.delta_total
    for s in trace.steps:
        s.reward = shaper.shape_reward(s.delta) if credit == "step" else shaper.shape_total(total)
        s.adjusted_g, s.adjusted_n = shaper.baseline.adjust(
            s.reward, StepContext(s.t, s.x_g, s.x_n, s.bucket_g, s.bucket_n)
        )
    shaper.baseline.end_episode()
