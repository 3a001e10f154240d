"""Rule-based attackers used as comparison points.

All rules draw from the same admissible edge set as the learned attacker
(controllable user x controllable message, edge absent).

Variants: ``GU-R`` links a random good user to the chosen target rumor;
``BU-N`` links the author of the chosen target rumor to a random
non-rumor. Random+ picks the rumor (GU-R) or author (BU-N) at random too.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .env import AttackEnv, NodeAction

STRATEGIES = ("random", "random+", "degree", "influence", "dcg")
VARIANTS = ("GU-R", "BU-N")


@dataclass(frozen=True)
class RuleStrategy:
    name: str
    variant: Optional[str] = None

    def __post_init__(self):
        if self.name not in STRATEGIES:
            raise ValueError(f"unknown rule strategy {self.name!r}")
        if self.name == "random":
            if self.variant is not None:
                raise ValueError("Random has no variants")
        elif self.variant not in VARIANTS:
            raise ValueError(f"{self.name} needs a variant in {VARIANTS}")

    @property
    def label(self) -> str:
        return self.name if self.variant is None else f"{self.name}:{self.variant}"


def good_users(env: AttackEnv) -> list[int]:
    bad = set(env.bad_authors)
    return [int(u) for u in env.ctrl_users if int(u) not in bad]


def target_authors(env: AttackEnv) -> list[int]:
    out = set()
    for t in env.targets.ids:
        out.update(a for a in env.author_of[int(t)] if env.is_ctrl_user[a])
    return sorted(out)


def nonrumor_messages(env: AttackEnv) -> list[int]:
    return [int(m) for m in env.ctrl_messages if env.clean.rumor_label[m] == 0]


def target_order(env: AttackEnv, criterion: str) -> list[int]:
    """Targets sorted by a criterion (descending), ties by ascending id."""
    ids = env.targets.ids
    if criterion == "degree":
        score = np.array([env.graph.degree(int(t)) for t in ids], dtype=float)
    elif criterion == "influence":
        score = env.targets.weights.copy()
    elif criterion == "dcg":
        score = env.targets.weights / np.log2(env.snap.ranks_of(ids) + 1.0)
    else:
        raise ValueError(criterion)
    order = np.lexsort((ids, -score))
    return [int(ids[i]) for i in order]


def _pick(rng: np.random.Generator, items: list) -> Optional[object]:
    if not items:
        return None
    return items[int(rng.integers(len(items)))]


def _attach(env: AttackEnv, rumor: int, variant: str, rng: np.random.Generator) -> Optional[NodeAction]:
    g = env.graph
    if variant == "GU-R":
        partners = [u for u in good_users(env) if not g.has_edge(u, rumor)]
        u = _pick(rng, partners)
        return None if u is None else NodeAction(rumor, u)
    authors = [a for a in env.author_of[rumor] if env.is_ctrl_user[a]]
    pairs = [(a, m) for a in authors for m in nonrumor_messages(env) if not g.has_edge(a, m)]
    pick = _pick(rng, pairs)
    return None if pick is None else NodeAction(pick[0], pick[1])


def select_rule_action(env: AttackEnv, strategy: RuleStrategy, rng: np.random.Generator) -> Optional[NodeAction]:
    """Next edge for a rule attacker, or None when it has nothing admissible left."""
    g = env.graph
    if strategy.name == "random":
        pick = _pick(rng, env.admissible_edges())
        return None if pick is None else NodeAction(*pick)
    if strategy.name == "random+":
        if strategy.variant == "GU-R":
            pairs = [(u, int(t)) for u in good_users(env) for t in env.targets.ids if not g.has_edge(u, int(t))]
        else:
            pairs = [(a, m) for a in target_authors(env) for m in nonrumor_messages(env) if not g.has_edge(a, m)]
        pick = _pick(rng, pairs)
        return None if pick is None else NodeAction(*pick)
    for rumor in target_order(env, strategy.name):
        act = _attach(env, rumor, strategy.variant, rng)
        if act is not None:
            return act
    return None


def run_rule_episode(env: AttackEnv, strategy: RuleStrategy, rng: np.random.Generator) -> tuple[float, list[float]]:
    """One T-step episode; returns (episode return, per-step NDCG changes)."""
    env.reset()
    deltas = []
    while not env.done:
        act = select_rule_action(env, strategy, rng)
        if act is None:
            break
        delta, _ = env.step(act)
        deltas.append(delta)
    return env.j0 - env.j, deltas


def run_rule_attack(
    env: AttackEnv,
    strategy: RuleStrategy,
    repetitions: int,
    seed: int = 0,
) -> tuple[float, list[float], list[list[float]]]:
    """Mean return over independent episodes plus per-episode returns and step changes."""
    rng = np.random.default_rng(seed)
    totals, steps = [], []
    for _ in range(repetitions):
        total, deltas = run_rule_episode(env, strategy, rng)
        totals.append(total)
        steps.append(deltas)
    mean = float(np.mean(totals)) if totals else 0.0
    return mean, totals, steps


def run_rule_best_of_both(env: AttackEnv, name: str, repetitions: int, seed: int = 0) -> dict[str, float]:
    """Per-variant means and the better of the two (``best``)."""
    if name == "random":
        mean, _, _ = run_rule_attack(env, RuleStrategy("random"), repetitions, seed)
        return {"random": mean, "best": mean}
    out = {}
    for v in VARIANTS:
        out[v], _, _ = run_rule_attack(env, RuleStrategy(name, v), repetitions, seed)
    out["best"] = max(out[v] for v in VARIANTS)
    return out
