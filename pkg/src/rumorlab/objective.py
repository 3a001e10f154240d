"""Attacker objective: cutoff-truncated, influence-weighted DCG of target rumors."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .detector import RankingSnapshot


class ObjectiveError(ValueError):
    pass


def default_cutoff(n_ranked: int) -> int:
    return max(1, math.ceil(0.1 * n_ranked))


def ideal_normalizer(weights: Iterable[float]) -> float:
    """Ideal DCG: weights sorted descending, discounted by log2(position + 1)."""
    w = np.sort(np.asarray(list(weights), dtype=float))[::-1]
    if len(w) == 0:
        raise ObjectiveError("normalizer of an empty target set is undefined")
    if np.any(w < 0):
        raise ObjectiveError("target weights must be non-negative")
    return float(np.sum(w / np.log2(np.arange(2, len(w) + 2))))


@dataclass(frozen=True)
class TargetSet:
    ids: np.ndarray
    weights: np.ndarray
    cutoff: int
    normalizer: float
    indicator_as_printed: bool = False

    @classmethod
    def build(
        cls,
        ids,
        weights,
        n_ranked: int,
        cutoff: Optional[int] = None,
        indicator_as_printed: bool = False,
    ) -> "TargetSet":
        ids = np.asarray(ids, dtype=np.int64)
        weights = np.asarray(weights, dtype=float)
        if len(ids) != len(weights):
            raise ObjectiveError("one weight per target required")
        if len(set(ids.tolist())) != len(ids):
            raise ObjectiveError("duplicate target ids")
        m = default_cutoff(n_ranked) if cutoff is None else int(cutoff)
        if m < 1:
            raise ObjectiveError("cutoff m must be a positive integer")
        return cls(ids, weights, m, ideal_normalizer(weights), indicator_as_printed)

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, v) -> bool:
        return int(v) in self.id_set

    @property
    def id_set(self) -> frozenset:
        return frozenset(self.ids.tolist())

    def weight_of(self) -> dict[int, float]:
        return dict(zip(self.ids.tolist(), self.weights.tolist()))


def dcg_terms(targets: TargetSet, ranks: np.ndarray) -> np.ndarray:
    """Per-target contribution w_i / log2(rank + 1), masked by the cutoff."""
    ranks = np.asarray(ranks)
    keep = ranks > targets.cutoff if targets.indicator_as_printed else ranks <= targets.cutoff
    return np.where(keep, targets.weights / np.log2(ranks + 1.0), 0.0)


def ndcg(targets: TargetSet, snap: RankingSnapshot) -> float:
    if len(targets) == 0:
        raise ObjectiveError("empty target set")
    try:
        ranks = snap.ranks_of(targets.ids)
    except KeyError as e:
        raise ObjectiveError(f"target missing from snapshot: {e}") from None
    return float(dcg_terms(targets, ranks).sum() / targets.normalizer)


def delta_total(j0: float, jT: float) -> float:
    return j0 - jT


def delta_step(j_prev: float, j_cur: float) -> float:
    return j_prev - j_cur


def tdrop_rrise(
    before: RankingSnapshot,
    after: RankingSnapshot,
    targets: TargetSet,
    rhm_set: Iterable[int],
    scope: Iterable[int],
) -> tuple[int, int]:
    """Target rank drops and RHM rank rises within ``scope`` for one step.

    An RHM counts towards the rise only if the rank interval it climbed
    through covers a position that a scoped target held before the step.
    """
    scope = set(int(v) for v in scope)
    scoped_targets = [int(t) for t in targets.ids if int(t) in scope]
    tdrop = 0
    target_before = []
    for t in scoped_targets:
        rb, ra = before.rank_of(t), after.rank_of(t)
        tdrop += max(0, ra - rb)
        target_before.append(rb)
    target_before = np.array(target_before, dtype=np.int64)
    rrise = 0
    for h in rhm_set:
        h = int(h)
        if h not in scope:
            continue
        rb, ra = before.rank_of(h), after.rank_of(h)
        if ra < rb and len(target_before) and np.any((target_before >= ra) & (target_before <= rb)):
            rrise += rb - ra
    return tdrop, rrise
