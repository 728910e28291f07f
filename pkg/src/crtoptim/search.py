"""Combinatorial subset selection over a design space.

Both optimisers treat the criterion as a black-box set function over unit
multisets, so they work unchanged for plain and robust criteria (any
monotone supermodular function of the design). Local search repeatedly
applies the best value-improving single swap from random feasible starts;
reverse greedy strips the full space down to the target size, removing
whichever unit costs the least variance. Ties always break toward the
lowest unit index, which keeps runs with equal seeds identical.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .designspace import Design, DesignSpace
from .errors import InfeasibleError, ValidationError

# How many random starts may come up infeasible before local search gives up.
MAX_START_DRAWS = 1000


@dataclass(frozen=True)
class SearchResult:
    design: Design
    value: float
    restarts: int = 1


def _as_callable(criterion) -> Callable[[np.ndarray], float]:
    if callable(criterion):
        return criterion
    return criterion.value


def swap_delta(space: DesignSpace, criterion, design: Design,
               remove: int, add: int) -> float:
    """Criterion change from swapping one replicate of ``remove`` for one
    of ``add``; consistent with full re-evaluation."""
    crit = _as_callable(criterion)
    counts = np.asarray(design.counts, dtype=int)
    if remove == add:
        return 0.0
    if counts[remove] < 1:
        raise ValidationError(f"unit {remove} is not in the design")
    if counts[add] >= space.max_replication:
        raise ValidationError(f"unit {add} is already at the replication cap")
    before = crit(counts)
    counts[remove] -= 1
    counts[add] += 1
    after = crit(counts)
    if math.isinf(after) and math.isinf(before):
        return 0.0
    return after - before


def _random_start(space: DesignSpace, crit, m: int, rng) -> np.ndarray:
    pool = np.repeat(np.arange(space.n_units), space.max_replication)
    for _ in range(MAX_START_DRAWS):
        counts = np.zeros(space.n_units, dtype=int)
        picked = rng.choice(pool.size, size=m, replace=False)
        np.add.at(counts, pool[picked], 1)
        if math.isfinite(crit(counts)):
            return counts
    raise InfeasibleError(
        f"no finite-criterion start of size {m} found in {MAX_START_DRAWS} draws")


def _best_swap(space, crit, counts, current):
    """Best strictly improving single swap, ties to lowest (remove, add)."""
    best = None
    removable = np.flatnonzero(counts > 0)
    addable = np.flatnonzero(counts < space.max_replication)
    for r in removable:
        counts[r] -= 1
        for a in addable:
            if a == r:
                continue
            counts[a] += 1
            val = crit(counts)
            counts[a] -= 1
            if val < current and (best is None or val < best[0]):
                best = (val, r, a)
        counts[r] += 1
    return best


def _single_local_run(space, crit, m, rng):
    counts = _random_start(space, crit, m, rng)
    current = crit(counts)
    while True:
        best = _best_swap(space, crit, counts, current)
        if best is None:
            return counts, current
        current, r, a = best
        counts[r] -= 1
        counts[a] += 1


def local_search(space: DesignSpace, criterion, m: int, restarts: int = 100,
                 seed: int | None = None, workers: int = 1,
                 progress: Callable[[int, float], None] | None = None
                 ) -> SearchResult:
    """Best design of size ``m`` over independent local-search restarts.

    Each restart walks from a random feasible start to a local optimum in
    the single-swap neighbourhood. Identical seeds yield identical
    results regardless of ``workers``; restarts merge by smallest value
    with earlier restarts winning ties.
    """
    if m < 1 or m > space.total_capacity:
        raise InfeasibleError(
            f"m={m} outside [1, {space.total_capacity}] for this space")
    if restarts < 1:
        raise ValidationError("restarts must be at least 1")
    crit = _as_callable(criterion)
    seeds = np.random.SeedSequence(seed).spawn(restarts)

    def run(idx):
        return _single_local_run(space, crit, m, np.random.default_rng(seeds[idx]))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(run, range(restarts)))
    else:
        outcomes = []
        best_so_far = math.inf
        for idx in range(restarts):
            outcomes.append(run(idx))
            best_so_far = min(best_so_far, outcomes[-1][1])
            if progress is not None:
                progress(idx, best_so_far)

    best_counts, best_value = outcomes[0]
    for counts, value in outcomes[1:]:
        if value < best_value:
            best_counts, best_value = counts, value
    if progress is not None and workers > 1:
        progress(restarts - 1, best_value)
    return SearchResult(space.design_from_counts(best_counts), best_value,
                        restarts=restarts)


def reverse_greedy(space: DesignSpace, criterion, m: int,
                   progress: Callable[[int, float], None] | None = None
                   ) -> SearchResult:
    """Strip the full design space down to ``m`` units, each step removing
    the unit whose removal increases the criterion least. Deterministic."""
    if m < 1 or m > space.total_capacity:
        raise InfeasibleError(
            f"m={m} outside [1, {space.total_capacity}] for this space")
    crit = _as_callable(criterion)
    counts = np.full(space.n_units, space.max_replication, dtype=int)
    size = int(counts.sum())
    step = 0
    while size > m:
        best = None
        for r in np.flatnonzero(counts > 0):
            counts[r] -= 1
            val = crit(counts)
            counts[r] += 1
            if best is None or val < best[0]:
                best = (val, r)
        counts[best[1]] -= 1
        size -= 1
        step += 1
        if progress is not None:
            progress(step, best[0])
    value = crit(counts)
    if not math.isfinite(value):
        raise InfeasibleError(
            f"reverse greedy reached size {m} with an infinite criterion")
    return SearchResult(space.design_from_counts(counts), value)
