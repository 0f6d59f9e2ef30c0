"""Similarity-minimizing segmentation of feature sequences.

A segmentation cuts the T frames into n contiguous segments. The cost of a
segment is the mean over features of the population standard deviation of its
frames; the objective is the unweighted mean of the segment costs. Boundaries
are frame indices: segment i (1-based) covers [b_{i-1}, b_i) with b_0 = 0 and
b_n = T.

Four solvers share one cost kernel (prefix sums and sums of squares in double
precision, O(1) per query) so their objectives are comparable float for float:

  exact_dp    dynamic program over (segments used, prefix length); optimal.
  recursive   scan the first boundary, recurse on the suffix; optimal, but
              kept deliberately close to its pseudocode origin (no memo).
  binary      greedy: best single cut, then recurse ceil(n/2) segments into
              the left part and floor(n/2) into the right part, the right
              recursion starting one frame past the cut. A heuristic: fast,
              upper-bounds the optimal objective.
  brute_force enumeration oracle for cross-checking the others.

Ties are broken toward the lexicographically smallest boundary tuple (for the
greedy scans: the earliest cut examined).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .featureio import FeatureSequence

DEFAULT_MIN_SIZE = 2

SOLVERS = ("exact_dp", "recursive", "binary", "brute_force")


class InfeasibleSegmentation(ValueError):
    """Raised when T < n_segments * min_size (or parameters are nonsensical)."""


@dataclass(frozen=True)
class SegSolverConfig:
    n_segments: int
    min_size: int = DEFAULT_MIN_SIZE
    solver: str = "exact_dp"
    brute_budget: int = 2_000_000

    def __post_init__(self):
        if self.n_segments < 1:
            raise InfeasibleSegmentation(f"n_segments must be >= 1, got {self.n_segments}")
        if self.min_size < 1:
            raise InfeasibleSegmentation(f"min_size must be >= 1, got {self.min_size}")
        if self.solver not in SOLVERS:
            raise ValueError(f"unknown solver {self.solver!r}, expected one of {SOLVERS}")


@dataclass(frozen=True)
class Segmentation:
    boundaries: tuple[int, ...]
    per_segment_cost: tuple[float, ...]
    objective: float
    n_segments: int
    min_size: int
    solver: str

    def segments(self, t: int) -> list[tuple[int, int]]:
        edges = (0, *self.boundaries, t)
        return list(zip(edges[:-1], edges[1:]))


class CostCache:
    """O(1) segment-cost queries backed by running sums and sums of squares.

    All math in float64 regardless of the storage dtype. The tiny negative
    variances that the sum-of-squares identity can produce for near-constant
    segments are clamped to zero.
    """

    def __init__(self, frames: np.ndarray):
        x = np.asarray(frames, dtype=np.float64)
        t, d = x.shape
        self.t = t
        self._p1 = np.zeros((t + 1, d))
        self._p2 = np.zeros((t + 1, d))
        np.cumsum(x, axis=0, out=self._p1[1:])
        np.cumsum(x * x, axis=0, out=self._p2[1:])

    def cost(self, start: int, end: int) -> float:
        if not 0 <= start < end <= self.t:
            raise ValueError(f"bad segment [{start}, {end}) for T={self.t}")
        n = end - start
        s1 = self._p1[end] - self._p1[start]
        s2 = self._p2[end] - self._p2[start]
        mean = s1 / n
        var = np.maximum(s2 / n - mean * mean, 0.0)
        return float(np.mean(np.sqrt(var)))


def segment_cost(seq: FeatureSequence, start: int, end: int) -> float:
    """Mean over features of the population std of frames[start:end]."""
    return CostCache(seq.frames).cost(start, end)


def _objective(costs) -> float:
    # Left-associated sum, then divide: every solver computes it identically.
    total = 0.0
    for c in costs:
        total = total + c
    return total / len(costs)


def _check_feasible(t: int, cfg: SegSolverConfig) -> None:
    if t < cfg.n_segments * cfg.min_size:
        raise InfeasibleSegmentation(
            f"cannot cut {t} frames into {cfg.n_segments} segments of >= {cfg.min_size}"
        )


def _result(boundaries, cache: CostCache, cfg: SegSolverConfig) -> Segmentation:
    edges = (0, *boundaries, cache.t)
    costs = tuple(cache.cost(a, b) for a, b in zip(edges[:-1], edges[1:]))
    return Segmentation(
        boundaries=tuple(boundaries),
        per_segment_cost=costs,
        objective=_objective(costs),
        n_segments=cfg.n_segments,
        min_size=cfg.min_size,
        solver=cfg.solver,
    )


# ---------------------------------------------------------------- exact DP


def exact_dp(seq: FeatureSequence, cfg: SegSolverConfig) -> Segmentation:
    """Optimal segmentation by dynamic programming, O(n T^2) cost queries.

    best[k][j] is the minimal total cost of cutting the prefix [0, j) into k
    segments; ties keep the lexicographically smallest boundary tuple.
    """
    _check_feasible(seq.t, cfg)
    t, n, m = seq.t, cfg.n_segments, cfg.min_size
    cache = CostCache(seq.frames)

    best = [[math.inf] * (t + 1) for _ in range(n + 1)]
    tup: list[list[tuple[int, ...] | None]] = [[None] * (t + 1) for _ in range(n + 1)]
    for j in range(m, t + 1):
        best[1][j] = cache.cost(0, j)
        tup[1][j] = ()
    for k in range(2, n + 1):
        for j in range(k * m, t + 1):
            bv = math.inf
            bt = None
            for cut in range((k - 1) * m, j - m + 1):
                pv = best[k - 1][cut]
                if pv == math.inf:
                    continue
                cand = pv + cache.cost(cut, j)
                if cand < bv:
                    bv, bt = cand, tup[k - 1][cut] + (cut,)
                elif cand == bv:
                    ct = tup[k - 1][cut] + (cut,)
                    if bt is None or ct < bt:
                        bt = ct
            best[k][j] = bv
            tup[k][j] = bt
    assert tup[n][t] is not None
    return _result(tup[n][t], cache, cfg)


# ---------------------------------------------------------------- recursive


def _split(cache: CostCache, start: int, end: int, n: int, m: int, prev_std: list):
    """Scan the first boundary of [start, end), recurse on the suffix.

    prev_std carries the costs of segments already fixed outside this range;
    the selection criterion is the mean over fixed and new segment costs, as
    in the original recursion. No memoization on purpose.
    """
    if n == 1:
        return [], [cache.cost(start, end)]
    min_std = None
    min_std_list: list[float] = []
    min_split: list[int] = []
    for i in range(start + m, end - (n - 1) * m + 1):
        std1 = [cache.cost(start, i)]
        splits2, std2 = _split(cache, i, end, n - 1, m, std1 + prev_std)
        avg_std = float(np.mean(prev_std + std1 + std2))
        if min_std is None or avg_std < min_std:
            min_std = avg_std
            min_std_list = std1 + std2
            min_split = [i] + splits2
    return min_split, min_std_list


def recursive(seq: FeatureSequence, cfg: SegSolverConfig) -> Segmentation:
    """Optimal segmentation by first-boundary recursion (exponential; small T)."""
    _check_feasible(seq.t, cfg)
    cache = CostCache(seq.frames)
    splits, _ = _split(cache, 0, seq.t, cfg.n_segments, cfg.min_size, [])
    return _result(splits, cache, cfg)


# ---------------------------------------------------------------- greedy binary


def _best_single_cut(cache: CostCache, start: int, end: int, lo: int, hi: int) -> int:
    best = None
    best_i = None
    for i in range(lo, hi + 1):
        avg = (cache.cost(start, i) + cache.cost(i, end)) / 2.0
        if best is None or avg < best:
            best, best_i = avg, i
    if best_i is None:
        raise InfeasibleSegmentation(f"no feasible cut of [{start}, {end}) in [{lo}, {hi}]")
    return best_i


def _binary_split(cache: CostCache, start: int, end: int, n: int, m: int) -> list[int]:
    if n == 1:
        return []
    if n == 2:
        return [_best_single_cut(cache, start, end, start + m, end - m)]
    left_n = -(-n // 2)  # ceil
    right_n = n // 2
    # Tighten the scan so both recursions stay feasible. The right recursion
    # starts one frame past the cut; when that skipped frame makes a tight
    # instance infeasible, fall back to recursing from the cut itself.
    lo = start + left_n * m
    hi = end - m if right_n == 1 else end - 1 - right_n * m
    skip = 1
    if lo > hi:
        hi = end - right_n * m
        skip = 0
    i = _best_single_cut(cache, start, end, lo, hi)
    left = _binary_split(cache, start, i, left_n, m)
    right = _binary_split(cache, i + skip, end, right_n, m)
    return left + [i] + right


def binary(seq: FeatureSequence, cfg: SegSolverConfig) -> Segmentation:
    """Greedy binary segmentation: optimal single cut, then split each part."""
    _check_feasible(seq.t, cfg)
    cache = CostCache(seq.frames)
    splits = _binary_split(cache, 0, seq.t, cfg.n_segments, cfg.min_size)
    return _result(splits, cache, cfg)


# ---------------------------------------------------------------- brute force


def _count_tuples(t: int, n: int, m: int) -> int:
    # Boundary tuples with pairwise gaps >= m inside [m, t - m]: stars and bars.
    return math.comb(t - n * m + n - 1, n - 1)


def brute_force(seq: FeatureSequence, cfg: SegSolverConfig) -> Segmentation:
    """Enumerate every valid boundary tuple in lexicographic order.

    Oracle for the other solvers. Refuses instances whose enumeration count
    exceeds cfg.brute_budget.
    """
    _check_feasible(seq.t, cfg)
    t, n, m = seq.t, cfg.n_segments, cfg.min_size
    count = _count_tuples(t, n, m)
    if count > cfg.brute_budget:
        raise ValueError(
            f"brute force would enumerate {count} segmentations, over the budget "
            f"of {cfg.brute_budget}"
        )
    cache = CostCache(seq.frames)

    best_total = math.inf
    best_bounds: tuple[int, ...] | None = None
    stack: list[int] = []

    def rec(prev: int, remaining: int, total: float):
        nonlocal best_total, best_bounds
        if remaining == 1:
            full = total + cache.cost(prev, t)
            if full < best_total:
                best_total = full
                best_bounds = tuple(stack)
            return
        for b in range(prev + m, t - (remaining - 1) * m + 1):
            stack.append(b)
            rec(b, remaining - 1, total + cache.cost(prev, b))
            stack.pop()

    rec(0, n, 0.0)
    assert best_bounds is not None
    return _result(best_bounds, cache, cfg)


# ---------------------------------------------------------------- dispatch


_SOLVER_FNS = {
    "exact_dp": exact_dp,
    "recursive": recursive,
    "binary": binary,
    "brute_force": brute_force,
}


def segment(seq: FeatureSequence, cfg: SegSolverConfig) -> Segmentation:
    return _SOLVER_FNS[cfg.solver](seq, cfg)
