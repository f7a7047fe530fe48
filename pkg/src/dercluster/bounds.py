"""Quantile-sum and standard-deviation bounds for DER aggregates.

For a cluster with members ``Y_i`` and levels ``u_i`` such that
``w = sum(u_i) + 1 - n_k >= 0``, the Frechet-Hoeffding lower copula bound
gives ``Q_Z(w) <= sum_i Q_{Y_i}(u_i)`` for the aggregate ``Z = sum_i Y_i``.
The one-sided Chebyshev (Cantelli) inequality then turns that quantile
upper bound into a lower bound on the aggregate standard deviation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from dercluster.core import BoundQuery, InvalidQueryError

DEFAULT_GRID_STEP = 0.01


def empirical_quantile(samples, u: float) -> float:
    """Linear interpolation between order statistics at position ``(T - 1) * u``."""
    if not 0.0 < u < 1.0:
        raise InvalidQueryError(f"quantile level {u} outside (0, 1)")
    x = np.sort(np.asarray(samples, dtype=float))
    if x.size < 2:
        raise InvalidQueryError("need at least 2 samples for an empirical quantile")
    pos = (x.size - 1) * u
    lo = int(math.floor(pos))
    hi = min(lo + 1, x.size - 1)
    frac = pos - lo
    return float(x[lo] + (x[hi] - x[lo]) * frac)


def chebyshev_std_lower(mean: float, quantile_upper: float, w: float) -> float:
    """``(mean - quantile_upper) * sqrt(w / (1 - w))``; a value <= 0 is vacuous."""
    if not 0.0 < w < 1.0:
        raise InvalidQueryError(f"w={w} must lie strictly inside (0, 1)")
    return (mean - quantile_upper) * math.sqrt(w / (1.0 - w))


@dataclass(frozen=True)
class BoundResult:
    query: BoundQuery
    quantile_sum: float
    w: float
    mean: float
    std_lower_bound: float

    @property
    def vacuous(self) -> bool:
        return self.std_lower_bound <= 0.0

    def to_dict(self, der_ids: Optional[Sequence[str]] = None) -> dict:
        d = {
            "member_indices": list(self.query.member_indices),
            "quantile_levels": list(self.query.quantile_levels),
            "w": self.w,
            "quantile_sum": self.quantile_sum,
            "aggregate_mean": self.mean,
            "std_lower_bound": self.std_lower_bound,
            "vacuous": self.vacuous,
        }
        if der_ids is not None:
            d["members"] = [der_ids[i] for i in self.query.member_indices]
        return d


def quantile_sum_bound(matrix, query: BoundQuery) -> BoundResult:
    """Upper bound on the aggregate's ``w`` quantile plus the implied std lower bound.

    ``matrix`` is the aligned T x n sample matrix; columns are picked by
    ``query.member_indices``.
    """
    x = np.asarray(matrix, dtype=float)
    w = query.w
    if w < -1e-12:
        raise InvalidQueryError(f"w = sum(u) + 1 - n_k = {w:.6g} is negative; no valid bound")
    w = max(w, 0.0)
    qsum = math.fsum(empirical_quantile(x[:, i], u)
                     for i, u in zip(query.member_indices, query.quantile_levels))
    mean = math.fsum(float(x[:, i].mean()) for i in query.member_indices)
    std_lb = 0.0 if w == 0.0 else chebyshev_std_lower(mean, qsum, w)
    return BoundResult(query=query, quantile_sum=qsum, w=w, mean=mean, std_lower_bound=std_lb)


def _required_level_sum(n_k: int, w_target: float) -> float:
    return w_target - 1.0 + n_k


def tighten_quantile_sum(matrix, members: Sequence[int], w_target: float,
                         step: float = DEFAULT_GRID_STEP, max_iter: int = 100_000) -> BoundQuery:
    """Shift quantile levels between members to lower the quantile sum at fixed ``w``.

    Starts from the uniform allocation and repeatedly applies the best
    single transfer of ``step`` from one member's level to another's until
    no transfer lowers the sum. The quantile functions need not be convex,
    so the result is a local minimum on the grid. Ties go to the lowest
    (donor, receiver) index pair.
    """
    members = [int(i) for i in members]
    if not members:
        raise InvalidQueryError("empty member set")
    if w_target < 0.0:
        raise InvalidQueryError("w_target must be >= 0")
    n_k = len(members)
    total = _required_level_sum(n_k, w_target)
    u0 = total / n_k
    if not 0.0 < u0 < 1.0:
        raise InvalidQueryError(f"w_target={w_target} needs levels outside (0, 1) for {n_k} members")
    if n_k == 1:
        return BoundQuery((members[0],), (u0,))

    x = np.asarray(matrix, dtype=float)
    cols = [np.sort(x[:, i]) for i in members]
    # levels held as integer grid offsets from the uniform start
    offsets = [0] * n_k
    cache = {}

    def q(j, off):
        key = (j, off)
        if key not in cache:
            cache[key] = empirical_quantile(cols[j], u0 + off * step)
        return cache[key]

    def valid(off):
        u = u0 + off * step
        return 0.0 < u < 1.0

    for _ in range(max_iter):
        best_gain, best_move = 1e-12 * (1.0 + abs(sum(q(j, offsets[j]) for j in range(n_k)))), None
        for d in range(n_k):
            if not valid(offsets[d] - 1):
                continue
            lose = q(d, offsets[d]) - q(d, offsets[d] - 1)
            for r in range(n_k):
                if r == d or not valid(offsets[r] + 1):
                    continue
                gain = lose - (q(r, offsets[r] + 1) - q(r, offsets[r]))
                if gain > best_gain:
                    best_gain, best_move = gain, (d, r)
        if best_move is None:
            break
        d, r = best_move
        offsets[d] -= 1
        offsets[r] += 1
    levels = [u0 + off * step for off in offsets]
    return BoundQuery(tuple(members), tuple(levels))
