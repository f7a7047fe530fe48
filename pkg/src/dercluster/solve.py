"""Exact minimax-variance clustering solvers and the random-assignment baseline.

All three optimisation models search canonical partitions (cluster labels
in first-use order), so each partition is visited at most once:

* ``solve_brute_force`` tabulates the variance of every DER subset and scans
  every partition into at most K blocks.
* ``solve_covariance`` minimises the same true objective by branch and bound,
  using the pairwise covariances directly.
* ``solve_proxy`` minimises ``a*y + b*z`` where ``y`` is the largest per-cluster
  variance sum and ``z`` the largest |sum of corr * variance|.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

from dercluster.core import (
    ClusterAssignment,
    InstanceStats,
    Model,
    ScalabilityError,
    SearchDiagnostics,
    SolveReport,
    SolverConfig,
    canonicalize,
)
from dercluster.stats import per_cluster_variances, proxy_objective

BRUTE_FORCE_MAX_DERS = 22
MC_BLOCK_SIZE = 1024
_CLOCK_CHECK_EVERY = 512


class _Timeout(Exception):
    pass


def iter_partitions(n: int, k: int) -> Iterator[tuple]:
    """Yield every canonical label vector of ``n`` items with at most ``k`` blocks, in lexicographic order."""
    if n == 0:
        yield ()
        return
    labels = [0] * n
    maxes = [0] * n  # maxes[i] = 1 + max(labels[:i+1])

    def rec(i: int):
        if i == n:
            yield tuple(labels)
            return
        used = maxes[i - 1]
        for c in range(min(used + 1, k)):
            labels[i] = c
            maxes[i] = max(used, c + 1)
            yield from rec(i + 1)

    maxes[0] = 1
    yield from rec(1)


def stirling2(n: int, k: int) -> int:
    """Number of partitions of n items into exactly k nonempty blocks."""
    row = [1] + [0] * k  # S(0, j)
    for i in range(1, n + 1):
        new = [0] * (k + 1)
        for j in range(1, min(i, k) + 1):
            new[j] = j * row[j] + row[j - 1]
        row = new
    return row[k]


def count_partitions(n: int, k: int) -> int:
    return sum(stirling2(n, j) for j in range(1, k + 1)) if n else 1


def model_size(n: int) -> dict:
    """Binary-variable counts the equivalent MILPs would carry per cluster."""
    return {
        "covariance_pair_binaries": math.comb(n, 2),
        "covariance_pair_constraints": 3 * math.comb(n, 2),
        "brute_force_subset_binaries": 2 ** n - 1,
    }


def _deadline(config: SolverConfig) -> float:
    return math.inf if config.time_limit is None else time.perf_counter() + config.time_limit


def _report(model, stats, labels, k, objective, t0, diag) -> SolveReport:
    assignment = canonicalize(labels, k)
    per_cluster = per_cluster_variances(stats, assignment)
    return SolveReport(
        model=model,
        assignment=assignment,
        max_true_variance=float(per_cluster[: assignment.num_used].max()) if stats.n else 0.0,
        model_objective=float(objective),
        per_cluster_variance=per_cluster,
        solve_time=time.perf_counter() - t0,
        nodes_explored=diag.nodes_explored,
        diagnostics=diag,
    )


# --------------------------------------------------------------------------
# brute force


def subset_variance_table(cov: np.ndarray) -> np.ndarray:
    """Variance of the summed profile for every subset, indexed by bitmask."""
    n = cov.shape[0]
    table = np.zeros(1 << n)
    for i in range(n):
        # subset sums of cov[i, :i] over all masks of the lower i bits
        cross = np.zeros(1)
        for j in range(i):
            cross = np.concatenate([cross, cross + cov[i, j]])
        table[1 << i: 1 << (i + 1)] = table[: 1 << i] + cov[i, i] + 2.0 * cross
    return table


def solve_brute_force(stats: InstanceStats, k: Optional[int] = None,
                      config: Optional[SolverConfig] = None) -> SolveReport:
    """Exhaustively scan all partitions into at most K clusters.

    Among equally good partitions the lexicographically smallest canonical
    label vector is returned.
    """
    config = config or SolverConfig()
    k = config.max_clusters if k is None else k
    n = stats.n
    if n > BRUTE_FORCE_MAX_DERS:
        raise ScalabilityError(
            f"brute force refuses n={n} > {BRUTE_FORCE_MAX_DERS} DERs; the subset "
            f"enumeration grows as 2^n and the partition scan faster still"
        )
    t0 = time.perf_counter()
    deadline = _deadline(config)
    diag = SearchDiagnostics()
    if n == 0:
        diag.proof_of_optimality = True
        return _report(Model.BRUTE_FORCE, stats, [], k, 0.0, t0, diag)

    table = subset_variance_table(np.asarray(stats.covariance)).tolist()
    best = [math.inf, None]
    labels = [0] * n
    masks = [0] * k
    counter = [0]

    def rec(i: int, used: int):
        if i == n:
            counter[0] += 1
            val = max(table[masks[c]] for c in range(used))
            if val < best[0]:
                best[0] = val
                best[1] = labels.copy()
                diag.incumbent_history.append((val, time.perf_counter() - t0))
            if counter[0] % _CLOCK_CHECK_EVERY == 0 and time.perf_counter() > deadline:
                raise _Timeout
            return
        bit = 1 << i
        for c in range(min(used + 1, k)):
            labels[i] = c
            masks[c] |= bit
            rec(i + 1, max(used, c + 1))
            masks[c] &= ~bit

    masks[0] = 1
    try:
        rec(1, 1)
        diag.proof_of_optimality = True
    except _Timeout:
        pass
    diag.nodes_explored = counter[0]
    return _report(Model.BRUTE_FORCE, stats, best[1], k, best[0], t0, diag)


# --------------------------------------------------------------------------
# local search used to seed the branch-and-bound incumbents


def _local_search(n, k, order, objective):
    """Greedy construction in ``order`` followed by single-move descent."""
    labels = [-1] * n
    for i in order:
        best_c, best_v = 0, math.inf
        for c in range(k):
            labels[i] = c
            v = objective(labels)
            if v < best_v:
                best_c, best_v = c, v
        labels[i] = best_c
    current = objective(labels)
    improved = True
    while improved:
        improved = False
        for i in order:
            home = labels[i]
            for c in range(k):
                if c == home:
                    continue
                labels[i] = c
                v = objective(labels)
                if v < current:
                    current, home, improved = v, c, True
            labels[i] = home
    return labels, current


# --------------------------------------------------------------------------
# covariance model


def solve_covariance(stats: InstanceStats, k: Optional[int] = None,
                     config: Optional[SolverConfig] = None) -> SolveReport:
    """Branch and bound on the maximum cluster variance computed from pairwise covariances.

    DERs are placed one at a time into an already opened cluster or, while
    fewer than K are open, into a new one. A node's bound is, per cluster,
    its current variance plus every still-unassigned DER's most favourable
    (negative) covariance with it; the bound is admissible because the
    variance of any set of later additions is itself nonnegative.
    """
    config = config or SolverConfig()
    k = config.max_clusters if k is None else k
    n = stats.n
    t0 = time.perf_counter()
    deadline = _deadline(config)
    diag = SearchDiagnostics()
    if n == 0:
        diag.proof_of_optimality = True
        return _report(Model.COVARIANCE, stats, [], k, 0.0, t0, diag)

    cov = np.array(stats.covariance, dtype=float)
    var = np.diag(cov).copy()
    order = sorted(range(n), key=lambda i: (-var[i], i))

    def true_objective(labels):
        lab = np.asarray(labels)
        vals = [cov[np.ix_(lab == c, lab == c)].sum() for c in range(k) if np.any(lab == c)]
        return max(vals)

    seed_labels, seed_value = _local_search(n, k, order, true_objective)
    best_value = seed_value
    best_labels = list(seed_labels)
    diag.incumbent_history.append((best_value, time.perf_counter() - t0))

    keep = 1.0 - config.rel_gap
    remaining = np.ones(n, dtype=bool)
    cvar = [0.0] * k
    cross = [np.zeros(n) for _ in range(k)]  # cross[c][u] = sum_{j in c} cov[j, u]
    neg = [0.0] * k  # sum over remaining u of min(0, 2 cross[c][u])
    labels = [-1] * n
    nodes = 0
    pruned = 0

    def rec(depth: int, used: int):
        nonlocal best_value, best_labels, nodes, pruned
        nodes += 1
        if nodes % _CLOCK_CHECK_EVERY == 0 and time.perf_counter() > deadline:
            raise _Timeout
        if depth == n:
            val = max(cvar[:used])
            if val < best_value:
                best_value = val
                best_labels = labels.copy()
                diag.incumbent_history.append((val, time.perf_counter() - t0))
            return
        i = order[depth]
        remaining[i] = False
        # bound of each open cluster once i is no longer "remaining"
        base = [cvar[c] + neg[c] - min(0.0, 2.0 * cross[c][i]) for c in range(used)]
        options = list(range(min(used + 1, k)))
        children = []
        for c in options:
            if c < used:
                newcross = cross[c] + cov[i]
                newvar = cvar[c] + var[i] + 2.0 * cross[c][i]
            else:
                newcross = cov[i].copy()
                newvar = var[i]
            newneg = 2.0 * float(np.minimum(newcross[remaining], 0.0).sum())
            others = max((base[o] for o in range(used) if o != c), default=0.0)
            bound = max(newvar + newneg, others, 0.0)
            if bound >= best_value * keep:
                pruned += 1
                continue
            children.append((bound, c, newcross, newvar, newneg))
        children.sort(key=lambda ch: (ch[0], ch[1]))
        for bound, c, newcross, newvar, newneg in children:
            if bound >= best_value * keep:
                pruned += 1
                continue
            saved = (cvar[c], cross[c], neg[c])
            neg_others = [neg[o] for o in range(used)]
            for o in range(used):
                if o != c:
                    neg[o] -= min(0.0, 2.0 * cross[o][i])
            cvar[c], cross[c], neg[c] = newvar, newcross, newneg
            labels[i] = c
            rec(depth + 1, max(used, c + 1))
            cvar[c], cross[c], neg[c] = saved
            for o in range(used):
                neg[o] = neg_others[o]
        labels[i] = -1
        remaining[i] = True

    try:
        rec(0, 0)
        diag.proof_of_optimality = config.rel_gap == 0.0
    except _Timeout:
        pass
    diag.nodes_explored = nodes
    diag.nodes_pruned = pruned
    report = _report(Model.COVARIANCE, stats, best_labels, k, 0.0, t0, diag)
    return _with_objective(report, report.max_true_variance)


def _with_objective(report: SolveReport, objective: float) -> SolveReport:
    return SolveReport(
        model=report.model,
        assignment=report.assignment,
        max_true_variance=report.max_true_variance,
        model_objective=objective,
        per_cluster_variance=report.per_cluster_variance,
        solve_time=report.solve_time,
        nodes_explored=report.nodes_explored,
        diagnostics=report.diagnostics,
    )


# --------------------------------------------------------------------------
# proxy model


def solve_proxy(stats: InstanceStats, k: Optional[int] = None,
                config: Optional[SolverConfig] = None) -> SolveReport:
    """Branch and bound on ``a*y + b*z``, the covariance-proxy objective.

    ``y`` is bounded below by the largest current variance sum and by the
    average load ``sum(var)/K``; ``z`` by each cluster's |signed sum| after
    the remaining opposite-signed mass is spent on it, and by ``|sum(signed)|/K``.
    """
    config = config or SolverConfig()
    k = config.max_clusters if k is None else k
    if stats.feature_corr is None:
        raise ValueError("solve_proxy needs feature correlations in the instance stats")
    a, b = config.weight_a, config.weight_b
    n = stats.n
    t0 = time.perf_counter()
    deadline = _deadline(config)
    diag = SearchDiagnostics()
    if n == 0:
        diag.proof_of_optimality = True
        return _report(Model.PROXY, stats, [], k, 0.0, t0, diag)

    var = [float(v) for v in stats.variances]
    sig = [float(r) * v for r, v in zip(stats.feature_corr, var)]
    order = sorted(range(n), key=lambda i: (-(var[i] + abs(sig[i])), i))

    def objective(labels):
        vs = [0.0] * k
        ss = [0.0] * k
        for i, c in enumerate(labels):
            if c >= 0:
                vs[c] += var[i]
                ss[c] += sig[i]
        return a * max(vs) + b * max(abs(s) for s in ss)

    seed_labels, seed_value = _local_search(n, k, order, objective)
    best_value = seed_value
    best_labels = list(seed_labels)
    diag.incumbent_history.append((best_value, time.perf_counter() - t0))

    y_floor = math.fsum(var) / k
    z_floor = abs(math.fsum(sig)) / k
    # suffix sums over the search order of remaining positive/negative signed mass
    pos_after = [0.0] * (n + 1)
    neg_after = [0.0] * (n + 1)
    for d in range(n - 1, -1, -1):
        s = sig[order[d]]
        pos_after[d] = pos_after[d + 1] + max(s, 0.0)
        neg_after[d] = neg_after[d + 1] + max(-s, 0.0)

    keep = 1.0 - config.rel_gap
    vsum = [0.0] * k
    ssum = [0.0] * k
    labels = [-1] * n
    nodes = 0
    pruned = 0

    # Adding DER j moves a*V + b*|S| of its cluster by at least a*v_j - b*|s_j|,
    # and |s_j| <= v_j, so per-cluster a*V + b*|S| can fall by at most
    # (b - a) * (remaining |s| mass).
    slack = max(0.0, b - a)

    def bound_at(depth: int, used: int) -> float:
        pos, negm = pos_after[depth], neg_after[depth]
        y = max(max(vsum[:used], default=0.0), y_floor)
        z = z_floor
        joint = 0.0
        for c in range(used):
            s = ssum[c]
            zc = s - negm if s > 0 else -s - pos
            if zc > z:
                z = zc
            jc = a * vsum[c] + b * abs(s)
            if jc > joint:
                joint = jc
        return max(a * y + b * z, joint - slack * (pos + negm))

    def rec(depth: int, used: int):
        nonlocal best_value, best_labels, nodes, pruned
        nodes += 1
        if nodes % _CLOCK_CHECK_EVERY == 0 and time.perf_counter() > deadline:
            raise _Timeout
        if depth == n:
            val = a * max(vsum[:used]) + b * max(abs(s) for s in ssum[:used])
            if val < best_value:
                best_value = val
                best_labels = labels.copy()
                diag.incumbent_history.append((val, time.perf_counter() - t0))
            return
        i = order[depth]
        children = []
        for c in range(min(used + 1, k)):
            vsum[c] += var[i]
            ssum[c] += sig[i]
            bnd = bound_at(depth + 1, max(used, c + 1))
            vsum[c] -= var[i]
            ssum[c] -= sig[i]
            if bnd >= best_value * keep:
                pruned += 1
                continue
            children.append((bnd, c))
        children.sort()
        for bnd, c in children:
            if bnd >= best_value * keep:
                pruned += 1
                continue
            saved = (vsum[c], ssum[c])
            vsum[c] += var[i]
            ssum[c] += sig[i]
            labels[i] = c
            rec(depth + 1, max(used, c + 1))
            vsum[c], ssum[c] = saved
        labels[i] = -1

    try:
        rec(0, 0)
        diag.proof_of_optimality = config.rel_gap == 0.0
    except _Timeout:
        pass
    diag.nodes_explored = nodes
    diag.nodes_pruned = pruned
    report = _report(Model.PROXY, stats, best_labels, k, 0.0, t0, diag)
    value = proxy_objective(stats, report.assignment, config).objective
    return _with_objective(report, value)


# --------------------------------------------------------------------------
# Monte-Carlo baseline


@dataclass(frozen=True)
class MCResult:
    samples: np.ndarray  # sorted max-variance objectives
    best_assignment: ClusterAssignment
    best_value: float

    @property
    def n_mc(self) -> int:
        return int(self.samples.size)


def _mc_block(seed: int, block: int, n: int, k: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(block,)))
    return rng.integers(0, k, size=(MC_BLOCK_SIZE, n), dtype=np.int64)


def evaluate_labels(cov: np.ndarray, labels: np.ndarray, k: int) -> np.ndarray:
    """Max cluster variance for each row of an (m x n) label matrix."""
    out = np.zeros(labels.shape[0])
    for c in range(k):
        x = (labels == c).astype(float)
        out = np.maximum(out, np.einsum("ij,ij->i", x @ cov, x))
    return out


def mc_baseline(stats: InstanceStats, k: int, n_mc: int, seed: int = 0) -> MCResult:
    """Random cluster assignments, each DER uniform over K clusters.

    Samples are drawn in fixed blocks of ``MC_BLOCK_SIZE``; block ``b`` has its
    own stream spawned from ``(seed, b)``, so the sample at a given index does
    not depend on how blocks are distributed or on ``n_mc`` itself.
    """
    if n_mc < 1:
        raise ValueError("n_mc must be >= 1")
    cov = np.asarray(stats.covariance)
    n = stats.n
    n_blocks = -(-n_mc // MC_BLOCK_SIZE)
    values = np.empty(n_blocks * MC_BLOCK_SIZE)
    best_value, best_labels = math.inf, None
    for b in range(n_blocks):
        labels = _mc_block(seed, b, n, k)
        if b == n_blocks - 1:
            labels = labels[: n_mc - b * MC_BLOCK_SIZE]
        vals = evaluate_labels(cov, labels, k)
        values[b * MC_BLOCK_SIZE: b * MC_BLOCK_SIZE + vals.size] = vals
        j = int(np.argmin(vals))
        if vals[j] < best_value:
            best_value, best_labels = float(vals[j]), labels[j]
    samples = np.sort(values[:n_mc])
    samples.setflags(write=False)
    return MCResult(samples=samples, best_assignment=canonicalize(best_labels, k), best_value=best_value)


def solve_monte_carlo(stats: InstanceStats, k: Optional[int] = None,
                      config: Optional[SolverConfig] = None, n_mc: int = 10_000) -> SolveReport:
    """Best of ``n_mc`` random assignments, packaged as a solve report."""
    config = config or SolverConfig()
    k = config.max_clusters if k is None else k
    t0 = time.perf_counter()
    result = mc_baseline(stats, k, n_mc, config.rng_seed)
    diag = SearchDiagnostics(nodes_explored=n_mc)
    diag.incumbent_history.append((result.best_value, time.perf_counter() - t0))
    report = _report(Model.MONTE_CARLO_BEST, stats, result.best_assignment.cluster_of, k, 0.0, t0, diag)
    return _with_objective(report, report.max_true_variance)


def percentile_of(value: float, mc_sample, rtol: float = 1e-9) -> tuple:
    """Fractions of the sample strictly below and at-or-below ``value``.

    Sample values within ``rtol`` (relative to the largest magnitude involved)
    of ``value`` count as equal, since solver and sampler evaluate the same
    partition with different summation orders.
    """
    sample = np.asarray(mc_sample, dtype=float)
    if sample.size == 0:
        raise ValueError("empty Monte-Carlo sample")
    if np.any(np.diff(sample) < 0):
        sample = np.sort(sample)
    tol = rtol * max(abs(value), float(np.abs(sample).max()))
    strict = np.searchsorted(sample, value - tol, side="left") / sample.size
    leq = np.searchsorted(sample, value + tol, side="right") / sample.size
    return float(strict), float(leq)


SOLVERS = {
    Model.PROXY: solve_proxy,
    Model.COVARIANCE: solve_covariance,
    Model.BRUTE_FORCE: solve_brute_force,
    Model.MONTE_CARLO_BEST: solve_monte_carlo,
}


def solve(model, stats: InstanceStats, config: Optional[SolverConfig] = None, **kwargs) -> SolveReport:
    config = config or SolverConfig()
    return SOLVERS[Model(model)](stats, config.max_clusters, config, **kwargs)
