"""Moment estimation and cluster objective evaluation."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from dercluster.core import ClusterAssignment, DataError, InstanceStats, SolverConfig

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AggregateStats:
    mean: float
    variance: float
    std: float


def _pearson(matrix: np.ndarray, feature: np.ndarray) -> np.ndarray:
    xc = matrix - matrix.mean(axis=0)
    fc = feature - feature.mean()
    num = xc.T @ fc
    den = np.sqrt((xc * xc).sum(axis=0) * (fc @ fc))
    return np.clip(num / den, -1.0, 1.0)


def estimate(
    matrix,
    feature=None,
    der_ids: Optional[Sequence[str]] = None,
    kinds: Optional[Sequence] = None,
) -> InstanceStats:
    """Sample moments of a T x n aligned matrix.

    Variances and covariances use the unbiased (T - 1) divisor. When ``feature``
    is given, each column's Pearson correlation to it is included; a constant
    column or constant feature raises ``DataError``.
    """
    x = np.asarray(matrix, dtype=float)
    if x.ndim != 2:
        raise DataError("aligned matrix must be 2-D (T x n)")
    t, n = x.shape
    if t < 2:
        raise DataError(f"need at least 2 samples, got {t}")
    if not np.all(np.isfinite(x)):
        raise DataError("aligned matrix contains missing or non-finite values")
    ids = tuple(der_ids) if der_ids is not None else tuple(f"der{i}" for i in range(n))
    if len(ids) != n:
        raise DataError("der_ids length does not match matrix columns")

    cov = np.cov(x, rowvar=False, ddof=1).reshape(n, n)
    cov = 0.5 * (cov + cov.T)
    corr = None
    if feature is not None:
        f = np.asarray(feature, dtype=float)
        if f.shape != (t,):
            raise DataError("feature vector length must equal matrix rows")
        if np.ptp(f) == 0:
            raise DataError("feature is constant; correlation undefined")
        constant = [ids[j] for j in range(n) if np.ptp(x[:, j]) == 0]
        if constant:
            raise DataError(f"correlation undefined for constant DER series: {', '.join(constant)}")
        corr = _pearson(x, f)
    return InstanceStats(
        der_ids=ids,
        means=x.mean(axis=0),
        variances=np.diag(cov).copy(),
        covariance=cov,
        feature_corr=corr,
        sample_count=t,
        kinds=kinds,
    )


@dataclass(frozen=True)
class FeatureSelection:
    chosen: str
    mean_abs_corr: dict
    correlations: dict


def select_feature(profiles, candidates) -> FeatureSelection:
    """Pick the candidate feature with the highest mean |correlation| over DERs.

    Each candidate is aligned against the profiles on its own; candidates with
    no common timestamps are skipped with a warning. Ties go to the
    lexicographically smallest name.
    """
    from dercluster.ingest import align

    if not candidates:
        raise DataError("no candidate features")
    scores, table = {}, {}
    for feat in candidates:
        try:
            aligned = align(profiles, feat)
        except DataError as exc:
            log.warning("skipping feature %s: %s", feat.name, exc)
            continue
        if aligned.matrix.shape[0] < 2:
            log.warning("skipping feature %s: fewer than 2 common samples", feat.name)
            continue
        st = estimate(aligned.matrix, aligned.feature, der_ids=aligned.der_ids)
        table[feat.name] = dict(zip(st.der_ids, (float(c) for c in st.feature_corr)))
        scores[feat.name] = float(np.mean(np.abs(st.feature_corr)))
    if not scores:
        raise DataError("no candidate feature shares timestamps with the profiles")
    chosen = min(scores, key=lambda name: (-scores[name], name))
    return FeatureSelection(chosen=chosen, mean_abs_corr=scores, correlations=table)


def cluster_variance(stats: InstanceStats, members) -> float:
    """Variance of the summed profile of ``members``: all variances plus twice each pairwise covariance."""
    idx = np.asarray(list(members), dtype=int)
    if idx.size == 0:
        return 0.0
    if np.any(idx < 0) or np.any(idx >= stats.n):
        raise IndexError("member index out of range")
    sub = stats.covariance[np.ix_(idx, idx)]
    # sum over the full block = diagonal + 2 * upper triangle
    return float(sub.sum())


def per_cluster_variances(stats: InstanceStats, assignment: ClusterAssignment) -> np.ndarray:
    if assignment.n != stats.n:
        raise ValueError(f"assignment covers {assignment.n} DERs, stats has {stats.n}")
    out = np.zeros(assignment.num_clusters_max)
    for c, block in enumerate(assignment.blocks()):
        out[c] = cluster_variance(stats, block)
    return out


def max_cluster_variance(stats: InstanceStats, assignment: ClusterAssignment) -> float:
    return float(per_cluster_variances(stats, assignment)[: assignment.num_used].max())


@dataclass(frozen=True)
class ProxyValue:
    y: float
    z: float
    objective: float


def proxy_objective(stats: InstanceStats, assignment: ClusterAssignment,
                    config: Optional[SolverConfig] = None) -> ProxyValue:
    """Weighted sum of the largest cluster variance-sum and the largest |correlation-weighted variance| sum."""
    if stats.feature_corr is None:
        raise ValueError("proxy objective needs feature correlations")
    if assignment.n != stats.n:
        raise ValueError(f"assignment covers {assignment.n} DERs, stats has {stats.n}")
    config = config or SolverConfig()
    labels = np.asarray(assignment.cluster_of)
    k = assignment.num_clusters_max
    var_sum = np.bincount(labels, weights=stats.variances, minlength=k)
    signed = np.bincount(labels, weights=stats.feature_corr * stats.variances, minlength=k)
    y = float(var_sum.max())
    z = float(np.abs(signed).max())
    return ProxyValue(y=y, z=z, objective=config.weight_a * y + config.weight_b * z)


def aggregate_stats(stats: InstanceStats, members) -> AggregateStats:
    members = list(members)
    if not members:
        return AggregateStats(0.0, 0.0, 0.0)
    mean = math.fsum(float(stats.means[i]) for i in members)
    var = cluster_variance(stats, members)
    return AggregateStats(mean=mean, variance=var, std=math.sqrt(max(var, 0.0)))
