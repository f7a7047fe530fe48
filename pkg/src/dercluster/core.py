"""Domain types shared across the package.

Power is always carried in watts (generation negative, grid perspective) and
variances/covariances in watts squared.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from datetime import datetime
from typing import Iterable, Optional, Sequence

import numpy as np


class DerClusterError(Exception):
    """Base class for errors raised by this package."""


class DataError(DerClusterError, ValueError):
    """Malformed or inconsistent input data."""


class InvalidQueryError(DerClusterError, ValueError):
    """A bound query violates its preconditions."""


class ScalabilityError(DerClusterError):
    """The requested instance is beyond what a solver is allowed to attempt."""


class DerKind(str, enum.Enum):
    PV_GENERATOR = "pv_generator"
    LOAD = "load"


class Model(str, enum.Enum):
    PROXY = "proxy"
    COVARIANCE = "covariance"
    BRUTE_FORCE = "brute_force"
    MONTE_CARLO_BEST = "monte_carlo_best"


def _frozen_array(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


def _check_increasing(timestamps: Sequence[datetime], what: str) -> None:
    for a, b in zip(timestamps, timestamps[1:]):
        if not b > a:
            raise DataError(f"{what}: timestamps not strictly increasing at {b.isoformat()}")


@dataclass(frozen=True)
class DerProfile:
    """One DER's power series. Missing samples are NaN."""

    id: str
    kind: DerKind
    timestamps: tuple
    power: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "kind", DerKind(self.kind))
        object.__setattr__(self, "timestamps", tuple(self.timestamps))
        object.__setattr__(self, "power", _frozen_array(self.power))
        if len(self.timestamps) != len(self.power):
            raise DataError(f"profile {self.id!r}: {len(self.timestamps)} timestamps "
                            f"but {len(self.power)} samples")
        _check_increasing(self.timestamps, f"profile {self.id!r}")

    def __len__(self) -> int:
        return len(self.timestamps)


@dataclass(frozen=True)
class FeatureSeries:
    """An external feature (e.g. global radiation) observed at timestamps."""

    name: str
    timestamps: tuple
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "timestamps", tuple(self.timestamps))
        object.__setattr__(self, "values", _frozen_array(self.values))
        if len(self.timestamps) != len(self.values):
            raise DataError(f"feature {self.name!r}: length mismatch")
        _check_increasing(self.timestamps, f"feature {self.name!r}")

    def __len__(self) -> int:
        return len(self.timestamps)


@dataclass(frozen=True)
class InstanceStats:
    """Moments of n DERs estimated on one common timestamp window."""

    der_ids: tuple
    means: np.ndarray
    variances: np.ndarray
    covariance: np.ndarray
    feature_corr: Optional[np.ndarray] = None
    sample_count: int = 0
    kinds: Optional[tuple] = None

    def __post_init__(self):
        object.__setattr__(self, "der_ids", tuple(self.der_ids))
        for name in ("means", "variances", "covariance"):
            object.__setattr__(self, name, _frozen_array(getattr(self, name)))
        if self.feature_corr is not None:
            object.__setattr__(self, "feature_corr", _frozen_array(self.feature_corr))
        if self.kinds is not None:
            object.__setattr__(self, "kinds", tuple(DerKind(k) for k in self.kinds))
        self._validate()

    def _validate(self) -> None:
        n = len(self.der_ids)
        if len(set(self.der_ids)) != n:
            raise DataError("duplicate DER ids")
        if self.means.shape != (n,) or self.variances.shape != (n,):
            raise DataError("means/variances must be length-n vectors")
        cov = self.covariance
        if cov.shape != (n, n):
            raise DataError(f"covariance must be {n}x{n}, got {cov.shape}")
        if n == 0:
            return
        tol = 1e-8 * max(float(np.max(np.abs(cov))), 1e-300)
        if not np.allclose(cov, cov.T, rtol=0.0, atol=tol):
            raise DataError("covariance matrix is not symmetric")
        if not np.allclose(np.diag(cov), self.variances, rtol=0.0, atol=tol):
            raise DataError("covariance diagonal differs from variances")
        if np.any(self.variances < -tol):
            raise DataError("negative variance")
        if np.linalg.eigvalsh(cov).min() < -tol:
            raise DataError("covariance matrix is not positive semidefinite")
        sd = np.sqrt(np.clip(self.variances, 0.0, None))
        if np.any(np.abs(cov) > np.outer(sd, sd) + tol):
            raise DataError("covariance violates the Cauchy-Schwarz bound")
        if self.feature_corr is not None:
            if self.feature_corr.shape != (n,):
                raise DataError("feature_corr must be a length-n vector")
            if np.any(np.abs(self.feature_corr) > 1.0 + 1e-12):
                raise DataError("feature correlation outside [-1, 1]")
        if self.kinds is not None and len(self.kinds) != n:
            raise DataError("kinds must have one entry per DER")

    @property
    def n(self) -> int:
        return len(self.der_ids)

    def subset(self, indices: Sequence[int]) -> "InstanceStats":
        """Restrict to the DERs at ``indices`` (in the given order)."""
        idx = np.asarray(indices, dtype=int)
        return InstanceStats(
            der_ids=[self.der_ids[i] for i in idx],
            means=self.means[idx],
            variances=self.variances[idx],
            covariance=self.covariance[np.ix_(idx, idx)],
            feature_corr=None if self.feature_corr is None else self.feature_corr[idx],
            sample_count=self.sample_count,
            kinds=None if self.kinds is None else [self.kinds[i] for i in idx],
        )


def canonicalize(labels: Iterable[int], num_clusters_max: Optional[int] = None) -> "ClusterAssignment":
    """Relabel clusters in order of first use.

    >>> canonicalize([2, 2, 0, 1]).cluster_of
    (0, 0, 1, 2)
    """
    labels = [int(v) for v in labels]
    k = num_clusters_max if num_clusters_max is not None else (max(labels) + 1 if labels else 1)
    mapping = {}
    out = []
    for v in labels:
        if not 0 <= v < k:
            raise ValueError(f"cluster label {v} outside [0, {k})")
        if v not in mapping:
            mapping[v] = len(mapping)
        out.append(mapping[v])
    return ClusterAssignment(tuple(out), k)


def is_canonical(labels: Sequence[int]) -> bool:
    next_label = 0
    for v in labels:
        if v > next_label or v < 0:
            return False
        if v == next_label:
            next_label += 1
    return True


@dataclass(frozen=True)
class ClusterAssignment:
    """Partition of DERs into at most ``num_clusters_max`` clusters, canonically labelled."""

    cluster_of: tuple
    num_clusters_max: int

    def __post_init__(self):
        object.__setattr__(self, "cluster_of", tuple(int(v) for v in self.cluster_of))
        if self.num_clusters_max < 1:
            raise ValueError("num_clusters_max must be >= 1")
        if any(not 0 <= v < self.num_clusters_max for v in self.cluster_of):
            raise ValueError("cluster label outside [0, K)")
        if not is_canonical(self.cluster_of):
            raise ValueError("labels are not in canonical first-use order; use canonicalize()")

    @property
    def n(self) -> int:
        return len(self.cluster_of)

    @property
    def num_used(self) -> int:
        return max(self.cluster_of) + 1 if self.cluster_of else 0

    def members(self, cluster: int) -> list:
        return [i for i, c in enumerate(self.cluster_of) if c == cluster]

    def blocks(self) -> list:
        """Nonempty clusters as lists of DER indices, in label order."""
        return [self.members(c) for c in range(self.num_used)]

    def as_partition(self) -> frozenset:
        return frozenset(frozenset(b) for b in self.blocks())


@dataclass(frozen=True)
class SolverConfig:
    weight_a: float = 1.0
    weight_b: float = 1.0
    time_limit: Optional[float] = None
    rng_seed: int = 0
    max_clusters: int = 4
    rel_gap: float = 0.0  # prune nodes whose bound is within this fraction of the incumbent

    def __post_init__(self):
        if not 0.0 <= self.rel_gap < 1.0:
            raise ValueError("rel_gap must lie in [0, 1)")
        if not (self.weight_a > 0 and self.weight_b > 0):
            raise ValueError("weights a and b must be positive")
        if self.max_clusters < 1:
            raise ValueError("max_clusters must be >= 1")
        if self.time_limit is not None and self.time_limit <= 0:
            raise ValueError("time_limit must be positive")


@dataclass
class SearchDiagnostics:
    nodes_explored: int = 0
    nodes_pruned: int = 0
    incumbent_history: list = field(default_factory=list)
    proof_of_optimality: bool = False

    def to_dict(self) -> dict:
        return {
            "nodes_explored": self.nodes_explored,
            "nodes_pruned": self.nodes_pruned,
            "incumbent_history": [[float(v), float(t)] for v, t in self.incumbent_history],
            "proof_of_optimality": self.proof_of_optimality,
        }


@dataclass(frozen=True)
class SolveReport:
    model: Model
    assignment: ClusterAssignment
    max_true_variance: float
    model_objective: float
    per_cluster_variance: tuple
    solve_time: float
    nodes_explored: int
    diagnostics: Optional[SearchDiagnostics] = None

    def __post_init__(self):
        object.__setattr__(self, "model", Model(self.model))
        object.__setattr__(self, "per_cluster_variance", tuple(float(v) for v in self.per_cluster_variance))
        if self.per_cluster_variance and not math.isclose(
            self.max_true_variance, max(self.per_cluster_variance), rel_tol=1e-12, abs_tol=1e-12
        ):
            raise ValueError("max_true_variance must equal max(per_cluster_variance)")
        if any(v < -1e-9 * max(1.0, abs(self.max_true_variance)) for v in self.per_cluster_variance):
            raise ValueError("negative cluster variance")

    @property
    def proof_of_optimality(self) -> bool:
        return bool(self.diagnostics and self.diagnostics.proof_of_optimality)

    def to_dict(self, der_ids: Optional[Sequence[str]] = None, include_timing: bool = True) -> dict:
        d = {
            "model": self.model.value,
            "assignment": list(self.assignment.cluster_of),
            "max_clusters": self.assignment.num_clusters_max,
            "max_true_variance": float(self.max_true_variance),
            "model_objective": float(self.model_objective),
            "per_cluster_variance": list(self.per_cluster_variance),
            "nodes_explored": int(self.nodes_explored),
            "proof_of_optimality": self.proof_of_optimality,
        }
        if der_ids is not None:
            d["clusters"] = [[der_ids[i] for i in block] for block in self.assignment.blocks()]
        if include_timing:
            d["solve_time"] = float(self.solve_time)
            if self.diagnostics is not None:
                d["diagnostics"] = self.diagnostics.to_dict()
        return d


@dataclass(frozen=True)
class BoundQuery:
    """DER subset plus one quantile level per member."""

    member_indices: tuple
    quantile_levels: tuple

    def __post_init__(self):
        object.__setattr__(self, "member_indices", tuple(int(i) for i in self.member_indices))
        object.__setattr__(self, "quantile_levels", tuple(float(u) for u in self.quantile_levels))
        if len(self.member_indices) != len(self.quantile_levels):
            raise InvalidQueryError("one quantile level per member is required")
        if not self.member_indices:
            raise InvalidQueryError("empty member set")
        if len(set(self.member_indices)) != len(self.member_indices):
            raise InvalidQueryError("duplicate member index")
        if any(not 0.0 < u < 1.0 for u in self.quantile_levels):
            raise InvalidQueryError("quantile levels must lie in (0, 1)")

    @property
    def n_members(self) -> int:
        return len(self.member_indices)

    @property
    def w(self) -> float:
        return math.fsum(self.quantile_levels) + 1.0 - self.n_members
