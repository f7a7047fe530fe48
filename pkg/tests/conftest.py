import itertools

import numpy as np
import pytest

from dercluster.core import InstanceStats
from dercluster.ingest import SynthSpec, align, synthesize
from dercluster.stats import estimate


def random_instance(rng, n, t=60, with_feature=True):
    """Moments of a random correlated T x n sample; feature is a noisy mix of the columns."""
    mix = rng.normal(size=(n, n)) * rng.uniform(0.2, 3.0, size=n)
    x = rng.normal(size=(t, n)) @ mix + rng.normal(size=n) * 10
    feature = x @ rng.normal(size=n) + rng.normal(size=t) * 5 if with_feature else None
    return estimate(x, feature), x


def manual_stats(cov, corr=None, means=None):
    cov = np.asarray(cov, dtype=float)
    n = cov.shape[0]
    return InstanceStats(
        der_ids=[f"d{i}" for i in range(n)],
        means=np.zeros(n) if means is None else means,
        variances=np.diag(cov),
        covariance=cov,
        feature_corr=corr,
        sample_count=100,
    )


def enumerate_partitions(n, k):
    """Every set partition of range(n) into at most k blocks, from all k**n labelings."""
    seen = set()
    for labels in itertools.product(range(k), repeat=n):
        part = frozenset(frozenset(i for i in range(n) if labels[i] == c) for c in set(labels))
        if part not in seen:
            seen.add(part)
            yield part


@pytest.fixture(scope="session")
def small_pool():
    profiles, feature = synthesize(SynthSpec(n_pv=6, n_load=10, n_samples=800, rng_seed=3))
    return profiles, feature, align(profiles, feature)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES = []


def record_criterion(number, name, ok, detail):
    line = f"criterion {number} [{'PASS' if ok else 'FAIL'}] {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
