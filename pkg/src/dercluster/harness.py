"""Randomised benchmark, scalability sweep and Monte-Carlo convergence protocols."""

from __future__ import annotations

import csv
import json
import logging
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from dercluster.core import DataError, DerKind, Model, ScalabilityError, SolverConfig
from dercluster.ingest import AlignedData, SynthSpec, WindowFilter, align, load_feature, load_profiles, synthesize
from dercluster.solve import BRUTE_FORCE_MAX_DERS, mc_baseline, percentile_of, solve
from dercluster.stats import estimate

log = logging.getLogger(__name__)

OPT_MODELS = (Model.PROXY.value, Model.COVARIANCE.value, Model.BRUTE_FORCE.value)


@dataclass(frozen=True)
class BenchmarkConfig:
    """Desk-scale defaults; the original protocol used m_opt=250 and n_mc=100000."""

    n_pv_per_run: int = 8
    n_load_per_run: int = 8
    max_clusters: int = 4
    m_opt: int = 50
    n_mc: int = 10_000
    weights: tuple = (1.0, 1.0)
    seed: int = 0
    models: tuple = ("proxy", "covariance")
    source: Mapping = field(default_factory=lambda: {"synth": {}})
    time_limit: Optional[float] = None
    workers: int = 1
    record_timing: bool = True

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(float(v) for v in self.weights))
        object.__setattr__(self, "models", tuple(Model(m).value for m in self.models))
        if self.m_opt < 1 or self.n_mc < 1:
            raise DataError("m_opt and n_mc must be >= 1")
        if len(self.weights) != 2:
            raise DataError("weights must be a pair a,b")
        bad = [m for m in self.models if m not in OPT_MODELS]
        if bad:
            raise DataError(f"benchmark models must be among {OPT_MODELS}, got {bad}")
        if self.n_pv_per_run < 0 or self.n_load_per_run < 0 or self.n_pv_per_run + self.n_load_per_run < 1:
            raise DataError("need at least one DER per run")

    @classmethod
    def from_dict(cls, d: Mapping) -> "BenchmarkConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise DataError(f"unknown benchmark config fields: {sorted(unknown)}")
        return cls(**d)

    def solver_config(self, seed: int = 0) -> SolverConfig:
        a, b = self.weights
        return SolverConfig(weight_a=a, weight_b=b, time_limit=self.time_limit,
                            rng_seed=seed, max_clusters=self.max_clusters)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["weights"] = list(self.weights)
        d["models"] = list(self.models)
        d["source"] = dict(self.source)
        d.pop("workers")
        return d


def load_source(source: Mapping) -> AlignedData:
    """Build the DER pool from ``{"synth": {...}}`` or ``{"profiles": path, "feature": path, "window": {...}}``."""
    if "synth" in source:
        spec = source["synth"]
        spec = spec if isinstance(spec, SynthSpec) else SynthSpec.from_dict(spec or {})
        profiles, feature = synthesize(spec)
        return align(profiles, feature)
    if "profiles" in source:
        window = source.get("window") or {}
        filt = WindowFilter(
            date_start=_date(window.get("date_start")),
            date_end=_date(window.get("date_end")),
            hour_start=int(window.get("hour_start", 0)),
            hour_end=int(window.get("hour_end", 24)),
        )
        profiles = load_profiles(source["profiles"], filt)
        feature = load_feature(source["feature"], filt) if source.get("feature") else None
        return align(profiles, feature)
    raise DataError("source must contain 'synth' or 'profiles'")


def _date(text):
    from datetime import date
    return None if text is None else date.fromisoformat(text)


def derive_seed(seed: int, *key: int) -> int:
    """Independent 63-bit seed for a sub-task identified by ``key``."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


def draw_subset(pool: AlignedData, n_pv: int, n_load: int, rng: np.random.Generator) -> list:
    """Stratified draw without replacement; returns column indices in pool order."""
    pv = [j for j, k in enumerate(pool.kinds) if k is DerKind.PV_GENERATOR]
    load = [j for j, k in enumerate(pool.kinds) if k is DerKind.LOAD]
    if n_pv > len(pv) or n_load > len(load):
        raise DataError(f"pool has {len(pv)} PV and {len(load)} loads; "
                        f"requested {n_pv} PV and {n_load} loads per run")
    chosen = list(rng.choice(pv, n_pv, replace=False)) if n_pv else []
    chosen += list(rng.choice(load, n_load, replace=False)) if n_load else []
    return sorted(int(j) for j in chosen)


def _run_stats(pool: AlignedData, cols: Sequence[int]):
    sub = pool.matrix[:, cols]
    return estimate(sub, pool.feature, der_ids=[pool.der_ids[j] for j in cols],
                    kinds=[pool.kinds[j] for j in cols])


def _solve_safely(model: str, stats, config: SolverConfig):
    try:
        report = solve(model, stats, config)
    except ScalabilityError as exc:
        return None, f"refused: {exc}"
    return report, "optimal" if report.proof_of_optimality else "time_limit"


def _benchmark_run(args) -> list:
    config, pool, run = args
    seed = derive_seed(config.seed, run)
    rng = np.random.default_rng(seed)
    cols = draw_subset(pool, config.n_pv_per_run, config.n_load_per_run, rng)
    stats = _run_stats(pool, cols)
    mc = mc_baseline(stats, config.max_clusters, config.n_mc, seed)
    records = []
    for model in config.models:
        report, status = _solve_safely(model, stats, config.solver_config(seed))
        rec = {
            "run": run,
            "run_seed": seed,
            "der_ids": list(stats.der_ids),
            "model": model,
            "status": status,
            "mc_min": float(mc.samples[0]),
            "mc_median": float(np.median(mc.samples)),
        }
        if report is None:
            rec.update(model_objective=None, max_true_variance=None, strict_pct=None,
                       leq_pct=None, nodes=None, solve_time=None)
        else:
            strict, leq = percentile_of(report.max_true_variance, mc.samples)
            rec.update(
                model_objective=report.model_objective,
                max_true_variance=report.max_true_variance,
                assignment=list(report.assignment.cluster_of),
                strict_pct=strict,
                leq_pct=leq,
                nodes=report.nodes_explored,
                solve_time=report.solve_time,
            )
        if not config.record_timing:
            rec.pop("solve_time")
        records.append(rec)
    return records


def _pool_map(fn, tasks, workers: int) -> list:
    if workers <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, tasks))


@dataclass
class BenchmarkReport:
    config: dict
    records: list
    summary: dict

    def to_dict(self) -> dict:
        return {"config": self.config, "records": self.records, "summary": self.summary}


def summarize(records: Sequence[Mapping], models: Sequence[str], timing: bool = True) -> dict:
    """Per-model summary; every value is recomputable from ``records``."""
    out = {}
    for model in models:
        rows = [r for r in records if r["model"] == model and r["leq_pct"] is not None]
        entry = {"runs": len(rows),
                 "runs_not_proven_optimal": sum(r["status"] != "optimal" for r in records if r["model"] == model)}
        if rows:
            leq = [r["leq_pct"] for r in rows]
            strict = [r["strict_pct"] for r in rows]
            entry.update(
                mean_leq_pct=statistics.fmean(leq),
                median_leq_pct=statistics.median(leq),
                mean_strict_pct=statistics.fmean(strict),
                median_strict_pct=statistics.median(strict),
                frac_runs_strict_pct_le_half=sum(s <= 0.5 for s in strict) / len(rows),
                # share of random assignments the solution matches or beats
                mean_beaten_or_tied=statistics.fmean(1.0 - s for s in strict),
                frac_runs_beating_half=sum(1.0 - q >= 0.5 for q in leq) / len(rows),
            )
            if timing:
                times = [r["solve_time"] for r in rows]
                entry.update(max_solve_time=max(times), mean_solve_time=statistics.fmean(times))
        out[model] = entry
    return out


def run_benchmark(config: BenchmarkConfig, pool: Optional[AlignedData] = None) -> BenchmarkReport:
    """Repeat draw -> estimate -> solve -> compare-to-random ``m_opt`` times."""
    pool = pool if pool is not None else load_source(config.source)
    tasks = [(config, pool, run) for run in range(config.m_opt)]
    per_run = _pool_map(_benchmark_run, tasks, config.workers)
    records = sorted((r for rs in per_run for r in rs), key=lambda r: (r["run"], config.models.index(r["model"])))
    summary = summarize(records, config.models, timing=config.record_timing)
    return BenchmarkReport(config=config.to_dict(), records=records, summary=summary)


RECORD_COLUMNS = ("run", "run_seed", "model", "status", "model_objective", "max_true_variance",
                  "strict_pct", "leq_pct", "mc_min", "mc_median", "nodes", "solve_time", "der_ids")


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return ";".join(str(x) for x in v)
    return str(v)


def write_benchmark(report: BenchmarkReport, out_dir) -> list:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    cols = [c for c in RECORD_COLUMNS if any(c in r for r in report.records)]
    with (out / "records.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in report.records:
            w.writerow([_cell(r.get(c)) for c in cols])
    return [out / "report.json", out / "records.csv"]


# --------------------------------------------------------------------------
# scalability


@dataclass(frozen=True)
class ScalabilityConfig:
    sweep: tuple = ((8, 8, 4),)
    repeats: int = 3
    models: tuple = OPT_MODELS
    seed: int = 0
    time_limit: Optional[float] = None
    weights: tuple = (1.0, 1.0)
    source: Mapping = field(default_factory=lambda: {"synth": {}})
    workers: int = 1
    record_timing: bool = True

    def __post_init__(self):
        object.__setattr__(self, "sweep", tuple(tuple(int(v) for v in cell) for cell in self.sweep))
        object.__setattr__(self, "models", tuple(Model(m).value for m in self.models))
        object.__setattr__(self, "weights", tuple(float(v) for v in self.weights))
        if self.repeats < 1:
            raise DataError("repeats must be >= 1")
        if any(len(cell) != 3 for cell in self.sweep):
            raise DataError("each sweep cell is [n_pv, n_load, clusters]")

    @classmethod
    def from_dict(cls, d: Mapping) -> "ScalabilityConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise DataError(f"unknown scalability config fields: {sorted(unknown)}")
        return cls(**d)


def _scalability_task(args) -> dict:
    config, pool, cell_idx, rep = args
    n_pv, n_load, k = config.sweep[cell_idx]
    seed = derive_seed(config.seed, cell_idx, rep)
    cols = draw_subset(pool, n_pv, n_load, np.random.default_rng(seed))
    stats = _run_stats(pool, cols)
    a, b = config.weights
    solver_config = SolverConfig(weight_a=a, weight_b=b, time_limit=config.time_limit,
                                 rng_seed=seed, max_clusters=k)
    out = {}
    for model in config.models:
        report, status = _solve_safely(model, stats, solver_config)
        out[model] = (status, None if report is None else report.solve_time,
                      None if report is None else report.nodes_explored,
                      None if report is None else report.max_true_variance)
    return out


SCALABILITY_COLUMNS = ("n_pv", "n_load", "n_ders", "clusters", "model", "repeats", "status",
                       "optimal_runs", "max_nodes", "mean_nodes", "max_time", "mean_time")


def run_scalability(config: ScalabilityConfig, pool: Optional[AlignedData] = None) -> list:
    """Per (cell, model) timing rows shaped like a max-solution-time table.

    Brute force is refused above the DER guard without being attempted.
    """
    pool = pool if pool is not None else load_source(config.source)
    tasks = [(config, pool, c, r) for c in range(len(config.sweep)) for r in range(config.repeats)]
    results = _pool_map(_scalability_task, tasks, config.workers)
    rows = []
    for c, (n_pv, n_load, k) in enumerate(config.sweep):
        cell = results[c * config.repeats:(c + 1) * config.repeats]
        for model in config.models:
            entries = [res[model] for res in cell]
            solved = [e for e in entries if e[1] is not None]
            row = {"n_pv": n_pv, "n_load": n_load, "n_ders": n_pv + n_load, "clusters": k,
                   "model": model, "repeats": config.repeats}
            if model == Model.BRUTE_FORCE.value and n_pv + n_load > BRUTE_FORCE_MAX_DERS:
                row["status"] = "refused"
            elif not solved:
                row["status"] = "refused"
            else:
                row["status"] = "optimal" if all(e[0] == "optimal" for e in entries) else "time_limit"
            row["optimal_runs"] = sum(e[0] == "optimal" for e in entries)
            nodes = [e[2] for e in solved]
            times = [e[1] for e in solved]
            row["max_nodes"] = max(nodes) if nodes else None
            row["mean_nodes"] = statistics.fmean(nodes) if nodes else None
            if config.record_timing:
                row["max_time"] = max(times) if times else None
                row["mean_time"] = statistics.fmean(times) if times else None
            rows.append(row)
    return rows


def write_scalability(rows: Sequence[Mapping], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cols = [c for c in SCALABILITY_COLUMNS if any(c in r for r in rows)]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([_cell(r.get(c)) for c in cols])
    return path


# --------------------------------------------------------------------------
# Monte-Carlo convergence


def mc_convergence_check(stats, k: int, seeds: Sequence[int], sizes: Sequence[int],
                         reference: Optional[float] = None) -> list:
    """Standard error of the strict percentile estimate at each MC sample size.

    Each (seed, size) pair uses its own derived stream. Without an explicit
    ``reference`` objective, the median of a separate pilot sample is used.
    """
    sizes = [int(s) for s in sizes]
    if any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise ValueError("sizes must be strictly increasing")
    if reference is None:
        pilot = mc_baseline(stats, k, max(sizes), derive_seed(0, 2 ** 31 - 1))
        reference = float(np.median(pilot.samples))
    rows = []
    prev = None
    for size in sizes:
        est = [percentile_of(reference, mc_baseline(stats, k, size, derive_seed(s, size)).samples)[0]
               for s in seeds]
        se = statistics.stdev(est) if len(est) > 1 else 0.0
        ratio = prev / se if prev is not None and se > 0 else None
        rows.append({"n_mc": size, "mean_strict_pct": statistics.fmean(est),
                     "std_error": se, "reduction_vs_previous": ratio})
        prev = se
    return rows
