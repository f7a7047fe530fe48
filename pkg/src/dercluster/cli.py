"""Command-line entry point: ``dercluster <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from datetime import date
from pathlib import Path

from dercluster import __version__
from dercluster.bounds import quantile_sum_bound, tighten_quantile_sum
from dercluster.core import BoundQuery, DerClusterError, SolverConfig
from dercluster.harness import (
    BenchmarkConfig,
    ScalabilityConfig,
    run_benchmark,
    run_scalability,
    write_benchmark,
    write_scalability,
)
from dercluster.ingest import (
    SynthSpec,
    WindowFilter,
    align,
    load_feature,
    load_profiles,
    synthesize,
    write_feature,
    write_profiles,
)
from dercluster.solve import model_size, solve
from dercluster.stats import estimate, select_feature

log = logging.getLogger("dercluster")

MODEL_ALIASES = {"proxy": "proxy", "covariance": "covariance", "brute": "brute_force",
                 "brute_force": "brute_force", "mc": "monte_carlo_best"}


def _hours(text: str) -> tuple:
    try:
        lo, hi = (int(v) for v in text.split("-"))
    except ValueError:
        raise argparse.ArgumentTypeError("hours must look like 9-18") from None
    return lo, hi


def _floats(text: str) -> list:
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _window(args) -> WindowFilter:
    lo, hi = args.hours if args.hours else (0, 24)
    return WindowFilter(
        date_start=date.fromisoformat(args.date_start) if args.date_start else None,
        date_end=date.fromisoformat(args.date_end) if args.date_end else None,
        hour_start=lo,
        hour_end=hi,
    )


def _add_data_args(p, feature: str = "single"):
    p.add_argument("--profiles", required=True, help="wide profiles CSV")
    if feature == "single":
        p.add_argument("--feature", required=True, help="feature CSV (timestamp,value)")
    elif feature == "many":
        p.add_argument("--feature", action="append", required=True,
                       help="candidate feature CSV; repeat to compare several")
    p.add_argument("--date-start", help="first calendar date kept (YYYY-MM-DD)")
    p.add_argument("--date-end", help="last calendar date kept (YYYY-MM-DD)")
    p.add_argument("--hours", type=_hours, help="hour-of-day window, e.g. 9-18 keeps [09:00, 18:00)")
    p.add_argument("--out", help="write JSON here instead of stdout")


def _emit(payload: dict, out) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_synth(args) -> int:
    spec = SynthSpec.from_json(args.spec) if args.spec else SynthSpec()
    profiles, feature = synthesize(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_profiles(out / "profiles.csv", profiles)
    write_feature(out / f"{feature.name}.csv", feature)
    print(out / "profiles.csv")
    print(out / f"{feature.name}.csv")
    return 0


def cmd_stats(args) -> int:
    window = _window(args)
    profiles = load_profiles(args.profiles, window)
    candidates = [load_feature(f, window) for f in args.feature]
    selection = select_feature(profiles, candidates)
    chosen = next(c for c in candidates if c.name == selection.chosen)
    data = align(profiles, chosen)
    st = estimate(data.matrix, data.feature, data.der_ids, data.kinds)
    _emit({
        "chosen_feature": selection.chosen,
        "feature_mean_abs_corr": selection.mean_abs_corr,
        "feature_correlations": selection.correlations,
        "sample_count": st.sample_count,
        "ders": [
            {"id": d, "kind": k.value, "mean": float(m), "variance": float(v), "feature_corr": float(c)}
            for d, k, m, v, c in zip(st.der_ids, st.kinds, st.means, st.variances, st.feature_corr)
        ],
        "covariance": st.covariance.tolist(),
    }, args.out)
    return 0


def cmd_bounds(args) -> int:
    profiles = load_profiles(args.profiles, _window(args))
    data = align(profiles)
    pos = {d: j for j, d in enumerate(data.der_ids)}
    try:
        members = [pos[m] for m in args.members.split(",")]
    except KeyError as exc:
        raise DerClusterError(f"unknown DER id {exc.args[0]!r}") from None
    if args.tighten is not None:
        query = tighten_quantile_sum(data.matrix, members, args.tighten)
    else:
        if args.levels is None:
            raise DerClusterError("give --levels or --tighten")
        levels = args.levels if len(args.levels) > 1 else args.levels * len(members)
        query = BoundQuery(members, levels)
    result = quantile_sum_bound(data.matrix, query)
    payload = result.to_dict(data.der_ids)
    payload["sample_count"] = len(data.timestamps)
    _emit(payload, args.out)
    return 0


def cmd_cluster(args) -> int:
    window = _window(args)
    profiles = load_profiles(args.profiles, window)
    feature = load_feature(args.feature, window)
    data = align(profiles, feature)
    st = estimate(data.matrix, data.feature, data.der_ids, data.kinds)
    a, b = args.weights
    config = SolverConfig(weight_a=a, weight_b=b, time_limit=args.time_limit,
                          rng_seed=args.seed, max_clusters=args.clusters, rel_gap=args.gap)
    model = MODEL_ALIASES[args.model]
    kwargs = {"n_mc": args.n_mc} if model == "monte_carlo_best" else {}
    report = solve(model, st, config, **kwargs)
    payload = report.to_dict(der_ids=st.der_ids)
    payload["model_size"] = model_size(st.n)
    payload["sample_count"] = st.sample_count
    _emit(payload, args.out)
    return 0


def _read_config(path) -> dict:
    return json.loads(Path(path).read_text())


def cmd_benchmark(args) -> int:
    raw = _read_config(args.config)
    if args.workers is not None:
        raw["workers"] = args.workers
    config = BenchmarkConfig.from_dict(raw)
    report = run_benchmark(config)
    for path in write_benchmark(report, args.out):
        print(path)
    return 0


def cmd_scale(args) -> int:
    raw = _read_config(args.config)
    if args.workers is not None:
        raw["workers"] = args.workers
    config = ScalabilityConfig.from_dict(raw)
    rows = run_scalability(config)
    print(write_scalability(rows, Path(args.out) / "scalability.csv"))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dercluster", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic DER dataset")
    p.add_argument("--spec", help="JSON file with SynthSpec fields")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("stats", help="per-DER moments, covariance and feature selection")
    _add_data_args(p, feature="many")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("bounds", help="quantile-sum and std lower bounds for a DER subset")
    _add_data_args(p, feature="none")
    p.add_argument("--members", required=True, help="comma-separated DER ids")
    p.add_argument("--levels", type=_floats, help="quantile level per member (or one for all)")
    p.add_argument("--tighten", type=float, metavar="W", help="search levels minimising the sum at this w")
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("cluster", help="solve one clustering instance")
    _add_data_args(p)
    p.add_argument("--model", choices=sorted(MODEL_ALIASES), default="proxy")
    p.add_argument("--clusters", type=int, default=4)
    p.add_argument("--weights", type=_floats, default=[1.0, 1.0], help="a,b")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--time-limit", type=float, help="seconds; the incumbent is reported when it expires")
    p.add_argument("--gap", type=float, default=0.0,
                   help="relative optimality gap for branch and bound (0 = exact)")
    p.add_argument("--n-mc", type=int, default=10_000, help="samples for --model mc")
    p.set_defaults(func=cmd_cluster)

    for name, func, helptext in (("benchmark", cmd_benchmark, "randomised percentile benchmark"),
                                 ("scale", cmd_scale, "solve-time scalability sweep")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--workers", type=int, help="parallel worker processes")
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if getattr(args, "weights", None) is not None and len(args.weights) != 2:
        parser.error("--weights takes exactly two values a,b")
    try:
        return args.func(args)
    except (DerClusterError, ValueError, FileNotFoundError, KeyError) as exc:
        print(f"dercluster: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
