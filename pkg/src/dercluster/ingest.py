"""CSV ingestion, timestamp alignment and synthetic dataset generation.

Profiles CSV (wide)::

    timestamp,pv01,load01,...
    2019-06-01T09:15:00+02:00,-1523.5,804.0,...

Feature CSV::

    timestamp,value
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from datetime import date, datetime, timedelta
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from dercluster.core import DataError, DerKind, DerProfile, FeatureSeries


@dataclass(frozen=True)
class WindowFilter:
    """Calendar-date window (inclusive) and hour-of-day window ``[hour_start, hour_end)``.

    Both are evaluated on the local wall-clock time carried by each
    timestamp's own UTC offset. ``None`` leaves that side unrestricted.
    """

    date_start: Optional[date] = None
    date_end: Optional[date] = None
    hour_start: int = 0
    hour_end: int = 24

    def __post_init__(self):
        if not 0 <= self.hour_start < self.hour_end <= 24:
            raise ValueError(f"invalid hour window [{self.hour_start}, {self.hour_end})")
        if self.date_start and self.date_end and self.date_start > self.date_end:
            raise ValueError("date_start after date_end")

    def accepts(self, ts: datetime) -> bool:
        d = ts.date()
        if self.date_start is not None and d < self.date_start:
            return False
        if self.date_end is not None and d > self.date_end:
            return False
        return self.hour_start <= ts.hour < self.hour_end


NO_FILTER = WindowFilter()


def parse_timestamp(text: str) -> datetime:
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    try:
        ts = datetime.fromisoformat(text)
    except ValueError:
        raise DataError(f"malformed timestamp {text!r}") from None
    if ts.utcoffset() is None:
        raise DataError(f"timestamp {text!r} has no UTC offset")
    return ts


def format_timestamp(ts: datetime) -> str:
    return ts.isoformat()


def _parse_value(cell: str, where: str) -> float:
    cell = cell.strip()
    if cell == "":
        return math.nan
    try:
        return float(cell)
    except ValueError:
        raise DataError(f"non-numeric value {cell!r} at {where}") from None


def _format_value(v: float) -> str:
    return "" if math.isnan(v) else repr(float(v))


def infer_kind(der_id: str) -> DerKind:
    """Columns whose id starts with ``pv`` are generators, everything else a load."""
    return DerKind.PV_GENERATOR if der_id.lower().startswith("pv") else DerKind.LOAD


def _read_table(path) -> tuple:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = [r for r in reader if r and any(c.strip() for c in r)]
    if not header or header[0].lower() != "timestamp":
        raise DataError(f"{path}: first column must be 'timestamp'")
    seen = set()
    for name in header[1:]:
        if not name:
            raise DataError(f"{path}: empty column name")
        if name in seen:
            raise DataError(f"{path}: duplicate column {name!r}")
        seen.add(name)
    return path, header, rows


def load_profiles(path, filter: WindowFilter = NO_FILTER,
                  kinds: Optional[Mapping[str, DerKind]] = None) -> list:
    """Read a wide profiles CSV into one ``DerProfile`` per value column."""
    path, header, rows = _read_table(path)
    ids = header[1:]
    stamps, values = [], []
    for lineno, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise DataError(f"{path}:{lineno}: expected {len(header)} cells, got {len(row)}")
        ts = parse_timestamp(row[0])
        if not filter.accepts(ts):
            continue
        stamps.append(ts)
        values.append([_parse_value(c, f"{path}:{lineno}:{ids[j]}") for j, c in enumerate(row[1:])])
    data = np.array(values, dtype=float).reshape(len(stamps), len(ids))
    kinds = kinds or {}
    return [
        DerProfile(id=der_id, kind=kinds.get(der_id, infer_kind(der_id)),
                   timestamps=stamps, power=data[:, j])
        for j, der_id in enumerate(ids)
    ]


def load_feature(path, filter: WindowFilter = NO_FILTER, name: Optional[str] = None) -> FeatureSeries:
    path, header, rows = _read_table(path)
    if len(header) != 2:
        raise DataError(f"{path}: feature CSV must have columns timestamp,value")
    stamps, vals = [], []
    for lineno, row in enumerate(rows, start=2):
        if len(row) != 2:
            raise DataError(f"{path}:{lineno}: expected 2 cells")
        ts = parse_timestamp(row[0])
        if filter.accepts(ts):
            stamps.append(ts)
            vals.append(_parse_value(row[1], f"{path}:{lineno}"))
    return FeatureSeries(name=name or path.stem, timestamps=stamps, values=vals)


def write_profiles(path, profiles: Sequence[DerProfile]) -> None:
    """Write profiles as a wide CSV over the union of their timestamps."""
    ids = [p.id for p in profiles]
    if len(set(ids)) != len(ids):
        raise DataError("duplicate profile ids")
    stamps = sorted({ts for p in profiles for ts in p.timestamps})
    lookup = [dict(zip(p.timestamps, p.power.tolist())) for p in profiles]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", *ids])
        for ts in stamps:
            w.writerow([format_timestamp(ts), *(_format_value(m.get(ts, math.nan)) for m in lookup)])


def write_feature(path, feature: FeatureSeries) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", "value"])
        for ts, v in zip(feature.timestamps, feature.values.tolist()):
            w.writerow([format_timestamp(ts), _format_value(v)])


@dataclass(frozen=True)
class AlignedData:
    """T x n power matrix, length-T feature vector and the shared timestamps."""

    matrix: np.ndarray
    feature: Optional[np.ndarray]
    timestamps: tuple
    der_ids: tuple
    kinds: tuple

    def columns(self, ids: Sequence[str]) -> "AlignedData":
        pos = {d: j for j, d in enumerate(self.der_ids)}
        idx = [pos[d] for d in ids]
        return AlignedData(self.matrix[:, idx], self.feature, self.timestamps,
                           tuple(ids), tuple(self.kinds[j] for j in idx))


def _present(timestamps, values) -> set:
    return {ts for ts, v in zip(timestamps, values) if not math.isnan(v)}


def align(profiles: Sequence[DerProfile], feature: Optional[FeatureSeries] = None) -> AlignedData:
    """Restrict all series to the timestamps where every one of them has data."""
    if not profiles:
        raise DataError("no profiles to align")
    common = _present(profiles[0].timestamps, profiles[0].power)
    for p in profiles[1:]:
        common &= _present(p.timestamps, p.power)
    if feature is not None:
        common &= _present(feature.timestamps, feature.values)
    if not common:
        raise DataError("profiles and feature share no timestamp with complete data")
    stamps = sorted(common)
    cols = []
    for p in profiles:
        pos = {ts: j for j, ts in enumerate(p.timestamps)}
        cols.append(p.power[[pos[ts] for ts in stamps]])
    feat = None
    if feature is not None:
        pos = {ts: j for j, ts in enumerate(feature.timestamps)}
        feat = feature.values[[pos[ts] for ts in stamps]].copy()
    return AlignedData(
        matrix=np.column_stack(cols),
        feature=feat,
        timestamps=tuple(stamps),
        der_ids=tuple(p.id for p in profiles),
        kinds=tuple(p.kind for p in profiles),
    )


# --------------------------------------------------------------------------
# synthetic data


@dataclass(frozen=True)
class SynthSpec:
    """Shape of a synthetic DER pool.

    PV correlations to the feature are negative (generation counts as
    negative power); loads are mostly weakly correlated.
    """

    n_pv: int = 14
    n_load: int = 36
    n_samples: int = 5000
    pv_corr_range: tuple = (-0.95, -0.7)
    load_corr_range: tuple = (-0.4, 0.3)
    pv_variance_range: tuple = (1.0e6, 2.5e7)
    load_variance_range: tuple = (2.5e5, 1.6e7)
    rng_seed: int = 0
    start: str = "2019-03-31T09:00:00+02:00"

    def __post_init__(self):
        for name in ("pv_corr_range", "load_corr_range", "pv_variance_range", "load_variance_range"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        if self.n_pv < 0 or self.n_load < 0:
            raise DataError("DER counts must be >= 0")
        if self.n_samples < 2:
            raise DataError("n_samples must be >= 2")
        lo, hi = self.pv_corr_range
        if not -1.0 <= lo <= hi <= -0.5:
            raise DataError("pv_corr_range must be an ordered sub-range of [-1, -0.5]")
        lo, hi = self.load_corr_range
        if not -0.5 <= lo <= hi <= 0.6:
            raise DataError("load_corr_range must be an ordered sub-range of [-0.5, 0.6]")
        for name in ("pv_variance_range", "load_variance_range"):
            lo, hi = getattr(self, name)
            if not 0.0 < lo <= hi:
                raise DataError(f"{name} must be ordered and positive")

    @classmethod
    def from_dict(cls, d: Mapping) -> "SynthSpec":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise DataError(f"unknown synthetic spec fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "SynthSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def synth_timestamps(n: int, start: str) -> list:
    """15-minute steps between 09:00 and 18:00 local time on consecutive days."""
    t = parse_timestamp(start).replace(hour=9, minute=0, second=0, microsecond=0)
    out = []
    step = timedelta(minutes=15)
    while len(out) < n:
        day = t
        for _ in range(36):
            out.append(day)
            day += step
            if len(out) == n:
                break
        t += timedelta(days=1)
    return out


def _standardize(x: np.ndarray) -> np.ndarray:
    x = x - x.mean()
    return x / x.std(ddof=1)


def synthesize(spec: SynthSpec) -> tuple:
    """Generate ``(profiles, feature)`` with prescribed variances and feature correlations.

    Each DER is ``mean + b * F + e`` with the noise ``e`` orthogonalised
    against the feature in-sample, so the realised sample variance and the
    Pearson correlation to the feature equal their drawn targets.
    """
    rng = np.random.default_rng(spec.rng_seed)
    n = spec.n_samples
    stamps = synth_timestamps(n, spec.start)
    day = np.array([(ts.date() - stamps[0].date()).days for ts in stamps], dtype=float)
    minute = np.array([ts.hour * 60 + ts.minute - 9 * 60 for ts in stamps], dtype=float)
    seasonal = 1.0 + 0.3 * np.sin(2.0 * np.pi * (day + 80.0) / 365.0)
    diurnal = np.sin(np.pi * (minute + 7.5) / (9 * 60))
    clouds = rng.uniform(0.35, 1.0, size=n)
    radiation = np.clip(750.0 * seasonal * diurnal * clouds + rng.normal(0.0, 40.0, n), 0.0, None)
    if np.ptp(radiation) == 0:
        raise DataError("degenerate synthetic feature")
    f_std = _standardize(radiation)

    kinds = [DerKind.PV_GENERATOR] * spec.n_pv + [DerKind.LOAD] * spec.n_load
    ids = [f"pv{j + 1:02d}" for j in range(spec.n_pv)] + [f"load{j + 1:02d}" for j in range(spec.n_load)]
    profiles = []
    for der_id, kind in zip(ids, kinds):
        if kind is DerKind.PV_GENERATOR:
            rho = rng.uniform(*spec.pv_corr_range)
            variance = rng.uniform(*spec.pv_variance_range)
            mean = -rng.uniform(1500.0, 6000.0)
        else:
            rho = rng.uniform(*spec.load_corr_range)
            variance = rng.uniform(*spec.load_variance_range)
            mean = rng.uniform(1000.0, 15000.0)
        e = rng.normal(size=n)
        e = e - e.mean()
        e = e - (e @ f_std) / (f_std @ f_std) * f_std
        e = e / e.std(ddof=1)
        series = mean + math.sqrt(variance) * (rho * f_std + math.sqrt(1.0 - rho * rho) * e)
        profiles.append(DerProfile(id=der_id, kind=kind, timestamps=stamps, power=series))
    feature = FeatureSeries(name="global_radiation", timestamps=stamps, values=radiation)
    return profiles, feature
