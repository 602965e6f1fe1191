"""Exogenous load/PV time series: CSV ingestion, synthesis, drift, splits.

The hourly series drives the stochastic half of the microgrid MDP. The
synthetic generator replaces field measurements with an evening-peaking load
(daily sinusoid + AR(1) noise) and a clear-sky half-sine PV profile gated by
daylight, modulated by a yearly season factor and per-day clearness noise.
Day 0 is mid "summer" (high PV); the season trough sits half a year later.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

HOUR = np.timedelta64(1, "h")
CSV_SCHEMA = ("timestamp", "load_kw", "pv_kw")


class DataError(ValueError):
    """Malformed or inconsistent exogenous data."""


@dataclass(frozen=True)
class ExogenousSeries:
    timestamps: np.ndarray  # datetime64[s], strictly increasing, constant step
    load_kw: np.ndarray
    pv_kw: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "timestamps", np.asarray(self.timestamps, dtype="datetime64[s]"))
        object.__setattr__(self, "load_kw", np.asarray(self.load_kw, dtype=np.float64))
        object.__setattr__(self, "pv_kw", np.asarray(self.pv_kw, dtype=np.float64))
        n = self.timestamps.size
        if self.load_kw.size != n or self.pv_kw.size != n:
            raise DataError("timestamps, load_kw and pv_kw must have equal length")
        if n == 0:
            raise DataError("empty series")
        for name, v in (("load_kw", self.load_kw), ("pv_kw", self.pv_kw)):
            if not np.isfinite(v).all():
                raise DataError(f"{name} contains non-finite values")
            if (v < 0).any():
                raise DataError(f"{name} contains negative values")
        if n > 1:
            steps = np.diff(self.timestamps)
            if (steps <= np.timedelta64(0, "s")).any():
                raise DataError("timestamps must be strictly increasing")
            if (steps != steps[0]).any():
                raise DataError("non-constant timestamp step")

    def __len__(self) -> int:
        return self.timestamps.size

    @property
    def step(self) -> np.timedelta64:
        if len(self) < 2:
            return HOUR
        return self.timestamps[1] - self.timestamps[0]


@dataclass(frozen=True)
class DriftSpec:
    """Linear multiplicative drift per step: load grows, PV decays."""

    load_growth_per_step: float = 0.0
    pv_decay_per_step: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.load_growth_per_step) and np.isfinite(self.pv_decay_per_step)):
            raise DataError("drift rates must be finite")


@dataclass(frozen=True)
class SynthParams:
    seed: int = 0
    days: int = 30
    mean_load_kw: float = 12.0
    load_daily_amp: float = 6.0
    load_noise_std: float = 1.0
    pv_peak_kw: float = 60.0
    pv_seasonal_amp: float = 0.6
    ar_coeff: float = 0.7
    pv_noise_frac: float = 0.10  # per-day multiplicative clearness noise
    sunrise_hour: int = 6
    sunset_hour: int = 18
    load_peak_hour: int = 19
    start: str = "2016-01-01T00:00"
    start_day_of_year: int = 0  # position in the seasonal cycle at t=0

    def __post_init__(self):
        if self.days < 1:
            raise DataError("days must be >= 1")
        if not 0.0 <= self.ar_coeff < 1.0:
            raise DataError("ar_coeff must lie in [0, 1)")
        if self.pv_peak_kw < 0 or self.mean_load_kw < 0:
            raise DataError("powers must be non-negative")
        if not 0.0 <= self.pv_seasonal_amp <= 1.0:
            raise DataError("pv_seasonal_amp must lie in [0, 1]")
        if not 0 <= self.sunrise_hour < self.sunset_hour <= 24:
            raise DataError("need 0 <= sunrise < sunset <= 24")


def synth_series(params: SynthParams) -> ExogenousSeries:
    """Deterministic synthetic series; a pure function of SynthParams."""
    rng = np.random.default_rng(params.seed)
    n = params.days * 24
    hours = np.arange(n)
    hod = hours % 24
    day = hours // 24

    # load: mean + evening-peaking sinusoid + stationary AR(1) noise
    shape = np.sin(2.0 * np.pi * (hod - (params.load_peak_hour - 6)) / 24.0)
    load = params.mean_load_kw + params.load_daily_amp * shape
    eps = np.zeros(n)
    if params.load_noise_std > 0:
        innov = rng.normal(0.0, params.load_noise_std * np.sqrt(1.0 - params.ar_coeff**2), n)
        for t in range(1, n):
            eps[t] = params.ar_coeff * eps[t - 1] + innov[t]
        eps[0] = innov[0]
    else:
        rng.normal(size=n)  # keep the stream layout stable across noise settings
    load = np.maximum(load + eps, 0.0)

    # PV: daylight half-sine * seasonal factor * per-day clearness
    daylight = (hod >= params.sunrise_hour) & (hod < params.sunset_hour)
    span = params.sunset_hour - params.sunrise_hour
    bell = np.where(daylight, np.sin(np.pi * (hod - params.sunrise_hour) / span), 0.0)
    season_day = (day + params.start_day_of_year) % 365
    season = 1.0 - params.pv_seasonal_amp * 0.5 * (1.0 - np.cos(2.0 * np.pi * season_day / 365.0))
    clearness = np.ones(params.days)
    noise = rng.normal(0.0, 1.0, params.days)
    if params.pv_noise_frac > 0:
        clearness = np.clip(1.0 + params.pv_noise_frac * noise, 0.2, 1.0)
    pv = params.pv_peak_kw * bell * season[day] * clearness[day]
    pv = np.clip(pv, 0.0, params.pv_peak_kw)

    t0 = np.datetime64(params.start, "s")
    timestamps = t0 + hours * HOUR
    return ExogenousSeries(timestamps, load, pv)


def apply_drift(series: ExogenousSeries, spec: DriftSpec) -> ExogenousSeries:
    """Scale load by (1 + t*growth) and PV by (1 - t*decay), t in steps."""
    t = np.arange(len(series), dtype=np.float64)
    load_mult = 1.0 + t * spec.load_growth_per_step
    pv_mult = 1.0 - t * spec.pv_decay_per_step
    if (load_mult <= 0).any() or (pv_mult <= 0).any():
        raise DataError("drift multiplier reaches zero within the series")
    return ExogenousSeries(
        series.timestamps.copy(), series.load_kw * load_mult, series.pv_kw * pv_mult
    )


def split(series: ExogenousSeries, ranges) -> list:
    """Slice by inclusive (start, end) timestamp pairs into independent copies."""
    out = []
    for start, end in ranges:
        start = np.datetime64(start, "s")
        end = np.datetime64(end, "s")
        if start < series.timestamps[0] or end > series.timestamps[-1]:
            raise DataError(f"range ({start}, {end}) outside the series span")
        if end < start:
            raise DataError("range end precedes start")
        mask = (series.timestamps >= start) & (series.timestamps <= end)
        out.append(
            ExogenousSeries(
                series.timestamps[mask].copy(),
                series.load_kw[mask].copy(),
                series.pv_kw[mask].copy(),
            )
        )
    return out


def slice_steps(series: ExogenousSeries, start: int, stop: int) -> ExogenousSeries:
    """Positional [start, stop) slice, as an independent copy."""
    if not 0 <= start < stop <= len(series):
        raise DataError(f"slice [{start}, {stop}) outside series of length {len(series)}")
    return ExogenousSeries(
        series.timestamps[start:stop].copy(),
        series.load_kw[start:stop].copy(),
        series.pv_kw[start:stop].copy(),
    )


def load_series(path, schema=CSV_SCHEMA) -> ExogenousSeries:
    """Read a CSV with columns (timestamp, load_kw, pv_kw); ISO-8601 timestamps."""
    ts_col, load_col, pv_col = schema
    timestamps, load, pv = [], [], []
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not set(schema).issubset(reader.fieldnames):
            raise DataError(f"missing columns; need {schema}, found {reader.fieldnames}")
        for i, row in enumerate(reader):
            try:
                timestamps.append(np.datetime64(row[ts_col].strip(), "s"))
                load.append(float(row[load_col]))
                pv.append(float(row[pv_col]))
            except (ValueError, TypeError) as exc:
                raise DataError(f"malformed row {i}: {row}") from exc
            if load[-1] < 0 or pv[-1] < 0:
                raise DataError(f"negative value in row {i}: {row}")
    try:
        return ExogenousSeries(np.array(timestamps), np.array(load), np.array(pv))
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from exc


def save_series(path, series: ExogenousSeries) -> None:
    """Inverse of load_series; round-trips values bit-identically."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_SCHEMA)
        for ts, c, p in zip(series.timestamps, series.load_kw, series.pv_kw):
            writer.writerow([np.datetime_as_string(ts, unit="s"), repr(float(c)), repr(float(p))])
