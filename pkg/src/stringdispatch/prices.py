"""Price ingestion and a seeded synthetic intraday price generator."""
from __future__ import annotations

import math
from datetime import datetime, timezone

import numpy as np

from .core import PriceSeries, TimeGrid, iso, resample_zoh
from .errors import ConfigurationError, IngestionError

DEFAULT_DT = 300


def _parse_time(text: str) -> int:
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return int(ts.timestamp())


def load_prices(path, dt: int = DEFAULT_DT) -> PriceSeries:
    """Read ``timestamp,price`` rows (ISO-8601 UTC, EUR/MWh) and resample to ``dt``.

    A header line is allowed. Rows must be strictly increasing in time and
    evenly spaced; the last row is held for one source interval.
    """
    times, values = [], []
    first = True
    try:
        fh = open(path)
    except OSError as exc:
        raise IngestionError(f"cannot read price file {path}: {exc.strerror}") from None
    with fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            header_allowed, first = first, False
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 2:
                raise IngestionError(f"{path}:{lineno}: expected 2 columns, got {len(parts)}")
            try:
                t = _parse_time(parts[0])
            except ValueError:
                if header_allowed:
                    continue
                raise IngestionError(f"{path}:{lineno}: unparseable timestamp {parts[0]!r}") from None
            try:
                v = float(parts[1])
            except ValueError:
                raise IngestionError(f"{path}:{lineno}: unparseable price {parts[1]!r}") from None
            if not math.isfinite(v):
                raise IngestionError(f"{path}:{lineno}: non-finite price {parts[1]!r}")
            if times and t <= times[-1]:
                raise IngestionError(f"{path}:{lineno}: timestamp not after the previous row")
            times.append(t)
            values.append(v)
    if not times:
        raise IngestionError(f"{path}: no price rows")
    if len(times) == 1:
        src_dt = dt
    else:
        gaps = np.diff(times)
        src_dt = int(gaps[0])
        bad = np.flatnonzero(gaps != src_dt)
        if bad.size:
            raise IngestionError(f"{path}: irregular spacing after row {int(bad[0]) + 2} of the data")
    src = PriceSeries(TimeGrid(times[0], src_dt, len(times)), np.array(values))
    span = src.grid.span
    if span % dt:
        raise IngestionError(f"{path}: covered span {span}s is not a multiple of {dt}s")
    return resample_zoh(src, TimeGrid(times[0], dt, span // dt))


def save_prices(series: PriceSeries, path) -> None:
    with open(path, "w") as fh:
        fh.write("timestamp,price_eur_mwh\n")
        for t, p in zip(series.grid.times, series.prices):
            fh.write(f"{iso(int(t))},{float(p)!r}\n")


def gen_synthetic_prices(
    seed: int,
    days: int,
    base: float = 80.0,
    amplitude: float = 40.0,
    noise_sd: float = 10.0,
    start: int = 1609459200,  # 2021-01-01T00:00:00Z
    dt: int = DEFAULT_DT,
) -> PriceSeries:
    """Daily sinusoid with its trough at 03:00 and peak at 19:00 UTC plus Gaussian noise.

    The rising half lasts 16 h and the falling half 8 h, each a half cosine.
    """
    if days < 1:
        raise ConfigurationError(f"days must be >= 1, got {days}")
    n = days * 86400 // dt
    hour = ((np.arange(n) * dt) % 86400) / 3600.0
    phase = np.where(
        (hour >= 3.0) & (hour < 19.0),
        (hour - 3.0) / 16.0,  # 0 -> 1 while rising
        1.0 + ((hour - 19.0) % 24.0) / 8.0,  # 1 -> 2 while falling
    )
    shape = -np.cos(np.pi * phase)
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, noise_sd, n) if noise_sd > 0 else np.zeros(n)
    return PriceSeries(TimeGrid(start, dt, n), base + amplitude * shape + noise)
