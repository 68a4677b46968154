"""Shared value types: time grids, price series, cell parameters, string state.

Time is integer seconds since the Unix epoch (UTC). Power is in kW with
p > 0 meaning charging (grid -> battery).
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone

import numpy as np

from .ecm import OcvCurve
from .errors import ConfigurationError, DomainError, IngestionError


def to_seconds(value) -> int:
    """Coerce a timestamp or duration to integer seconds."""
    if isinstance(value, timedelta):
        secs = value.total_seconds()
    elif isinstance(value, datetime):
        if value.tzinfo is None:
            value = value.replace(tzinfo=timezone.utc)
        secs = value.timestamp()
    elif isinstance(value, (int, np.integer)):
        return int(value)
    elif isinstance(value, float) and value.is_integer():
        return int(value)
    else:
        raise ConfigurationError(f"cannot interpret {value!r} as whole seconds")
    if not float(secs).is_integer():
        raise ConfigurationError(f"{value!r} is not a whole number of seconds")
    return int(secs)


def iso(ts: int) -> str:
    return datetime.fromtimestamp(ts, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass(frozen=True)
class TimeGrid:
    start: int
    dt: int
    n_steps: int

    def __post_init__(self):
        if self.dt <= 0:
            raise ConfigurationError(f"dt must be positive, got {self.dt}")
        if self.n_steps < 1:
            raise ConfigurationError(f"grid needs at least one step, got {self.n_steps}")

    @property
    def span(self) -> int:
        return self.n_steps * self.dt

    @property
    def end(self) -> int:
        return self.start + self.span

    @property
    def dt_hours(self) -> float:
        return self.dt / 3600.0

    @property
    def times(self) -> np.ndarray:
        return self.start + self.dt * np.arange(self.n_steps, dtype=np.int64)

    def sub(self, offset: int, n_steps: int) -> "TimeGrid":
        """Grid of ``n_steps`` starting ``offset`` steps into this one."""
        if offset < 0 or offset + n_steps > self.n_steps:
            raise ConfigurationError("sub-grid outside parent grid")
        return TimeGrid(self.start + offset * self.dt, self.dt, n_steps)


def build_time_grid(start, span, dt) -> TimeGrid:
    start, span, dt = to_seconds(start), to_seconds(span), to_seconds(dt)
    if dt <= 0:
        raise ConfigurationError(f"dt must be positive, got {dt}")
    if span <= 0 or span % dt:
        raise ConfigurationError(f"span {span}s is not a positive multiple of dt {dt}s")
    return TimeGrid(start, dt, span // dt)


@dataclass(frozen=True)
class PriceSeries:
    """Prices in EUR/MWh, one per grid step."""

    grid: TimeGrid
    prices: np.ndarray

    def __post_init__(self):
        p = np.array(self.prices, dtype=float)
        if p.shape != (self.grid.n_steps,):
            raise IngestionError(f"expected {self.grid.n_steps} prices, got shape {p.shape}")
        if not np.all(np.isfinite(p)):
            bad = int(np.flatnonzero(~np.isfinite(p))[0])
            raise IngestionError(f"non-finite price at step {bad} ({iso(int(self.grid.times[bad]))})")
        p.flags.writeable = False
        object.__setattr__(self, "prices", p)

    def __len__(self):
        return self.grid.n_steps

    def __eq__(self, other):
        return (
            isinstance(other, PriceSeries)
            and self.grid == other.grid
            and np.array_equal(self.prices, other.prices)
        )

    def sub(self, offset: int, n_steps: int) -> "PriceSeries":
        return PriceSeries(self.grid.sub(offset, n_steps), self.prices[offset:offset + n_steps])


def resample_zoh(series: PriceSeries, target: TimeGrid) -> PriceSeries:
    """Zero-order hold: each target step takes the latest source price at or before it."""
    src = series.grid
    if target.start < src.start:
        raise IngestionError(f"price data missing for {iso(target.start)} .. {iso(min(src.start, target.end))}")
    if target.end > src.end:
        raise IngestionError(f"price data missing for {iso(max(src.end, target.start))} .. {iso(target.end)}")
    idx = (target.times - src.start) // src.dt
    return PriceSeries(target, series.prices[idx])


@dataclass(frozen=True)
class CellModelParams:
    """Electrical and aging constants of one string.

    The aging constants follow a square-root law: calendar stress
    ``(c1 (soc-0.5)^3 + d1) * k_temp`` per sqrt(second) and cyclic stress
    ``(a2 C + b2) (c2 (doc-0.6)^3 + d2)`` per sqrt(FEC). The defaults are the
    published LFP/graphite fit, with the cyclic fit rescaled from percent to
    per-unit.
    """

    q_nom: float = 80.0  # kWh
    p_max: float = 80.0  # kW
    i_max: float = 130.0  # A
    v_min: float | None = None  # V; defaults to OCV(0) - r0*i_max
    v_max: float | None = None  # V; defaults to OCV(1) + r0*i_max
    soc_min: float = 0.1
    soc_max: float = 0.9
    r0: float = 0.12  # ohm, string aggregate
    ocv_curve: OcvCurve = field(default_factory=OcvCurve.default)
    c1: float = 2.8575
    d1: float = 0.60225
    k_temp: float = 1.2571e-5  # 1/sqrt(s) at 25 degC
    a2: float = 0.00063
    b2: float = 0.000971
    c2: float = 4.0253
    d2: float = 1.0923
    eta_inv: float = 0.95
    eol: float = 0.8
    q_floor: float = 1e-4
    k_r: float = 2.0  # resistance growth per unit capacity loss

    def __post_init__(self):
        if self.v_min is None:
            object.__setattr__(self, "v_min", self.ocv_curve.v_low - self.r0 * self.i_max)
        if self.v_max is None:
            object.__setattr__(self, "v_max", self.ocv_curve.v_high + self.r0 * self.i_max)
        problems = []
        if not 0.0 <= self.soc_min < self.soc_max <= 1.0:
            problems.append("need 0 <= soc_min < soc_max <= 1")
        if not self.v_min < self.v_max:
            problems.append("need v_min < v_max")
        for name in ("q_nom", "p_max", "i_max", "r0", "q_floor"):
            if not getattr(self, name) > 0:
                problems.append(f"{name} must be positive")
        if not 0.0 < self.eta_inv <= 1.0:
            problems.append("eta_inv must lie in (0, 1]")
        if not 0.0 < self.eol < 1.0:
            problems.append("eol must lie in (0, 1)")
        if self.k_r < 0:
            problems.append("k_r must be nonnegative")
        if problems:
            raise ConfigurationError("invalid cell parameters: " + "; ".join(problems))

    @property
    def capacity_ah(self) -> float:
        """Nominal charge capacity implied by q_nom and the OCV curve."""
        return self.q_nom * 1000.0 / self.ocv_curve.mean_voltage()

    def replace(self, **changes) -> "CellModelParams":
        if ("r0" in changes or "i_max" in changes or "ocv_curve" in changes):
            changes.setdefault("v_min", None)
            changes.setdefault("v_max", None)
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class StringState:
    soc: float
    q_loss_cal: float = 0.0
    q_loss_cyc: float = 0.0
    r_incr: float = 1.0
    fec_total: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.soc <= 1.0:
            raise DomainError(f"soc outside [0, 1]: {self.soc}")
        if self.q_loss_cal < 0 or self.q_loss_cyc < 0:
            raise DomainError("loss accumulators must be nonnegative")
        if self.r_incr < 1.0:
            raise DomainError(f"r_incr must be >= 1, got {self.r_incr}")
        if not 0.0 < self.soh <= 1.0:
            raise DomainError(f"state of health outside (0, 1]: {self.soh}")

    @property
    def soh(self) -> float:
        return 1.0 - self.q_loss_cal - self.q_loss_cyc

    @classmethod
    def aged(cls, soh: float, soc: float, r_incr: float = 1.0, cal_share: float = 0.5) -> "StringState":
        """State with total loss ``1 - soh`` split between calendar and cyclic."""
        loss = 1.0 - soh
        return cls(soc, loss * cal_share, loss * (1.0 - cal_share), r_incr)

    def with_soc(self, soc: float) -> "StringState":
        return dataclasses.replace(self, soc=soc)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)
