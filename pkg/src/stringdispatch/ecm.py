"""Equivalent-circuit string model: OCV source in series with a resistance.

All quantities are string aggregates. Current is positive when charging,
so the terminal voltage rises above OCV on charge and sags on discharge.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DomainError, InfeasiblePowerError, SetpointError

# Per-cell LFP open-circuit voltage on 0.05 SOC steps: steep tails, flat plateau.
# Representative shape only; not measured data.
LFP_CELL_OCV = (
    2.900, 3.120, 3.200, 3.230, 3.250, 3.265, 3.275, 3.283, 3.290, 3.295, 3.300,
    3.305, 3.310, 3.316, 3.322, 3.328, 3.335, 3.343, 3.352, 3.380, 3.500,
)
DEFAULT_SERIES_CELLS = 224


@dataclass(frozen=True)
class OcvCurve:
    """Piecewise-linear SOC -> volts table."""

    soc: tuple
    volts: tuple

    def __post_init__(self):
        soc = np.asarray(self.soc, dtype=float)
        volts = np.asarray(self.volts, dtype=float)
        if soc.ndim != 1 or soc.shape != volts.shape or soc.size < 2:
            raise ConfigurationError("OCV curve needs at least two (soc, volts) pairs")
        if not (np.all(np.isfinite(soc)) and np.all(np.isfinite(volts))):
            raise ConfigurationError("OCV curve contains non-finite values")
        if np.any(np.diff(soc) <= 0) or np.any(np.diff(volts) <= 0):
            raise ConfigurationError("OCV curve must be strictly increasing in soc and voltage")
        if soc[0] != 0.0 or soc[-1] != 1.0:
            raise ConfigurationError("OCV curve must span soc 0..1")
        object.__setattr__(self, "soc", tuple(float(s) for s in soc))
        object.__setattr__(self, "volts", tuple(float(v) for v in volts))

    @classmethod
    def default(cls, n_series: int = DEFAULT_SERIES_CELLS) -> "OcvCurve":
        soc = np.linspace(0.0, 1.0, len(LFP_CELL_OCV))
        return cls(tuple(soc), tuple(n_series * v for v in LFP_CELL_OCV))

    @classmethod
    def from_table(cls, path) -> "OcvCurve":
        """Read a two-column (soc, volts) text table; comma or whitespace separated."""
        rows = []
        for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.replace(",", " ").split()
            try:
                rows.append((float(parts[0]), float(parts[1])))
            except (ValueError, IndexError):
                if not rows and lineno == 1:
                    continue  # header
                raise ConfigurationError(f"{path}:{lineno}: cannot parse OCV row {line!r}")
        if not rows:
            raise ConfigurationError(f"{path}: empty OCV table")
        soc, volts = zip(*rows)
        return cls(soc, volts)

    @property
    def v_low(self) -> float:
        return self.volts[0]

    @property
    def v_high(self) -> float:
        return self.volts[-1]

    def mean_voltage(self) -> float:
        """Average OCV over the full SOC range (energy per unit charge)."""
        s = np.asarray(self.soc)
        v = np.asarray(self.volts)
        return float(np.sum(0.5 * (v[1:] + v[:-1]) * np.diff(s)))


def ocv(soc, curve: OcvCurve):
    s = np.asarray(soc, dtype=float)
    if np.any(s < 0.0) or np.any(s > 1.0) or not np.all(np.isfinite(s)):
        raise DomainError(f"soc outside [0, 1]: {soc}")
    out = np.interp(s, curve.soc, curve.volts)
    return float(out) if out.ndim == 0 else out


def effective_resistance(r0: float, r_incr: float) -> float:
    if r0 <= 0:
        raise DomainError(f"r0 must be positive, got {r0}")
    if r_incr < 1.0:
        raise DomainError(f"resistance increase factor must be >= 1, got {r_incr}")
    return r0 * r_incr


def terminal_voltage(ocv_v, r, i):
    return ocv_v + r * i


def _current_or_nan(ocv_v, r, p_dc):
    """Vectorised physical root of r*i^2 + ocv*i - p = 0; NaN where infeasible.

    Uses the conjugate form 2p / (ocv + sqrt(ocv^2 + 4rp)), which has no
    cancellation at small power and stays valid for r = 0.
    """
    ocv_v = np.asarray(ocv_v, dtype=float)
    p_dc = np.asarray(p_dc, dtype=float)
    disc = ocv_v * ocv_v + 4.0 * r * p_dc
    ok = (disc > 0.0) | (p_dc == 0.0)
    root = np.sqrt(np.where(ok, disc, 1.0))
    i = np.where(ok, 2.0 * p_dc / (ocv_v + root), np.nan)
    return i


def current_from_dc_power(ocv_v, r, p_dc):
    """Current (A) drawing DC power ``p_dc`` (W) at the terminals.

    Raises InfeasiblePowerError when the discharge request reaches or exceeds
    the maximum deliverable power ocv^2 / (4r).
    """
    if r < 0:
        raise DomainError(f"resistance must be nonnegative, got {r}")
    i = _current_or_nan(ocv_v, r, p_dc)
    if np.any(np.isnan(i)):
        raise InfeasiblePowerError(
            f"discharge power {p_dc} W exceeds deliverable power at ocv={ocv_v} V, r={r} ohm"
        )
    return float(i) if np.ndim(i) == 0 else i


def max_discharge_current(ocv_v, r):
    """Current at the maximum-power point, -ocv / (2r)."""
    return -np.inf if r == 0 else -ocv_v / (2.0 * r)


@dataclass(frozen=True)
class InverterModel:
    """AC/DC converter efficiency, either constant or a load-dependent curve.

    The curve is eta(x) = x / (x + p0 + k x^2) with x the load fraction of
    rated power: a standing loss p0 plus a quadratic conduction loss k.
    """

    mode: str = "constant"
    eta_const: float = 0.95
    p0: float = 0.005
    k: float = 0.03

    def __post_init__(self):
        if self.mode not in ("constant", "curve"):
            raise ConfigurationError(f"unknown inverter mode {self.mode!r}")
        if self.mode == "constant" and not 0.0 < self.eta_const <= 1.0:
            raise ConfigurationError(f"eta_const must lie in (0, 1], got {self.eta_const}")
        if self.mode == "curve" and (self.p0 < 0 or self.k < 0):
            raise ConfigurationError("inverter curve coefficients must be nonnegative")

    def efficiency(self, x):
        """Efficiency at load fraction ``x`` (> 0)."""
        x = np.asarray(x, dtype=float)
        if self.mode == "constant":
            return np.full_like(x, self.eta_const) if x.ndim else self.eta_const
        eta = x / (x + self.p0 + self.k * x * x)
        return eta if eta.ndim else float(eta)

    def dc_from_ac(self, p_ac, p_rated: float):
        """Vectorised AC -> DC conversion without range checks."""
        p_ac = np.asarray(p_ac, dtype=float)
        if self.mode == "constant":
            eta = self.eta_const
            out = np.where(p_ac >= 0.0, p_ac * eta, p_ac / eta)
        else:
            x = np.abs(p_ac) / p_rated
            loss = (self.p0 + self.k * x * x) * p_rated
            # charge: p_dc = p_ac * eta = p_ac * x / (x + p0 + k x^2)
            with np.errstate(invalid="ignore", divide="ignore"):
                charge = p_ac * x / (x + self.p0 + self.k * x * x)
            out = np.where(p_ac > 0.0, charge, np.where(p_ac < 0.0, p_ac - loss, 0.0))
        return float(out) if out.ndim == 0 else out

    def ac_from_dc(self, p_dc, p_rated: float):
        """Inverse of :meth:`dc_from_ac`.

        In curve mode a discharge smaller than the standing loss delivers no
        AC power; such values map to 0.
        """
        p_dc = np.asarray(p_dc, dtype=float)
        if self.mode == "constant":
            eta = self.eta_const
            out = np.where(p_dc >= 0.0, p_dc / eta, p_dc * eta)
        else:
            y = np.abs(p_dc) / p_rated
            p0, k = self.p0, self.k
            a = 1.0 - k * y
            with np.errstate(invalid="ignore", divide="ignore"):
                x_ch = (y + np.sqrt(y * y + 4.0 * a * y * p0)) / (2.0 * a)
                if k > 0:
                    x_dis = (-1.0 + np.sqrt(np.maximum(1.0 + 4.0 * k * (y - p0), 0.0))) / (2.0 * k)
                else:
                    x_dis = y - p0
            x_dis = np.maximum(x_dis, 0.0)
            out = np.where(p_dc > 0.0, x_ch * p_rated, np.where(p_dc < 0.0, -x_dis * p_rated, 0.0))
        return float(out) if out.ndim == 0 else out


def inverter_dc_from_ac(p_ac: float, model: InverterModel, p_rated: float) -> float:
    """DC-side power (kW) for an AC setpoint (kW), + = charging."""
    if not np.isfinite(p_ac):
        raise SetpointError(f"non-finite AC setpoint {p_ac}")
    if abs(p_ac) > p_rated * (1.0 + 1e-12):
        raise SetpointError(f"|p_ac| = {abs(p_ac)} kW exceeds rated power {p_rated} kW")
    if p_ac == 0.0:
        return 0.0
    return model.dc_from_ac(p_ac, p_rated)
