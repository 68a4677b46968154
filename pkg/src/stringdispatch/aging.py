"""Semi-empirical calendar and cyclic capacity fade.

Both laws are square-root laws written in differential form: the loss
increment is stress^2 / (2 q_acc) per unit time (or per FEC), so integrating
from an accumulated loss q_acc continues the curve q = stress * sqrt(t).
A new cell has q_acc = 0; the denominator is floored at ``params.q_floor``.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .core import CellModelParams, StringState, TimeGrid
from .errors import BatteryExpiredError, DomainError


@dataclass(frozen=True)
class CycleStats:
    delta_fec: float
    doc: float
    c_rate: float  # 1/h

    def __post_init__(self):
        if self.delta_fec < 0 or self.c_rate < 0 or not 0.0 <= self.doc <= 1.0:
            raise DomainError(f"invalid cycle statistics {self}")


def calendar_stress(soc, params: CellModelParams):
    """Calendar stress per sqrt(second)."""
    return (params.c1 * (np.asarray(soc) - 0.5) ** 3 + params.d1) * params.k_temp


def cyclic_stress(c_rate, doc, params: CellModelParams):
    """Cyclic stress per sqrt(FEC)."""
    return (params.a2 * np.asarray(c_rate) + params.b2) * (params.c2 * (np.asarray(doc) - 0.6) ** 3 + params.d2)


def calendar_loss_step(soc, q_acc_cal: float, dt: float, params: CellModelParams):
    """Calendar loss over ``dt`` seconds at fixed SOC."""
    s = np.asarray(soc, dtype=float)
    if np.any((s < 0.0) | (s > 1.0)):
        raise DomainError(f"soc outside [0, 1]: {soc}")
    if dt <= 0:
        raise DomainError(f"dt must be positive, got {dt}")
    out = calendar_stress(s, params) ** 2 / (2.0 * max(q_acc_cal, params.q_floor)) * dt
    return float(out) if out.ndim == 0 else out


def cyclic_loss(stats: CycleStats, q_acc_cyc: float, params: CellModelParams) -> float:
    if stats.delta_fec == 0.0:
        return 0.0
    sigma = cyclic_stress(stats.c_rate, stats.doc, params)
    return float(sigma**2 / (2.0 * max(q_acc_cyc, params.q_floor)) * stats.delta_fec)


def turning_points(x) -> np.ndarray:
    """Reduce a trajectory to its endpoints and local extrema (three-point rule)."""
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        return x
    keep = np.concatenate([[True], np.diff(x) != 0.0])
    x = x[keep]
    if x.size <= 2:
        return x
    d = np.diff(x)
    interior = d[:-1] * d[1:] < 0.0
    return x[np.concatenate([[True], interior, [True]])]


def half_cycle_depths(soc_traj) -> np.ndarray:
    return np.abs(np.diff(turning_points(soc_traj)))


def cycle_stats(soc_traj, i_traj, v_traj, q_act: float, grid: TimeGrid, i_threshold: float = 0.0) -> CycleStats:
    """Throughput, depth and C-rate of a window.

    ``soc_traj`` holds n_steps + 1 values (start plus one per step); currents
    and terminal voltages hold one value per step. Steps with
    ``|i| <= i_threshold`` count as idle for the C-rate average.
    """
    soc = np.asarray(soc_traj, dtype=float)
    i = np.asarray(i_traj, dtype=float)
    v = np.asarray(v_traj, dtype=float)
    n = grid.n_steps
    if soc.shape != (n + 1,) or i.shape != (n,) or v.shape != (n,):
        raise DomainError(
            f"trajectory lengths soc={soc.size}, i={i.size}, v={v.size} do not match a {n}-step grid"
        )
    if q_act <= 0:
        raise DomainError(f"actual capacity must be positive, got {q_act}")
    p_abs = np.abs(v * i) / 1000.0  # kW
    delta_fec = float(np.sum(p_abs) * grid.dt_hours / (2.0 * q_act))
    active = np.abs(i) > i_threshold
    c_rate = float(np.mean(p_abs[active]) / q_act) if np.any(active) else 0.0
    depths = half_cycle_depths(soc)
    doc = float(np.sum(depths**2) / np.sum(depths)) if depths.size and depths.sum() > 0 else 0.0
    return CycleStats(delta_fec, min(doc, 1.0), c_rate)


def resistance_growth(state: StringState, k_r: float) -> float:
    return max(state.r_incr, 1.0 + k_r * (state.q_loss_cal + state.q_loss_cyc))


def apply_aging(state: StringState, dq_cal: float, dq_cyc: float, dfec: float, k_r: float = 0.0) -> StringState:
    if dq_cal < 0 or dq_cyc < 0 or dfec < 0:
        raise DomainError("aging increments must be nonnegative")
    q_cal = state.q_loss_cal + dq_cal
    q_cyc = state.q_loss_cyc + dq_cyc
    if 1.0 - q_cal - q_cyc <= 0.0:
        raise BatteryExpiredError(f"state of health would drop to {1.0 - q_cal - q_cyc:.4f}")
    aged = dataclasses.replace(state, q_loss_cal=q_cal, q_loss_cyc=q_cyc, fec_total=state.fec_total + dfec)
    return dataclasses.replace(aged, r_incr=resistance_growth(aged, k_r))
