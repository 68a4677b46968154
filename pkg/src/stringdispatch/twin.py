"""Digital twin: executes AC setpoints against the true string state.

The twin runs the detailed inverter curve and the aged resistance
R0 * r_incr. A setpoint that would break a physical limit is clipped to the
nearest admissible current; the binding limit is recorded.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .aging import apply_aging, calendar_loss_step, cycle_stats, cyclic_loss
from .core import CellModelParams, StringState, TimeGrid
from .ecm import InverterModel, _current_or_nan, max_discharge_current, ocv
from .errors import SetpointError

CLIP_REASONS = ("none", "power", "current", "voltage", "soc", "fec_cap")
_PRIORITY = ("power", "current", "voltage", "soc", "fec_cap")
_TOL_KW = 1e-9

TWIN_INVERTER = InverterModel(mode="curve")


@dataclass(frozen=True)
class StepResult:
    p_ac_requested: float
    p_ac_realized: float
    soc_after: float
    v: float
    i: float
    p_dc: float
    clip_reason: str = "none"


@dataclass(frozen=True)
class WindowResult:
    steps: list
    dq_cal: float
    dq_cyc: float
    dfec: float
    state_after: StringState
    soc_start: float = field(default=0.0)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(s, name) for s in self.steps])

    @property
    def soc_trajectory(self) -> np.ndarray:
        return np.concatenate([[self.soc_start], self.column("soc_after")])


def _resistance(state: StringState, params: CellModelParams, r_soc_table=None) -> float:
    r = params.r0 * state.r_incr
    if r_soc_table is not None:
        r *= float(np.interp(state.soc, *r_soc_table))
    return r


def execute_step(
    state: StringState,
    params: CellModelParams,
    inv: InverterModel,
    p_ac: float,
    dt: float,
    soh: float | None = None,
    dc_limit: float | None = None,
    r_soc_table=None,
) -> StepResult:
    """Run one setpoint for ``dt`` seconds.

    ``soh`` overrides the capacity scaling (the window-start value is used
    inside a window). ``dc_limit`` caps |p_dc| in kW, for throughput budgets.
    ``r_soc_table`` is an optional (soc, factor) pair scaling R0 with SOC.
    """
    if not math.isfinite(p_ac):
        raise SetpointError(f"non-finite setpoint {p_ac}")
    soh = state.soh if soh is None else soh
    soc = state.soc
    p_max = params.p_max
    ocv_v = ocv(soc, params.ocv_curve)
    r = _resistance(state, params, r_soc_table)
    charge_per_soc = 3600.0 * params.capacity_ah * soh  # A*s per unit SOC

    p_cmd = min(max(p_ac, -p_max), p_max)
    if p_cmd == 0.0:
        return StepResult(p_ac, 0.0, soc, ocv_v, 0.0, 0.0, "none" if p_ac == 0.0 else "power")

    def current_at(p_dc_kw):
        i = float(_current_or_nan(ocv_v, r, p_dc_kw * 1000.0))
        return max_discharge_current(ocv_v, r) if math.isnan(i) else i

    i_req = current_at(inv.dc_from_ac(p_cmd, p_max))
    bounds = {
        "power": (current_at(inv.dc_from_ac(-p_max, p_max)), current_at(inv.dc_from_ac(p_max, p_max))),
        "current": (-params.i_max, params.i_max),
        "voltage": ((params.v_min - ocv_v) / r, (params.v_max - ocv_v) / r) if r > 0 else (-math.inf, math.inf),
        "soc": (
            min(0.0, (params.soc_min - soc) * charge_per_soc / dt),
            max(0.0, (params.soc_max - soc) * charge_per_soc / dt),
        ),
    }
    if dc_limit is not None:
        bounds["fec_cap"] = (current_at(-dc_limit), current_at(dc_limit))
    lo = max(b[0] for b in bounds.values())
    hi = min(b[1] for b in bounds.values())
    lo, hi = min(lo, 0.0), max(hi, 0.0)
    i = min(max(i_req, lo), hi)

    reason = "power" if p_cmd != p_ac else "none"
    if i != i_req:
        side = 0 if i_req < lo else 1
        active = hi if side else lo
        reason = next(k for k in _PRIORITY if k in bounds and bounds[k][side] == active)
        p_dc = (ocv_v + r * i) * i / 1000.0
        p_real = float(inv.ac_from_dc(p_dc, p_max))
        if p_real == 0.0:
            i = 0.0
        # rounding must never lift the realized power above the request
        p_real = math.copysign(min(abs(p_real), abs(p_ac)), p_ac) if p_real else 0.0
    else:
        p_real = p_cmd
    if abs(p_real - p_ac) <= _TOL_KW:
        reason = "none"
    p_dc = (ocv_v + r * i) * i / 1000.0
    soc_after = soc + i * dt / charge_per_soc
    # absorb last-ulp overshoot at the bounds
    if soc_after > params.soc_max and soc <= params.soc_max:
        soc_after = params.soc_max
    if soc_after < params.soc_min and soc >= params.soc_min:
        soc_after = params.soc_min
    return StepResult(p_ac, p_real, soc_after, ocv_v + r * i, i, p_dc, reason)


def simulate_window(
    state: StringState,
    schedule,
    params: CellModelParams,
    inv: InverterModel,
    grid: TimeGrid,
    fec_budget: float | None = None,
    r_soc_table=None,
) -> WindowResult:
    """Execute a schedule over ``grid`` and apply the window's aging.

    Calendar loss accrues per step; cyclic loss once for the whole window
    from its cycle statistics. SOH is frozen at its window-start value.
    ``fec_budget`` limits the window's DC throughput in full equivalent cycles.
    """
    schedule = np.asarray(schedule, dtype=float)
    if schedule.shape != (grid.n_steps,):
        raise SetpointError(f"schedule has {schedule.size} steps, grid has {grid.n_steps}")
    soh = state.soh
    q_act = params.q_nom * soh
    dt = grid.dt
    steps = []
    current = state
    dq_cal = 0.0
    used_fec = 0.0
    for p in schedule:
        dc_limit = None
        if fec_budget is not None:
            dc_limit = max(fec_budget - used_fec, 0.0) * 2.0 * q_act / grid.dt_hours
        res = execute_step(current, params, inv, float(p), dt, soh=soh, dc_limit=dc_limit, r_soc_table=r_soc_table)
        dq_cal += calendar_loss_step(current.soc, state.q_loss_cal + dq_cal, dt, params)
        used_fec += abs(res.p_dc) * grid.dt_hours / (2.0 * q_act)
        steps.append(res)
        current = current.with_soc(res.soc_after)
    soc_traj = np.concatenate([[state.soc], [s.soc_after for s in steps]])
    stats = cycle_stats(
        soc_traj,
        [s.i for s in steps],
        [s.v for s in steps],
        q_act,
        grid,
        i_threshold=0.01 * params.i_max,
    )
    dq_cyc = cyclic_loss(stats, state.q_loss_cyc, params)
    after = apply_aging(current, dq_cal, dq_cyc, stats.delta_fec, params.k_r)
    return WindowResult(steps, dq_cal, dq_cyc, stats.delta_fec, after, soc_start=state.soc)
