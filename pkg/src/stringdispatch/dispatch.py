"""Per-string horizon scheduling under the optimizer's simplified model.

The optimizer sees a constant inverter efficiency, a static resistance
R0 * r_incr and the SOH it believes the string has. It minimises the market
cost sum(p * price * dt), optionally plus the cyclic aging cost of the whole
horizon, by dynamic programming over a SOC grid.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .aging import calendar_loss_step, cycle_stats, cyclic_loss
from .core import CellModelParams, PriceSeries, StringState, TimeGrid
from .ecm import (
    InverterModel,
    _current_or_nan,
    current_from_dc_power,
    effective_resistance,
    inverter_dc_from_ac,
    ocv,
    terminal_voltage,
)
from .errors import ConfigurationError, DomainError, InfeasiblePowerError, OracleScopeError, SolverError, StringRetiredError

MARKET_ONLY = "market_only"
MARKET_PLUS_AGING = "market_plus_aging"
_EPS_SOC = 1e-12


@dataclass(frozen=True)
class SolverConfig:
    n_soc: int = 201
    n_levels: int = 41
    gap: float = 0.01
    max_fp_iter: int = 6
    fp_rtol: float = 1e-3
    bisect_iter: int = 30
    bisect_rtol: float = 1e-3
    tie_tol: float = 1e-9
    fp_start_fractions: tuple = (1.0, 0.25, 0.0625)
    polish_sweeps: int = 10

    def __post_init__(self):
        if self.n_soc < 3 or self.n_levels < 2:
            raise ConfigurationError("solver grids need n_soc >= 3 and n_levels >= 2")


@dataclass(frozen=True)
class HorizonProblem:
    grid: TimeGrid
    prices: PriceSeries
    believed_state: StringState
    params: CellModelParams
    objective_mode: str = MARKET_ONLY
    c_aging: float = 200.0  # EUR per kWh of lost capacity
    fec_cap_per_day: float | None = None
    fec_budget: float | None = None  # absolute cap for this horizon, on top of the daily rate

    def __post_init__(self):
        if self.prices.grid != self.grid:
            raise DomainError("price grid does not match the horizon grid")
        if self.objective_mode not in (MARKET_ONLY, MARKET_PLUS_AGING):
            raise ConfigurationError(f"unknown objective mode {self.objective_mode!r}")
        if self.objective_mode == MARKET_PLUS_AGING and (self.fec_cap_per_day is not None or self.fec_budget is not None):
            raise ConfigurationError("an FEC cap is only used with the market-only objective")
        if self.c_aging < 0:
            raise ConfigurationError("c_aging must be nonnegative")

    @property
    def soh(self) -> float:
        return self.believed_state.soh

    @property
    def resistance(self) -> float:
        return effective_resistance(self.params.r0, self.believed_state.r_incr)

    @property
    def q_act(self) -> float:
        return self.params.q_nom * self.soh

    @property
    def charge_per_soc(self) -> float:
        return 3600.0 * self.params.capacity_ah * self.soh

    @property
    def inverter(self) -> InverterModel:
        return InverterModel("constant", self.params.eta_inv)

    @property
    def fec_cap(self) -> float | None:
        """FEC allowed over this horizon, or None when uncapped."""
        caps = []
        if self.fec_cap_per_day is not None:
            caps.append(self.fec_cap_per_day * self.grid.span / 86400.0)
        if self.fec_budget is not None:
            caps.append(max(self.fec_budget, 0.0))
        return min(caps) if caps else None


@dataclass
class DispatchSchedule:
    p_ac: np.ndarray
    predicted_soc: np.ndarray  # SOC after each step
    predicted_cost: float  # objective value in EUR
    predicted_dq_cyc: float
    soc_start: float = 0.0
    market_cost: float = 0.0
    aging_cost: float = 0.0
    terminal_value: float = 0.0
    predicted_fec: float = 0.0
    predicted_dq_cal: float = 0.0
    i: np.ndarray = field(default_factory=lambda: np.zeros(0))
    v: np.ndarray = field(default_factory=lambda: np.zeros(0))
    p_dc: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("step,p_ac,predicted_soc\n")
            for k, (p, s) in enumerate(zip(self.p_ac, self.predicted_soc)):
                fh.write(f"{k},{float(p)!r},{float(s)!r}\n")


def assemble_problem(
    believed: StringState,
    prices: PriceSeries,
    scenario_objective: str,
    params: CellModelParams,
    c_aging: float = 200.0,
    fec_cap_per_day: float | None = None,
    fec_budget: float | None = None,
) -> HorizonProblem:
    if believed.soh <= params.eol:
        raise StringRetiredError(f"believed SOH {believed.soh:.4f} is at or below end of life {params.eol}")
    return HorizonProblem(
        prices.grid, prices, believed, params, scenario_objective, c_aging, fec_cap_per_day, fec_budget
    )


def aging_cost(dq_cyc: float, c_aging: float, q_nom: float, eol: float) -> float:
    """Cost of cyclic capacity loss; the whole usable life is valued at c_aging * q_nom."""
    if eol >= 1.0:
        raise DomainError(f"end-of-life threshold must be < 1, got {eol}")
    if dq_cyc < 0 or c_aging < 0 or q_nom < 0:
        raise DomainError("aging cost inputs must be nonnegative")
    return dq_cyc * c_aging * q_nom / (1.0 - eol)


# --- optimizer-side model -------------------------------------------------


def _model_step(problem: HorizonProblem, soc, p_ac):
    """Vectorised one-step model. Returns (soc_next, feasible, i, v, p_dc_kw)."""
    prm = problem.params
    soc = np.asarray(soc, dtype=float)
    p_ac = np.asarray(p_ac, dtype=float)
    eta = prm.eta_inv
    p_dc = np.where(p_ac >= 0.0, p_ac * eta, p_ac / eta)
    ocv_v = np.interp(np.clip(soc, 0.0, 1.0), prm.ocv_curve.soc, prm.ocv_curve.volts)
    r = problem.resistance
    i = _current_or_nan(ocv_v, r, p_dc * 1000.0)
    v = ocv_v + r * i
    soc_next = soc + i * problem.grid.dt / problem.charge_per_soc
    with np.errstate(invalid="ignore"):
        feasible = (
            np.isfinite(i)
            & (np.abs(i) <= prm.i_max)
            & (v >= prm.v_min)
            & (v <= prm.v_max)
            & (soc_next >= prm.soc_min - _EPS_SOC)
            & (soc_next <= prm.soc_max + _EPS_SOC)
            & (np.abs(p_ac) <= prm.p_max)
        )
    feasible |= p_ac == 0.0
    soc_next = np.where(p_ac == 0.0, soc, soc_next)
    return soc_next, feasible, i, v, p_dc


def _terminal_price(problem: HorizonProblem) -> float:
    """EUR per kWh of stored DC energy left at the horizon end."""
    return float(np.mean(problem.prices.prices)) / 1000.0 * problem.params.eta_inv


def stored_energy(problem: HorizonProblem, soc) -> np.ndarray:
    """DC energy in kWh between soc_min and ``soc``: charge times OCV, integrated."""
    curve = problem.params.ocv_curve
    xs, ys = np.asarray(curve.soc, dtype=float), np.asarray(curve.volts, dtype=float)
    cum = np.concatenate(([0.0], np.cumsum(0.5 * (ys[1:] + ys[:-1]) * np.diff(xs))))

    def integral(s):
        s = np.clip(np.asarray(s, dtype=float), xs[0], xs[-1])
        k = np.clip(np.searchsorted(xs, s, side="right") - 1, 0, xs.size - 2)
        return cum[k] + 0.5 * (ys[k] + np.interp(s, xs, ys)) * (s - xs[k])

    return (integral(soc) - integral(problem.params.soc_min)) * problem.charge_per_soc / 3.6e6


def _terminal_value(problem: HorizonProblem, soc_end):
    return _terminal_price(problem) * stored_energy(problem, soc_end)


def _kernel_model(problem: HorizonProblem):
    prm = problem.params
    m = np.array([
        prm.eta_inv, problem.resistance, prm.i_max, prm.v_min, prm.v_max,
        prm.soc_min, prm.soc_max, prm.p_max, float(problem.grid.dt), problem.charge_per_soc,
    ])
    return m, np.asarray(prm.ocv_curve.soc), np.asarray(prm.ocv_curve.volts)


def evaluate_schedule(problem: HorizonProblem, p_ac) -> DispatchSchedule:
    """Roll a schedule through the optimizer model and price it.

    Raises DomainError if the schedule is infeasible for the model.
    """
    p_ac = np.ascontiguousarray(p_ac, dtype=float)
    n = problem.grid.n_steps
    if p_ac.shape != (n,):
        raise DomainError(f"schedule has {p_ac.size} steps, horizon has {n}")
    m, xs, ys = _kernel_model(problem)
    ok, bad, soc, i, v, p_dc = _kernels.rollout(p_ac, float(problem.believed_state.soc), m, xs, ys)
    if not ok:
        raise DomainError(f"schedule infeasible at step {bad} (p_ac={p_ac[bad]:.6g} kW, soc={soc[bad]:.6g})")
    return _price_trajectory(problem, p_ac, soc, i, v, p_dc)


def _price_trajectory(problem, p_ac, soc, i, v, p_dc) -> DispatchSchedule:
    prm = problem.params
    dt_h = problem.grid.dt_hours
    market = float(np.sum(p_ac * problem.prices.prices) * dt_h / 1000.0)
    stats = cycle_stats(soc, i, v, problem.q_act, problem.grid, i_threshold=0.01 * prm.i_max)
    dq_cyc = cyclic_loss(stats, problem.believed_state.q_loss_cyc, prm)
    ag = aging_cost(dq_cyc, problem.c_aging, prm.q_nom, prm.eol) if problem.objective_mode == MARKET_PLUS_AGING else 0.0
    term = float(_terminal_value(problem, soc[-1]))
    dq_cal = float(np.sum(calendar_loss_step(soc[:-1], problem.believed_state.q_loss_cal, problem.grid.dt, prm)))
    return DispatchSchedule(
        p_ac=p_ac.copy(),
        predicted_soc=soc[1:].copy(),
        predicted_cost=market + ag - term,
        predicted_dq_cyc=dq_cyc,
        soc_start=float(soc[0]),
        market_cost=market,
        aging_cost=ag,
        terminal_value=term,
        predicted_fec=stats.delta_fec,
        predicted_dq_cal=dq_cal,
        i=i,
        v=v,
        p_dc=p_dc,
    )


# --- dynamic programming --------------------------------------------------


class _DPTables:
    """Price-independent transition tables on the SOC grid plus kernel arguments."""

    def __init__(self, problem: HorizonProblem, levels: np.ndarray, n_soc: int):
        prm = problem.params
        self.problem = problem
        self.levels = np.ascontiguousarray(levels, dtype=float)
        self.nodes = np.linspace(prm.soc_min, prm.soc_max, n_soc)
        self.ds = self.nodes[1] - self.nodes[0]
        s_next, feas, _, _, p_dc = _model_step(problem, self.nodes[:, None], self.levels[None, :])
        s_next = np.clip(s_next, prm.soc_min, prm.soc_max)
        pos = (s_next - prm.soc_min) / self.ds
        lo = np.clip(np.floor(pos).astype(np.int64), 0, n_soc - 2)
        self.lo = lo
        self.w = np.clip(pos - lo, 0.0, 1.0)
        self.feasible = feas
        self.p_dc = np.where(feas, p_dc, 0.0)
        # tie-break preference: smaller |p| first, then discharge before charge
        self.order = np.lexsort((self.levels, np.abs(self.levels))).astype(np.int64)
        self.model, self.xs, self.ys = _kernel_model(problem)
        self.scale = problem.grid.dt_hours / 1000.0
        self.fec_unit = problem.grid.dt_hours / (2.0 * problem.q_act)

    def wear(self, p_dc, fec_price: float, aging_weight: float):
        """Per-step throughput cost in EUR.

        ``fec_price`` prices FEC flatly (cap multiplier); ``aging_weight``
        prices FEC scaled by the C-rate factor (a2 C + b2)^2 of the step.
        """
        prm = self.problem.params
        fec = np.abs(p_dc) * self.fec_unit
        c = prm.a2 * np.abs(p_dc) / self.problem.q_act + prm.b2
        return fec_price * fec + aging_weight * fec * c * c

    def solve(self, fec_price: float, tie_tol: float, aging_weight: float = 0.0) -> np.ndarray:
        problem = self.problem
        prm = problem.params
        prices = np.ascontiguousarray(problem.prices.prices, dtype=float)
        static = np.where(self.feasible, self.wear(self.p_dc, fec_price, aging_weight), np.inf)
        terminal = -_terminal_value(problem, self.nodes)
        V = _kernels.backward(prices, self.levels, self.lo, self.w, static, terminal, self.scale)
        return _kernels.forward(
            V, prices, self.levels, self.order, float(problem.believed_state.soc), self.model, self.xs, self.ys,
            float(self.nodes[0]), float(self.ds), self.scale, self.fec_unit, problem.q_act,
            float(fec_price), float(aging_weight), prm.a2, prm.b2, tie_tol,
        )

    def polish(self, plan: np.ndarray, max_sweeps: int, fec_cap: float | None) -> np.ndarray:
        """Single-step coordinate descent on the exact horizon objective."""
        problem = self.problem
        prm = problem.params
        with_aging = problem.objective_mode == MARKET_PLUS_AGING
        aging_scale = (
            problem.c_aging * prm.q_nom / (1.0 - prm.eol) / (2.0 * max(problem.believed_state.q_loss_cyc, prm.q_floor))
        )
        improved, _ = _kernels.polish(
            np.ascontiguousarray(plan, dtype=float), self.levels,
            np.ascontiguousarray(problem.prices.prices, dtype=float), float(problem.believed_state.soc),
            self.model, self.xs, self.ys, self.scale, self.fec_unit, problem.q_act, _terminal_price(problem),
            prm.soc_min, with_aging, aging_scale, problem.believed_state.q_loss_cyc, prm.a2, prm.b2, prm.c2,
            prm.d2, 0.01 * prm.i_max, -1.0 if fec_cap is None else float(fec_cap), max_sweeps,
        )
        return improved


def power_levels(p_max: float, n_levels: int) -> np.ndarray:
    levels = np.linspace(-p_max, p_max, n_levels)
    if n_levels % 2:
        levels[n_levels // 2] = 0.0
    else:
        levels = np.sort(np.append(levels, 0.0))
    return levels


def _aging_weight(problem: HorizonProblem, sched: DispatchSchedule) -> float:
    """Depth factor that makes the per-step surrogate reproduce the schedule's true aging cost."""
    prm = problem.params
    c_rate = np.abs(sched.p_dc) / problem.q_act
    fec = np.abs(sched.p_dc) * problem.grid.dt_hours / (2.0 * problem.q_act)
    denom = float(np.sum(fec * (prm.a2 * c_rate + prm.b2) ** 2))
    if denom <= 0.0:
        return 0.0
    return sched.aging_cost / denom


def _initial_aging_weight(problem: HorizonProblem) -> float:
    """Depth factor of a nominal full-depth cycle."""
    prm = problem.params
    doc = min(prm.soc_max - prm.soc_min, 1.0)
    depth = prm.c2 * (doc - 0.6) ** 3 + prm.d2
    per_unit = depth**2 / (2.0 * max(problem.believed_state.q_loss_cyc, prm.q_floor))
    return per_unit * problem.c_aging * prm.q_nom / (1.0 - prm.eol)


def solve_horizon(problem: HorizonProblem, solver_cfg: SolverConfig | None = None) -> DispatchSchedule:
    """Minimise the problem objective; deterministic for identical inputs.

    Market-only problems are solved by one DP pass, or by bisection on a
    throughput price when an FEC cap binds. Aging-aware problems run a
    fixed point on the cyclic aging price. The result is then refined by
    coordinate descent on the exact objective.
    """
    cfg = solver_cfg or SolverConfig()
    tables = _DPTables(problem, power_levels(problem.params.p_max, cfg.n_levels), cfg.n_soc)
    zero = evaluate_schedule(problem, np.zeros(problem.grid.n_steps))
    cap = problem.fec_cap

    if problem.objective_mode == MARKET_PLUS_AGING:
        candidates = _aging_candidates(problem, tables, cfg, zero)
        sched = _best(*candidates)
        if cfg.polish_sweeps > 0:
            # one cheap sweep on every candidate; the surrogate ranks them poorly
            sched = _best(sched, *(evaluate_schedule(problem, tables.polish(c.p_ac, 1, None)) for c in candidates))
    else:
        sched = _best(zero, evaluate_schedule(problem, tables.solve(0.0, cfg.tie_tol)))
        if cap is not None and sched.predicted_fec > cap + 1e-9:
            sched = _solve_capped(problem, tables, cfg, cap, zero)
    if cfg.polish_sweeps > 0:
        polished = evaluate_schedule(problem, tables.polish(sched.p_ac, cfg.polish_sweeps, cap))
        if cap is None or polished.predicted_fec <= cap + 1e-9:
            sched = _best(sched, polished)
    return sched


def _best(*candidates: DispatchSchedule) -> DispatchSchedule:
    # candidates are ordered by preference, so ties keep the earlier one
    best = candidates[0]
    for c in candidates[1:]:
        if c.predicted_cost < best.predicted_cost - 1e-12 * (1.0 + abs(best.predicted_cost)):
            best = c
    return best


def _aging_candidates(problem, tables, cfg, zero) -> list:
    """Schedules visited by a fixed point on the depth factor of the cyclic aging price.

    Each step is charged fec * (a2 C + b2)^2 * weight, which is exact in the
    C-rate and leaves only the horizon's depth of cycle to the weight. The
    weight is refitted to the true horizon cost of the last schedule until
    the objective settles. Shallow cycles are much cheaper than the nominal
    full cycle, so chains also start from fractions of the nominal weight.
    Returns the idle schedule followed by every distinct schedule visited.
    """
    w0 = _initial_aging_weight(problem)
    solved = {}

    def run(weight):
        key = round(weight, 9)
        if key not in solved:
            solved[key] = evaluate_schedule(problem, tables.solve(0.0, cfg.tie_tol, aging_weight=weight))
        return solved[key]

    for frac in cfg.fp_start_fractions:
        weight = w0 * frac
        prev_cost = None
        for _ in range(cfg.max_fp_iter):
            sched = run(weight)
            if sched.predicted_fec <= 0.0:
                break
            if prev_cost is not None and abs(sched.predicted_cost - prev_cost) <= cfg.fp_rtol * max(abs(prev_cost), 1e-9):
                break
            prev_cost = sched.predicted_cost
            weight = _aging_weight(problem, sched)
    out = [zero]
    for sched in solved.values():
        if not any(np.array_equal(sched.p_ac, c.p_ac) for c in out):
            out.append(sched)
    return out


def _solve_capped(problem, tables, cfg, cap, zero) -> DispatchSchedule:
    """Bisection on a throughput price until the horizon FEC fits under the cap."""
    lo, hi = 0.0, 1.0
    feasible = None
    for _ in range(60):
        sched = evaluate_schedule(problem, tables.solve(hi, cfg.tie_tol))
        if sched.predicted_fec <= cap + 1e-9:
            feasible = sched
            break
        lo, hi = hi, hi * 2.0
    if feasible is None:
        return zero
    for _ in range(cfg.bisect_iter):
        if hi - lo <= cfg.bisect_rtol * hi:
            break
        mid = 0.5 * (lo + hi)
        sched = evaluate_schedule(problem, tables.solve(mid, cfg.tie_tol))
        if sched.predicted_fec <= cap + 1e-9:
            hi = mid
            feasible = _best(feasible, sched)
        else:
            lo = mid
    return _best(feasible, zero) if feasible.predicted_cost <= zero.predicted_cost else zero


# --- brute-force oracle ---------------------------------------------------


def enumerate_optimal(problem: HorizonProblem, levels: int) -> DispatchSchedule:
    """Exact optimum over all sequences of ``levels`` evenly spaced power levels."""
    n = problem.grid.n_steps
    if n > 8 or levels > 5:
        raise OracleScopeError(f"oracle limited to 8 steps and 5 levels, got {n} steps and {levels} levels")
    acts = power_levels(problem.params.p_max, levels)
    seqs = np.array(list(itertools.product(acts, repeat=n)), dtype=float)
    m = seqs.shape[0]
    soc = np.empty((m, n + 1))
    soc[:, 0] = problem.believed_state.soc
    ok = np.ones(m, dtype=bool)
    cur = np.zeros((m, n))
    volt = np.zeros((m, n))
    pdc = np.zeros((m, n))
    for t in range(n):
        s_next, feas, i, v, p_dc = _model_step(problem, soc[:, t], seqs[:, t])
        ok &= feas
        soc[:, t + 1] = np.where(feas, s_next, soc[:, t])
        idle = seqs[:, t] == 0.0
        cur[:, t] = np.where(idle, 0.0, np.nan_to_num(i))
        volt[:, t] = np.nan_to_num(v)
        pdc[:, t] = p_dc
    dt_h = problem.grid.dt_hours
    cost = seqs @ problem.prices.prices * dt_h / 1000.0 - _terminal_value(problem, soc[:, -1])
    fec = np.sum(np.abs(pdc), axis=1) * dt_h / (2.0 * problem.q_act)
    cap = problem.fec_cap
    if cap is not None:
        ok &= fec <= cap + 1e-9
    cost = np.where(ok, cost, np.inf)
    if problem.objective_mode == MARKET_PLUS_AGING:
        prm = problem.params
        for k in np.flatnonzero(ok & (fec > 0)):
            stats = cycle_stats(soc[k], cur[k], volt[k], problem.q_act, problem.grid, 0.01 * prm.i_max)
            dq = cyclic_loss(stats, problem.believed_state.q_loss_cyc, prm)
            cost[k] += aging_cost(dq, problem.c_aging, prm.q_nom, prm.eol)
    best = cost.min()
    if not np.isfinite(best):
        raise SolverError("no feasible sequence (the idle sequence should always be feasible)")
    tol = 1e-9 * (1.0 + abs(best))
    candidates = np.flatnonzero(cost <= best + tol)
    # prefer the least total |power| among ties
    k = candidates[np.argmin(np.abs(seqs[candidates]).sum(axis=1))]
    return evaluate_schedule(problem, seqs[k])


# --- independent constraint audit -----------------------------------------


def audit_schedule(problem: HorizonProblem, schedule: DispatchSchedule, tol: float = 1e-9) -> list:
    """Re-simulate a schedule step by step with the scalar ECM functions.

    Returns a list of human-readable violations (empty when feasible).
    """
    prm = problem.params
    inv = InverterModel("constant", prm.eta_inv)
    r = effective_resistance(prm.r0, problem.believed_state.r_incr)
    soc = problem.believed_state.soc
    problems = []
    for t, p in enumerate(schedule.p_ac):
        if abs(p) > prm.p_max + tol:
            problems.append(f"step {t}: |p_ac| {abs(p)} above p_max")
            continue
        p_dc = inverter_dc_from_ac(float(p), inv, prm.p_max)
        ocv_v = ocv(min(max(soc, 0.0), 1.0), prm.ocv_curve)
        try:
            i = current_from_dc_power(ocv_v, r, p_dc * 1000.0)
        except InfeasiblePowerError:
            problems.append(f"step {t}: DC power {p_dc} kW not deliverable")
            continue
        v = terminal_voltage(ocv_v, r, i)
        if abs(i) > prm.i_max + tol:
            problems.append(f"step {t}: current {i} A beyond i_max")
        if not prm.v_min - tol <= v <= prm.v_max + tol:
            problems.append(f"step {t}: voltage {v} V outside limits")
        soc = soc + problem.grid.dt / (3600.0 * prm.capacity_ah * problem.soh) * i
        if not prm.soc_min - tol <= soc <= prm.soc_max + tol:
            problems.append(f"step {t}: soc {soc} outside bounds")
        if abs(soc - schedule.predicted_soc[t]) > 1e-6:
            problems.append(f"step {t}: predicted soc {schedule.predicted_soc[t]} differs from {soc}")
    return problems
