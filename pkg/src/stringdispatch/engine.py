"""Rolling-horizon loop: plan 12 h per string, execute 4 h on the twin, feed back.

Four scenarios cross two switches. ``heterogeneity_aware`` decides whether
the optimizer sees each string's own degradation or treats every string
like the reference (first) string. ``aging_cost_aware`` adds the cyclic
aging cost to the objective; without it a daily FEC cap applies instead.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import CellModelParams, PriceSeries, StringState, TimeGrid, iso, resample_zoh, to_seconds
from .dispatch import MARKET_ONLY, MARKET_PLUS_AGING, SolverConfig, assemble_problem, solve_horizon
from .errors import BatteryExpiredError, ConfigurationError
from .twin import TWIN_INVERTER, simulate_window

DAY = 86400

SCENARIO_FLAGS = {
    "I": (False, False),
    "II": (True, False),
    "III": (False, True),
    "IV": (True, True),
}

DEFAULT_STRING_INITS = {
    # "new" string: commissioned and lightly used, so its aging law has a finite slope
    "A": StringState(0.5, q_loss_cal=0.01, q_loss_cyc=0.01, r_incr=1.0),
    "B": StringState(0.5, q_loss_cal=0.05, q_loss_cyc=0.05, r_incr=1.2),
}

STEP_COLUMNS = ("step", "time", "price", "p_planned", "p_realized", "soc", "v", "i", "p_dc", "clip_reason")
WINDOW_COLUMNS = (
    "window", "string", "start", "n_steps", "believed_soh", "believed_r_incr", "soh_before", "soh_after",
    "r_incr_after", "dq_cal", "dq_cyc", "dfec", "planned_fec", "predicted_cost",
)


@dataclass(frozen=True)
class ScenarioConfig:
    id: str
    heterogeneity_aware: bool
    aging_cost_aware: bool
    fec_cap: float | None = 2.0  # FEC per day, per string
    string_inits: dict = field(default_factory=lambda: dict(DEFAULT_STRING_INITS))
    prediction_horizon: int = 12 * 3600
    control_horizon: int = 4 * 3600
    dt: int = 300
    start_soc: float = 0.5
    c_aging: float = 200.0
    params: CellModelParams = field(default_factory=CellModelParams)
    solver: SolverConfig = field(default_factory=SolverConfig)
    seed: int = 0

    def __post_init__(self):
        if self.id not in SCENARIO_FLAGS:
            raise ConfigurationError(f"unknown scenario {self.id!r}; expected one of {sorted(SCENARIO_FLAGS)}")
        if (self.heterogeneity_aware, self.aging_cost_aware) != SCENARIO_FLAGS[self.id]:
            raise ConfigurationError(f"flags do not match scenario {self.id}")
        if self.aging_cost_aware and self.fec_cap is not None:
            raise ConfigurationError(f"scenario {self.id} runs without an FEC cap")
        if self.fec_cap is not None and self.fec_cap <= 0:
            raise ConfigurationError("fec_cap must be positive")
        if not self.string_inits:
            raise ConfigurationError("at least one string is required")
        if self.dt <= 0 or self.control_horizon % self.dt or self.prediction_horizon % self.dt:
            raise ConfigurationError("horizons must be positive multiples of dt")
        if not 0 < self.control_horizon <= self.prediction_horizon:
            raise ConfigurationError("need 0 < control horizon <= prediction horizon")
        if not self.params.soc_min <= self.start_soc <= self.params.soc_max:
            raise ConfigurationError(f"start_soc {self.start_soc} outside the operating window")

    @property
    def objective_mode(self) -> str:
        return MARKET_PLUS_AGING if self.aging_cost_aware else MARKET_ONLY

    @property
    def reference_string(self) -> str:
        return next(iter(self.string_inits))

    def to_dict(self) -> dict:
        return _jsonable(dataclasses.asdict(self))

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def scenario(scenario_id: str, **overrides) -> ScenarioConfig:
    """Scenario with the standard flags; scenarios III/IV drop the FEC cap."""
    aware, aging = SCENARIO_FLAGS.get(scenario_id, (False, False))
    if aging:
        overrides.setdefault("fec_cap", None)
    return ScenarioConfig(scenario_id, aware, aging, **overrides)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


@dataclass
class RunLog:
    scenario_id: str
    dt: int
    steps: dict  # string -> {column: list}
    windows: list  # rows keyed by WINDOW_COLUMNS
    initial_states: dict
    final_states: dict
    metadata: dict = field(default_factory=dict)
    expired: str | None = None

    @property
    def strings(self) -> list:
        return list(self.steps)

    def series(self, string: str, column: str) -> np.ndarray:
        return np.asarray(self.steps[string][column])

    def save(self, directory) -> None:
        """Write string_<name>.csv, windows.csv and metadata.json."""
        os.makedirs(directory, exist_ok=True)
        for name, cols in self.steps.items():
            _write_csv(os.path.join(directory, f"string_{name}.csv"), STEP_COLUMNS,
                       zip(*(cols[c] for c in STEP_COLUMNS)))
        _write_csv(os.path.join(directory, "windows.csv"), WINDOW_COLUMNS,
                   ([row[c] for c in WINDOW_COLUMNS] for row in self.windows))
        meta = dict(self.metadata)
        meta.update(
            scenario=self.scenario_id,
            dt=self.dt,
            strings=self.strings,
            initial_states={k: s.to_dict() for k, s in self.initial_states.items()},
            final_states={k: s.to_dict() for k, s in self.final_states.items()},
            expired=self.expired,
        )
        with open(os.path.join(directory, "metadata.json"), "w") as fh:
            json.dump(_jsonable(meta), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, directory) -> "RunLog":
        with open(os.path.join(directory, "metadata.json")) as fh:
            meta = json.load(fh)
        steps = {}
        for name in meta["strings"]:
            with open(os.path.join(directory, f"string_{name}.csv"), newline="") as fh:
                rows = list(csv.DictReader(fh))
            steps[name] = {c: [_parse_cell(c, r[c]) for r in rows] for c in STEP_COLUMNS}
        with open(os.path.join(directory, "windows.csv"), newline="") as fh:
            windows = [{c: _parse_cell(c, r[c]) for c in WINDOW_COLUMNS} for r in csv.DictReader(fh)]
        states = {k: {n: StringState(**s) for n, s in meta[k].items()} for k in ("initial_states", "final_states")}
        extra = {k: v for k, v in meta.items()
                 if k not in ("scenario", "dt", "strings", "initial_states", "final_states", "expired")}
        return cls(meta["scenario"], meta["dt"], steps, windows, states["initial_states"],
                   states["final_states"], extra, meta["expired"])


_TEXT_COLUMNS = {"time", "clip_reason", "string", "start"}
_INT_COLUMNS = {"step", "window", "n_steps"}


def _parse_cell(column, text):
    if column in _TEXT_COLUMNS:
        return text
    if column in _INT_COLUMNS:
        return int(text)
    return float(text)


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])


def scenario_view(scenario: ScenarioConfig, true_states: dict) -> dict:
    """What the optimizer believes about each string.

    Aware scenarios see the true states. Unaware ones give every string the
    degradation of the reference string (its losses and resistance) while
    keeping the string's own measured SOC.
    """
    if scenario.heterogeneity_aware:
        return dict(true_states)
    ref = true_states[scenario.reference_string]
    return {name: dataclasses.replace(ref, soc=s.soc, fec_total=s.fec_total) for name, s in true_states.items()}


def _day_segments(offset: int, n: int, steps_per_day: int):
    """Split steps [offset, offset + n) at day boundaries (counted from the run start)."""
    out = []
    k = offset
    while k < offset + n:
        end = min(offset + n, (k // steps_per_day + 1) * steps_per_day)
        out.append((k, end - k))
        k = end
    return out


def run_rolling_horizon(
    scenario: ScenarioConfig,
    prices: PriceSeries,
    span,
    start=None,
    forecast: Callable[[PriceSeries], PriceSeries] | None = None,
) -> RunLog:
    """Simulate ``span`` seconds from ``start`` (default: first price time).

    Prices must cover the span plus one prediction horizon. The optimizer
    sees ``forecast(true prices)``; the default is perfect foresight. If a
    string reaches end of life the run stops with a partial log and the
    string's name in ``RunLog.expired``.
    """
    cfg = scenario
    prm = cfg.params
    dt = cfg.dt
    span = to_seconds(span)
    start = prices.grid.start if start is None else to_seconds(start)
    if span <= 0 or span % dt:
        raise ConfigurationError(f"span {span}s is not a positive multiple of dt {dt}s")
    n_total = span // dt
    n_ctrl = cfg.control_horizon // dt
    n_pred = cfg.prediction_horizon // dt
    full = resample_zoh(prices, TimeGrid(start, dt, n_total + n_pred))
    forecast = forecast or (lambda p: p)
    steps_per_day = DAY // dt if DAY % dt == 0 else None
    if cfg.fec_cap is not None and steps_per_day is None:
        raise ConfigurationError("a daily FEC cap needs dt to divide one day")

    states = {n: dataclasses.replace(s, soc=cfg.start_soc) for n, s in cfg.string_inits.items()}
    initial = dict(states)
    steps = {n: {c: [] for c in STEP_COLUMNS} for n in states}
    windows = []
    realized_day = {n: {} for n in states}  # day index -> FEC
    planned_day = {n: {} for n in states}
    expired = None

    offset = 0
    window = 0
    while offset < n_total and expired is None:
        n_exec = min(n_ctrl, n_total - offset)
        horizon = forecast(full.sub(offset, n_pred))
        believed = scenario_view(cfg, states)
        schedules = _plan(cfg, horizon, believed, planned_day, realized_day, offset, steps_per_day)

        for name, state in states.items():
            sched = schedules[name]
            plan = sched.p_ac[:n_exec]
            q_believed = prm.q_nom * believed[name].soh
            planned_step_fec = np.abs(sched.p_dc[:n_exec]) * (dt / 3600.0) / (2.0 * q_believed)
            soh_before = state.soh
            dq_cal = dq_cyc = dfec = 0.0
            try:
                for seg_start, seg_n in (_day_segments(offset, n_exec, steps_per_day) if steps_per_day else [(offset, n_exec)]):
                    lo = seg_start - offset
                    budget = None
                    day = seg_start // steps_per_day if steps_per_day else 0
                    if cfg.fec_cap is not None:
                        budget = max(cfg.fec_cap - realized_day[name].get(day, 0.0), 0.0)
                    res = simulate_window(state, plan[lo:lo + seg_n], prm, TWIN_INVERTER,
                                          full.grid.sub(seg_start, seg_n), fec_budget=budget)
                    realized_day[name][day] = realized_day[name].get(day, 0.0) + res.dfec
                    planned_day[name][day] = planned_day[name].get(day, 0.0) + float(np.sum(planned_step_fec[lo:lo + seg_n]))
                    dq_cal += res.dq_cal
                    dq_cyc += res.dq_cyc
                    dfec += res.dfec
                    _record(steps[name], full, seg_start, plan[lo:lo + seg_n], res)
                    state = res.state_after
            except BatteryExpiredError:
                expired = name
                break
            states[name] = state
            windows.append(dict(
                window=window, string=name, start=iso(int(full.grid.times[offset])), n_steps=n_exec,
                believed_soh=believed[name].soh, believed_r_incr=believed[name].r_incr,
                soh_before=soh_before, soh_after=state.soh, r_incr_after=state.r_incr,
                dq_cal=dq_cal, dq_cyc=dq_cyc, dfec=dfec, planned_fec=float(np.sum(planned_step_fec)),
                predicted_cost=sched.predicted_cost,
            ))
            if state.soh <= prm.eol and expired is None:
                expired = name
        offset += n_exec
        window += 1

    meta = dict(
        config=cfg.to_dict(), config_hash=cfg.config_hash(), seed=cfg.seed,
        start=iso(start), span=span, windows=window, steps=offset,
    )
    return RunLog(cfg.id, dt, steps, windows, initial, dict(states), meta, expired)


def _plan(cfg, horizon, believed, planned_day, realized_day, offset, steps_per_day) -> dict:
    """Per-string schedules; unaware scenarios plan one pseudo-string and copy it."""

    def solve(name):
        budget = None
        if cfg.fec_cap is not None:
            day = offset // steps_per_day
            used = max(realized_day[name].get(day, 0.0), planned_day[name].get(day, 0.0))
            budget = max(cfg.fec_cap - used, 0.0)
        problem = assemble_problem(
            believed[name], horizon, cfg.objective_mode, cfg.params, cfg.c_aging,
            fec_cap_per_day=cfg.fec_cap, fec_budget=budget,
        )
        return solve_horizon(problem, cfg.solver)

    if cfg.heterogeneity_aware:
        return {name: solve(name) for name in believed}
    shared = solve(cfg.reference_string)
    return {name: shared for name in believed}


def _record(cols, full: PriceSeries, seg_start, plan, res) -> None:
    for k, (p, st) in enumerate(zip(plan, res.steps)):
        t = seg_start + k
        cols["step"].append(t)
        cols["time"].append(iso(int(full.grid.times[t])))
        cols["price"].append(float(full.prices[t]))
        cols["p_planned"].append(float(p))
        cols["p_realized"].append(st.p_ac_realized)
        cols["soc"].append(st.soc_after)
        cols["v"].append(st.v)
        cols["i"].append(st.i)
        cols["p_dc"].append(st.p_dc)
        cols["clip_reason"].append(st.clip_reason)


def run_comparison(scenarios, prices: PriceSeries, span, start=None, forecast=None) -> dict:
    """Run each scenario from the same initial states and prices; keyed by scenario id."""
    out = {}
    for sc in scenarios:
        key = sc.id
        while key in out:
            key += "'"
        out[key] = run_rolling_horizon(sc, prices, span, start=start, forecast=forecast)
    return out
