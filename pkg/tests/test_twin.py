import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stringdispatch.core import CellModelParams, StringState, TimeGrid
from stringdispatch.ecm import InverterModel, OcvCurve, current_from_dc_power, ocv
from stringdispatch.errors import SetpointError
from stringdispatch.twin import CLIP_REASONS, TWIN_INVERTER, execute_step, simulate_window

P = CellModelParams()
IDEAL = InverterModel("constant", 1.0)


def test_idle_step():
    s = StringState(0.5)
    r = execute_step(s, P, TWIN_INVERTER, 0.0, 300)
    assert (r.p_ac_realized, r.soc_after, r.clip_reason, r.i) == (0.0, 0.5, "none", 0.0)


def test_full_string_rejects_charge():
    r = execute_step(StringState(P.soc_max), P, TWIN_INVERTER, 10.0, 300)
    assert r.p_ac_realized == 0.0
    assert r.clip_reason == "soc"
    assert r.soc_after == P.soc_max


def test_charge_lands_on_soc_max():
    s = StringState(P.soc_max - 0.01)
    r = execute_step(s, P, IDEAL, 80.0, 300)
    assert r.clip_reason == "soc"
    assert r.soc_after == pytest.approx(P.soc_max, abs=1e-9)
    # independent check: the boundary current and its power
    i_b = 0.01 * 3600 * P.capacity_ah / 300
    v = ocv(s.soc, P.ocv_curve) + P.r0 * i_b
    assert r.p_ac_realized == pytest.approx(v * i_b / 1000.0, rel=1e-9)


def test_unclipped_step_matches_request():
    r = execute_step(StringState(0.5), P, TWIN_INVERTER, -40.0, 300)
    assert r.clip_reason == "none"
    assert r.p_ac_realized == -40.0
    p_dc = TWIN_INVERTER.dc_from_ac(-40.0, P.p_max)
    assert r.i == pytest.approx(current_from_dc_power(ocv(0.5, P.ocv_curve), P.r0, p_dc * 1000.0))


def test_power_current_and_voltage_reasons():
    r = execute_step(StringState(0.5), P, TWIN_INVERTER, 100.0, 300)
    assert r.clip_reason == "power" and r.p_ac_realized == P.p_max
    tight_i = P.replace(i_max=50.0)
    r = execute_step(StringState(0.5), tight_i, TWIN_INVERTER, 60.0, 300)
    assert r.clip_reason == "current" and r.i == pytest.approx(50.0)
    v_cap = ocv(0.5, P.ocv_curve) + 5.0
    tight_v = P.replace(v_max=v_cap)
    r = execute_step(StringState(0.5), tight_v, TWIN_INVERTER, 60.0, 300)
    assert r.clip_reason == "voltage" and r.v == pytest.approx(v_cap)


def test_dc_limit_reason():
    r = execute_step(StringState(0.5), P, IDEAL, 50.0, 300, dc_limit=20.0)
    assert r.clip_reason == "fec_cap"
    assert r.p_dc == pytest.approx(20.0)


def test_non_finite_setpoint():
    with pytest.raises(SetpointError):
        execute_step(StringState(0.5), P, TWIN_INVERTER, float("inf"), 300)


def test_zero_window_is_calendar_only():
    grid = TimeGrid(0, 300, 48)
    w = simulate_window(StringState(0.5, 0.01, 0.01), np.zeros(48), P, TWIN_INVERTER, grid)
    assert w.dfec == 0.0 and w.dq_cyc == 0.0 and w.dq_cal > 0.0
    assert w.state_after.soc == 0.5


def test_symmetric_window_near_lossless():
    flat = CellModelParams(ocv_curve=OcvCurve((0.0, 1.0), (700.0, 700.0 + 1e-6)), r0=1e-9)
    grid = TimeGrid(0, 300, 8)
    sched = np.array([40.0] * 4 + [-40.0] * 4)
    w = simulate_window(StringState(0.5), sched, flat, IDEAL, grid)
    assert w.state_after.soc == pytest.approx(0.5, abs=1e-9)


def test_fill_window_clips_trailing_steps():
    grid = TimeGrid(0, 300, 12)
    sched = np.full(12, 40.0)  # 40 kWh DC over one hour
    w = simulate_window(StringState(0.5), sched, P, IDEAL, grid)
    reasons = [s.clip_reason for s in w.steps]
    # independent stepwise integration of the fill
    soc, first_clip = 0.5, None
    for k in range(12):
        i = current_from_dc_power(ocv(soc, P.ocv_curve), P.r0, 40_000.0)
        nxt = soc + i * 300 / (3600 * P.capacity_ah)
        if nxt > P.soc_max:
            first_clip = k
            break
        soc = nxt
    assert first_clip is not None
    assert reasons[:first_clip] == ["none"] * first_clip
    assert reasons[first_clip:] == ["soc"] * (12 - first_clip)
    assert w.state_after.soc == pytest.approx(P.soc_max, abs=1e-12)


schedules = st.lists(st.floats(-120.0, 120.0), min_size=1, max_size=24)


@settings(max_examples=200, deadline=None)
@given(sched=schedules, soc=st.floats(0.1, 0.9), soh=st.floats(0.81, 1.0), r_incr=st.floats(1.0, 1.5))
def test_window_safety_and_conservation(sched, soc, soh, r_incr):
    state = StringState.aged(soh, soc, r_incr)
    grid = TimeGrid(0, 300, len(sched))
    w = simulate_window(state, np.array(sched), P, TWIN_INVERTER, grid)
    i = w.column("i")
    v = w.column("v")
    socs = w.soc_trajectory
    assert np.all(socs >= P.soc_min - 1e-12) and np.all(socs <= P.soc_max + 1e-12)
    assert np.all(np.abs(i) <= P.i_max + 1e-9)
    assert np.all(v[i != 0] >= P.v_min - 1e-9) and np.all(v[i != 0] <= P.v_max + 1e-9)
    real = w.column("p_ac_realized")
    req = w.column("p_ac_requested")
    assert np.all(np.abs(real) <= np.minimum(np.abs(req), P.p_max) + 1e-12)
    assert np.all(real * req >= 0.0)
    assert all(s.clip_reason in CLIP_REASONS for s in w.steps)
    for s in w.steps:
        assert (s.clip_reason == "none") == (abs(s.p_ac_realized - s.p_ac_requested) <= 1e-9)
    charge = np.sum(i) * grid.dt / (3600 * P.capacity_ah * state.soh)
    assert w.state_after.soc - state.soc == pytest.approx(charge, abs=1e-9)


@settings(max_examples=200, deadline=None)
@given(a=st.floats(0.0, 120.0), b=st.floats(0.0, 120.0), sign=st.sampled_from([1.0, -1.0]), soc=st.floats(0.1, 0.9))
def test_clipping_monotone(a, b, sign, soc):
    lo, hi = sorted((a, b))
    s = StringState.aged(0.9, soc, 1.2)
    r_lo = execute_step(s, P, TWIN_INVERTER, sign * lo, 300)
    r_hi = execute_step(s, P, TWIN_INVERTER, sign * hi, 300)
    assert abs(r_lo.p_ac_realized) <= abs(r_hi.p_ac_realized) + 1e-9
