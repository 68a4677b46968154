"""Compiled inner loops of the horizon solver.

The model here mirrors ``dispatch._model_step`` exactly; the numpy version
stays the reference used by the brute-force oracle and the tests.
"""
import math

import numpy as np
from numba import njit

_EPS_SOC = 1e-12


@njit(cache=True)
def interp_ocv(soc, xs, ys):
    if soc <= xs[0]:
        return ys[0]
    n = xs.size
    if soc >= xs[n - 1]:
        return ys[n - 1]
    lo = 0
    hi = n - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if xs[mid] <= soc:
            lo = mid
        else:
            hi = mid
    w = (soc - xs[lo]) / (xs[hi] - xs[lo])
    return ys[lo] + w * (ys[hi] - ys[lo])


@njit(cache=True)
def ocv_integral(s, xs, ys):
    """Integral of the piecewise-linear OCV from xs[0] to s (V per unit SOC)."""
    total = 0.0
    for k in range(xs.size - 1):
        if s <= xs[k]:
            break
        hi = min(s, xs[k + 1])
        total += 0.5 * (ys[k] + interp_ocv(hi, xs, ys)) * (hi - xs[k])
    return total


@njit(cache=True)
def step(soc, p_ac, m, xs, ys):
    """One optimizer-model step; ``m`` packs (eta, r, i_max, v_min, v_max,
    soc_min, soc_max, p_max, dt, charge_per_soc).

    Returns (feasible, soc_next, i, v, p_dc_kw).
    """
    eta = m[0]
    r = m[1]
    if p_ac == 0.0:
        return True, soc, 0.0, interp_ocv(soc, xs, ys), 0.0
    p_dc = p_ac * eta if p_ac >= 0.0 else p_ac / eta
    s = min(max(soc, 0.0), 1.0)
    ocv_v = interp_ocv(s, xs, ys)
    p_w = p_dc * 1000.0
    disc = ocv_v * ocv_v + 4.0 * r * p_w
    if disc <= 0.0:
        return False, soc, math.nan, math.nan, p_dc
    i = 2.0 * p_w / (ocv_v + math.sqrt(disc))
    v = ocv_v + r * i
    soc_next = soc + i * m[8] / m[9]
    ok = (
        abs(i) <= m[2]
        and v >= m[3]
        and v <= m[4]
        and soc_next >= m[5] - _EPS_SOC
        and soc_next <= m[6] + _EPS_SOC
        and abs(p_ac) <= m[7]
    )
    return ok, soc_next, i, v, p_dc


@njit(cache=True)
def wear(p_dc, fec_unit, q_act, fec_price, aging_weight, a2, b2):
    fec = abs(p_dc) * fec_unit
    c = a2 * abs(p_dc) / q_act + b2
    return fec_price * fec + aging_weight * fec * c * c


@njit(cache=True)
def interp_value(V, s, s0, ds, n):
    pos = (min(max(s, s0), s0 + ds * (n - 1)) - s0) / ds
    lo = int(math.floor(pos))
    if lo > n - 2:
        lo = n - 2
    if lo < 0:
        lo = 0
    w = pos - lo
    return V[lo] * (1.0 - w) + V[lo + 1] * w


@njit(cache=True)
def backward(prices, levels, lo, w, static, terminal, scale):
    n = prices.size
    n_soc, n_lev = static.shape
    V = np.empty((n + 1, n_soc))
    V[n, :] = terminal
    for t in range(n - 1, -1, -1):
        c = prices[t] * scale
        for k in range(n_soc):
            best = math.inf
            for a in range(n_lev):
                st = static[k, a]
                if st == math.inf:
                    continue
                j = lo[k, a]
                ww = w[k, a]
                q = levels[a] * c + st + V[t + 1, j] * (1.0 - ww) + V[t + 1, j + 1] * ww
                if q < best:
                    best = q
            V[t, k] = best
    return V


@njit(cache=True)
def forward(V, prices, levels, order, s_start, m, xs, ys, s0, ds, scale, fec_unit, q_act,
            fec_price, aging_weight, a2, b2, tie_tol):
    n = prices.size
    n_lev = levels.size
    n_soc = V.shape[1]
    plan = np.zeros(n)
    s = s_start
    Q = np.empty(n_lev)
    nxt = np.empty(n_lev)
    for t in range(n):
        for a in range(n_lev):
            ok, s1, i1, v1, pdc1 = step(s, levels[a], m, xs, ys)
            if not ok:
                Q[a] = math.inf
                continue
            nxt[a] = s1
            q = levels[a] * prices[t] * scale + wear(pdc1, fec_unit, q_act, fec_price, aging_weight, a2, b2)
            if t + 1 < n:
                best2 = math.inf
                for b in range(n_lev):
                    ok2, s2, i2, v2, pdc2 = step(s1, levels[b], m, xs, ys)
                    if not ok2:
                        continue
                    q2 = (levels[b] * prices[t + 1] * scale
                          + wear(pdc2, fec_unit, q_act, fec_price, aging_weight, a2, b2)
                          + interp_value(V[t + 2], s2, s0, ds, n_soc))
                    if q2 < best2:
                        best2 = q2
                q += best2
            else:
                q += interp_value(V[t + 1], s1, s0, ds, n_soc)
            Q[a] = q
        best = math.inf
        for a in range(n_lev):
            if Q[a] < best:
                best = Q[a]
        tol = tie_tol * (1.0 + abs(best))
        choice = order[0]
        for a in order:
            if Q[a] <= best + tol:
                choice = a
                break
        plan[t] = levels[choice]
        s = nxt[choice]
    return plan


@njit(cache=True)
def objective(plan, prices, s_start, m, xs, ys, scale, fec_unit, q_act, term_price, soc_min,
              with_aging, aging_scale, q_acc, a2, b2, c2, d2, i_thr, fec_cap):
    """True horizon objective of a plan; inf when infeasible or over the FEC cap.

    aging_scale = c_aging * q_nom / (1 - eol) / (2 * max(q_acc, q_floor)).
    """
    n = plan.size
    soc = np.empty(n + 1)
    soc[0] = s_start
    market = 0.0
    fec = 0.0
    p_sum = 0.0
    n_active = 0
    for t in range(n):
        ok, s1, i, v, p_dc = step(soc[t], plan[t], m, xs, ys)
        if not ok:
            return math.inf
        soc[t + 1] = s1
        market += plan[t] * prices[t] * scale
        if plan[t] != 0.0:
            p_abs = abs(v * i) / 1000.0
            fec += p_abs * fec_unit
            if abs(i) > i_thr:
                p_sum += p_abs
                n_active += 1
    if fec_cap >= 0.0 and fec > fec_cap + 1e-9:
        return math.inf
    stored = (ocv_integral(soc[n], xs, ys) - ocv_integral(soc_min, xs, ys)) * m[9] / 3.6e6
    cost = market - term_price * stored
    if with_aging and fec > 0.0:
        c_rate = p_sum / n_active / q_act if n_active > 0 else 0.0
        # depth of cycle from turning points
        num = 0.0
        den = 0.0
        last_tp = soc[0]
        direction = 0.0
        prev = soc[0]
        for k in range(1, n + 1):
            d = soc[k] - prev
            if d == 0.0:
                continue
            sgn = 1.0 if d > 0.0 else -1.0
            if direction != 0.0 and sgn != direction:
                depth = abs(prev - last_tp)
                num += depth * depth
                den += depth
                last_tp = prev
            direction = sgn
            prev = soc[k]
        depth = abs(prev - last_tp)
        num += depth * depth
        den += depth
        doc = num / den if den > 0.0 else 0.0
        if doc > 1.0:
            doc = 1.0
        sigma = (a2 * c_rate + b2) * (c2 * (doc - 0.6) ** 3 + d2)
        cost += sigma * sigma * fec * aging_scale
    return cost


@njit(cache=True)
def _index_of(levels, x):
    for a in range(levels.size):
        if levels[a] == x:
            return a
    return 0


@njit(cache=True)
def polish(plan, levels, prices, s_start, m, xs, ys, scale, fec_unit, q_act, term_price, soc_min,
           with_aging, aging_scale, q_acc, a2, b2, c2, d2, i_thr, fec_cap, max_sweeps):
    """Coordinate descent on the true objective over single-step level changes
    and energy-shifting changes of neighbouring steps."""
    best_plan = plan.copy()
    best = objective(best_plan, prices, s_start, m, xs, ys, scale, fec_unit, q_act, term_price, soc_min,
                     with_aging, aging_scale, q_acc, a2, b2, c2, d2, i_thr, fec_cap)
    cand = best_plan.copy()
    for _ in range(max_sweeps):
        improved = False
        for t in range(plan.size):
            keep = best_plan[t]
            choice = keep
            for a in range(levels.size):
                if levels[a] == keep:
                    continue
                cand[t] = levels[a]
                c = objective(cand, prices, s_start, m, xs, ys, scale, fec_unit, q_act, term_price, soc_min,
                              with_aging, aging_scale, q_acc, a2, b2, c2, d2, i_thr, fec_cap)
                if c < best - 1e-12 * (1.0 + abs(best)):
                    best = c
                    choice = levels[a]
            cand[t] = choice
            if choice != keep:
                best_plan[t] = choice
                improved = True
        # paired moves on neighbouring steps: shift energy from one step to the next
        nl = levels.size
        for t in range(plan.size - 1):
            ia = _index_of(levels, best_plan[t])
            ib = _index_of(levels, best_plan[t + 1])
            pick = 0
            for k in range(-nl + 1, nl):
                if k == 0 or ia + k < 0 or ia + k >= nl or ib - k < 0 or ib - k >= nl:
                    continue
                cand[t] = levels[ia + k]
                cand[t + 1] = levels[ib - k]
                c = objective(cand, prices, s_start, m, xs, ys, scale, fec_unit, q_act, term_price, soc_min,
                              with_aging, aging_scale, q_acc, a2, b2, c2, d2, i_thr, fec_cap)
                if c < best - 1e-12 * (1.0 + abs(best)):
                    best = c
                    pick = k
            cand[t] = levels[ia + pick]
            cand[t + 1] = levels[ib - pick]
            if pick != 0:
                best_plan[t] = cand[t]
                best_plan[t + 1] = cand[t + 1]
                improved = True
        if not improved:
            break
    return best_plan, best


@njit(cache=True)
def rollout(plan, s_start, m, xs, ys):
    """Trajectory of a plan: (feasible, first_bad_step, soc[n+1], i, v, p_dc)."""
    n = plan.size
    soc = np.empty(n + 1)
    cur = np.zeros(n)
    volt = np.zeros(n)
    pdc = np.zeros(n)
    soc[0] = s_start
    for t in range(n):
        ok, s1, i, v, p_dc = step(soc[t], plan[t], m, xs, ys)
        if not ok:
            return False, t, soc, cur, volt, pdc
        soc[t + 1] = s1
        cur[t] = i
        volt[t] = v
        pdc[t] = p_dc
    return True, -1, soc, cur, volt, pdc
