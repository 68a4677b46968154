"""KPIs of a run: schedule mismatch, revenue, missed revenue, SOH loss and
revenue per unit of SOH loss, per string and for the system."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass

import numpy as np

NA = None  # not-applicable marker
NA_TEXT = "n/a"


def _throughput(log, string, column):
    return float(np.sum(np.abs(log.series(string, column))))


def power_schedule_mismatch(log, string: str, signed: bool = False) -> float:
    """1 - realized / planned energy throughput; 0 when nothing was planned.

    The default compares absolute throughput. ``signed=True`` compares the
    signed energy sums instead, where charge and discharge errors can cancel.
    """
    if signed:
        planned = float(np.sum(log.series(string, "p_planned")))
        realized = float(np.sum(log.series(string, "p_realized")))
    else:
        planned = _throughput(log, string, "p_planned")
        realized = _throughput(log, string, "p_realized")
    if planned == 0.0:
        return 0.0
    return 1.0 - realized / planned


def _step_revenue(log, string, column) -> np.ndarray:
    # kW * EUR/MWh * h / 1000 = EUR; charging (p > 0) costs money
    return -log.series(string, column) * log.series(string, "price") * (log.dt / 3600.0) / 1000.0


def revenue(log, string: str) -> float:
    return float(np.sum(_step_revenue(log, string, "p_realized")))


def missed_revenue(log, string: str):
    """(realized - planned revenue at the same prices) / realized revenue, or NA."""
    r = revenue(log, string)
    if r == 0.0:
        return NA
    diff = _step_revenue(log, string, "p_realized") - _step_revenue(log, string, "p_planned")
    return float(np.sum(diff)) / r


def delta_soh(log, string: str) -> float:
    return log.initial_states[string].soh - log.final_states[string].soh


def revenue_per_soh_loss(rev: float, dsoh: float):
    """EUR per unit (fraction) of SOH lost, or NA without aging."""
    if dsoh <= 0.0:
        return NA
    return rev / dsoh


@dataclass(frozen=True)
class StringKpi:
    mismatch: float
    revenue: float
    missed_revenue: float | None
    delta_soh: float
    revenue_per_soh_loss: float | None
    fec: float


@dataclass(frozen=True)
class KpiReport:
    scenario: str
    strings: dict  # name -> StringKpi
    revenue: float
    delta_soh: float
    fec: float
    revenue_per_soh_loss: float | None  # sum of per-string ratios
    pooled_revenue_per_soh_loss: float | None  # total revenue / total SOH loss

    def to_dict(self) -> dict:
        d = asdict(self)
        d["strings"] = {k: asdict(v) for k, v in self.strings.items()}
        return d


def kpi_report(log) -> KpiReport:
    per = {}
    for name in log.strings:
        rev = revenue(log, name)
        d = delta_soh(log, name)
        per[name] = StringKpi(
            mismatch=power_schedule_mismatch(log, name),
            revenue=rev,
            missed_revenue=missed_revenue(log, name),
            delta_soh=d,
            revenue_per_soh_loss=revenue_per_soh_loss(rev, d),
            fec=log.final_states[name].fec_total - log.initial_states[name].fec_total,
        )
    total_rev = sum(k.revenue for k in per.values())
    total_d = sum(k.delta_soh for k in per.values())
    ratios = [k.revenue_per_soh_loss for k in per.values()]
    return KpiReport(
        scenario=log.scenario_id,
        strings=per,
        revenue=total_rev,
        delta_soh=total_d,
        fec=sum(k.fec for k in per.values()),
        revenue_per_soh_loss=NA if any(r is NA for r in ratios) else float(sum(ratios)),
        pooled_revenue_per_soh_loss=revenue_per_soh_loss(total_rev, total_d),
    )


# --- report output --------------------------------------------------------

_ROWS = (
    ("Power schedule mismatch", "mismatch", "pct"),
    ("Revenues (EUR)", "revenue", "eur"),
    ("Missed revenues", "missed_revenue", "pct"),
    ("SOH loss", "delta_soh", "pct3"),
    ("FEC", "fec", "num"),
    ("Revenue per unit SOH loss (EUR/dSOH)", "revenue_per_soh_loss", "eur"),
)


def _cell(value, kind) -> str:
    if value is NA:
        return NA_TEXT
    if kind == "pct":
        return f"{100 * value:.1f}%"
    if kind == "pct3":
        return f"{100 * value:.3f}%"
    if kind == "eur":
        return f"{value:,.0f}".replace(",", " ")
    return f"{value:.2f}"


def format_table(reports) -> str:
    """Aligned text table: one column per (scenario, string), metrics as rows,
    then system totals per scenario."""
    reports = list(reports)
    header = ["Metric"]
    cols = []
    for rep in reports:
        for name, k in rep.strings.items():
            header.append(f"{rep.scenario} / {name}")
            cols.append(k)
    rows = [header]
    for label, attr, kind in _ROWS:
        rows.append([label] + [_cell(getattr(k, attr), kind) for k in cols])
    sys_header = ["System"] + [rep.scenario for rep in reports]
    sys_rows = [
        sys_header,
        ["Revenues (EUR)"] + [_cell(r.revenue, "eur") for r in reports],
        ["SOH loss"] + [_cell(r.delta_soh, "pct3") for r in reports],
        ["FEC"] + [_cell(r.fec, "num") for r in reports],
        ["Revenue per unit SOH loss, sum of strings"] + [_cell(r.revenue_per_soh_loss, "eur") for r in reports],
        ["Revenue per unit SOH loss, pooled"] + [_cell(r.pooled_revenue_per_soh_loss, "eur") for r in reports],
    ]
    return _align(rows) + "\n\n" + _align(sys_rows) + "\n"


def _align(rows) -> str:
    widths = [max(len(r[c]) for r in rows) for c in range(len(rows[0]))]
    lines = []
    for i, r in enumerate(rows):
        cells = [r[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(r[1:], widths[1:])]
        lines.append("  ".join(cells).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)


def to_csv(reports) -> str:
    """Long format: scenario, string, metric, value (empty value for n/a)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scenario", "string", "metric", "value"])
    for rep in reports:
        for name, k in rep.strings.items():
            for _, attr, _ in _ROWS:
                v = getattr(k, attr)
                w.writerow([rep.scenario, name, attr, "" if v is NA else repr(float(v))])
        for attr in ("revenue", "delta_soh", "fec", "revenue_per_soh_loss", "pooled_revenue_per_soh_loss"):
            v = getattr(rep, attr)
            w.writerow([rep.scenario, "system", attr, "" if v is NA else repr(float(v))])
    return buf.getvalue()


def to_json(reports) -> str:
    return json.dumps([r.to_dict() for r in reports], indent=2, sort_keys=True) + "\n"
