"""Command-line entry point.

Verbs: ``run``, ``compare``, ``gen-prices`` and ``validate-config``. The run
configuration is a YAML file; every key has a default, unknown keys are
errors, and command-line flags override file values.

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 runtime error.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from dataclasses import dataclass, field

import yaml

from .core import CellModelParams, StringState
from .dispatch import SolverConfig
from .ecm import OcvCurve
from .engine import DEFAULT_STRING_INITS, SCENARIO_FLAGS, run_rolling_horizon, scenario
from .errors import ConfigurationError, StringDispatchError
from .metrics import format_table, kpi_report, to_csv, to_json
from .prices import gen_synthetic_prices, load_prices, save_prices

_CELL_KEYS = {f.name for f in dataclasses.fields(CellModelParams)} - {"ocv_curve"}
_SOLVER_KEYS = {f.name for f in dataclasses.fields(SolverConfig)}
_STRING_KEYS = {"q_loss_cal", "q_loss_cyc", "r_incr"}
_SYNTH_KEYS = {"base", "amplitude", "noise_sd"}
_HORIZON_KEYS = {"prediction_h", "control_h", "dt_min"}


@dataclass
class RunConfig:
    scenarios: list = field(default_factory=lambda: ["I", "II", "III", "IV"])
    days: int = 1
    seed: int = 0
    prices: str | None = None  # CSV path; synthetic prices when unset
    synthetic: dict = field(default_factory=lambda: {"base": 80.0, "amplitude": 40.0, "noise_sd": 10.0})
    output: str = "out"
    start_soc: float = 0.5
    fec_cap: float = 2.0  # FEC per day, scenarios I and II
    c_aging: float = 200.0  # EUR per kWh, scenarios III and IV
    horizons: dict = field(default_factory=lambda: {"prediction_h": 12, "control_h": 4, "dt_min": 5})
    strings: dict = field(default_factory=lambda: {
        n: {"q_loss_cal": s.q_loss_cal, "q_loss_cyc": s.q_loss_cyc, "r_incr": s.r_incr}
        for n, s in DEFAULT_STRING_INITS.items()
    })
    cell: dict = field(default_factory=dict)
    ocv_table: str | None = None
    solver: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigurationError("config must be a mapping")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigurationError(f"unknown config key(s): {', '.join(unknown)}")
        cfg = cls()
        for key, value in data.items():
            default = getattr(cfg, key)
            # sections merge into their defaults; "strings" replaces the whole set
            if isinstance(default, dict) and key != "strings" and isinstance(value, dict):
                merged = dict(default)
                merged.update(value)
                value = merged
            setattr(cfg, key, value)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        _check_keys("synthetic", self.synthetic, _SYNTH_KEYS)
        _check_keys("horizons", self.horizons, _HORIZON_KEYS)
        _check_keys("cell", self.cell, _CELL_KEYS)
        _check_keys("solver", self.solver, _SOLVER_KEYS)
        if not isinstance(self.strings, dict) or not self.strings:
            raise ConfigurationError("strings must map names to initial states")
        for name, s in self.strings.items():
            if not isinstance(s, dict):
                raise ConfigurationError(f"strings.{name} must be a mapping")
            _check_keys(f"strings.{name}", s, _STRING_KEYS)
        if not isinstance(self.scenarios, list) or not self.scenarios:
            raise ConfigurationError("scenarios must be a non-empty list")
        for sid in self.scenarios:
            if sid not in SCENARIO_FLAGS:
                raise ConfigurationError(f"unknown scenario {sid!r}")
        if not isinstance(self.days, int) or self.days < 1:
            raise ConfigurationError("days must be a positive integer")
        if not isinstance(self.seed, int):
            raise ConfigurationError("seed must be an integer")
        if self.prices is not None and not os.path.isfile(self.prices):
            raise ConfigurationError(f"prices file {self.prices} does not exist")
        if self.ocv_table is not None and not os.path.isfile(self.ocv_table):
            raise ConfigurationError(f"ocv_table file {self.ocv_table} does not exist")
        if self.fec_cap is not None and not self.fec_cap > 0:
            raise ConfigurationError("fec_cap must be positive")
        self.scenario_configs()  # constructs and validates every scenario

    @property
    def dt(self) -> int:
        return int(round(self.horizons["dt_min"] * 60))

    def params(self) -> CellModelParams:
        extra = dict(self.cell)
        if self.ocv_table is not None:
            extra["ocv_curve"] = OcvCurve.from_table(self.ocv_table)
        try:
            return CellModelParams(**extra)
        except TypeError as exc:
            raise ConfigurationError(f"cell: {exc}") from None

    def scenario_configs(self) -> list:
        params = self.params()
        try:
            solver = SolverConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in self.solver.items()})
            inits = {n: StringState(self.start_soc, **s) for n, s in self.strings.items()}
        except (TypeError, StringDispatchError) as exc:
            raise ConfigurationError(str(exc)) from None
        return [
            scenario(
                sid,
                fec_cap=None if SCENARIO_FLAGS[sid][1] else self.fec_cap,
                string_inits=inits,
                prediction_horizon=int(round(self.horizons["prediction_h"] * 3600)),
                control_horizon=int(round(self.horizons["control_h"] * 3600)),
                dt=self.dt,
                start_soc=self.start_soc,
                c_aging=self.c_aging,
                params=params,
                solver=solver,
                seed=self.seed,
            )
            for sid in self.scenarios
        ]

    def load_price_series(self):
        if self.prices is not None:
            return load_prices(self.prices, self.dt)
        horizon_days = -(-int(self.horizons["prediction_h"] * 3600) // 86400)
        return gen_synthetic_prices(self.seed, self.days + horizon_days, dt=self.dt, **self.synthetic)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _check_keys(section, mapping, allowed) -> None:
    if not isinstance(mapping, dict):
        raise ConfigurationError(f"{section} must be a mapping")
    unknown = sorted(set(mapping) - set(allowed))
    if unknown:
        raise ConfigurationError(f"unknown config key(s) in {section}: {', '.join(unknown)}")


def _set_path(data: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    node = data
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigurationError(f"cannot set {dotted}: {k} is not a mapping")
    node[keys[-1]] = value


def read_config(path, args=None) -> RunConfig:
    data = {}
    if path is not None:
        try:
            with open(path) as fh:
                data = yaml.safe_load(fh) or {}
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from None
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"config {path} is not valid YAML: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigurationError(f"config {path} must be a mapping")
    if args is not None:
        for key in ("scenarios", "days", "seed", "prices", "output", "start_soc", "fec_cap", "c_aging"):
            value = getattr(args, key, None)
            if value is not None:
                data[key] = value
        for item in getattr(args, "set", None) or []:
            if "=" not in item:
                raise ConfigurationError(f"--set expects key=value, got {item!r}")
            key, raw = item.split("=", 1)
            key = key.strip()
            if key.startswith("strings.") and "strings" not in data:
                data["strings"] = RunConfig().strings
            _set_path(data, key, yaml.safe_load(raw))
    return RunConfig.from_dict(data)


def _write(path, text) -> None:
    with open(path, "w") as fh:
        fh.write(text)


def cmd_run(cfg: RunConfig) -> list:
    """Run the configured scenarios; one output subdirectory per scenario.

    Returns the KPI reports.
    """
    prices = cfg.load_price_series()
    reports = []
    for sc in cfg.scenario_configs():
        log = run_rolling_horizon(sc, prices, cfg.days * 86400)
        out = os.path.join(cfg.output, f"scenario_{sc.id}")
        log.save(out)
        rep = kpi_report(log)
        reports.append(rep)
        _write(os.path.join(out, "report.txt"), format_table([rep]))
        _write(os.path.join(out, "report.csv"), to_csv([rep]))
        _write(os.path.join(out, "report.json"), to_json([rep]))
        if log.expired:
            print(f"scenario {sc.id}: string {log.expired} reached end of life; run stopped early", file=sys.stderr)
    _write(os.path.join(cfg.output, "run_config.json"), json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    return reports


def cmd_compare(cfg: RunConfig) -> str:
    reports = cmd_run(cfg)
    table = format_table(reports)
    _write(os.path.join(cfg.output, "comparison.txt"), table)
    _write(os.path.join(cfg.output, "comparison.csv"), to_csv(reports))
    _write(os.path.join(cfg.output, "comparison.json"), to_json(reports))
    return table


def _add_run_flags(p) -> None:
    p.add_argument("--config", help="YAML run configuration")
    p.add_argument("--scenarios", nargs="+", choices=sorted(SCENARIO_FLAGS))
    p.add_argument("--days", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--prices", help="price CSV (timestamp,price); synthetic prices when omitted")
    p.add_argument("--output")
    p.add_argument("--start-soc", dest="start_soc", type=float)
    p.add_argument("--fec-cap", dest="fec_cap", type=float)
    p.add_argument("--c-aging", dest="c_aging", type=float)
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override any config key, e.g. --set cell.r0=0.1 --set strings.B.r_incr=1.3")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stringdispatch", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="verb", required=True)
    _add_run_flags(sub.add_parser("run", help="run scenarios and write logs and KPI reports"))
    _add_run_flags(sub.add_parser("compare", help="run scenarios and write a side-by-side KPI table"))
    _add_run_flags(sub.add_parser("validate-config", help="check a configuration and print its resolved form"))
    g = sub.add_parser("gen-prices", help="write a synthetic price CSV")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--days", type=int, default=1)
    g.add_argument("--base", type=float, default=80.0)
    g.add_argument("--amplitude", type=float, default=40.0)
    g.add_argument("--noise-sd", dest="noise_sd", type=float, default=10.0)
    g.add_argument("--dt-min", dest="dt_min", type=float, default=5.0)
    g.add_argument("--out", required=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.verb == "gen-prices":
            series = gen_synthetic_prices(args.seed, args.days, args.base, args.amplitude, args.noise_sd,
                                          dt=int(round(args.dt_min * 60)))
            save_prices(series, args.out)
            return 0
        cfg = read_config(args.config, args)
        if args.verb == "validate-config":
            print(yaml.safe_dump(cfg.to_dict(), sort_keys=True), end="")
            return 0
        os.makedirs(cfg.output, exist_ok=True)
        if args.verb == "run":
            cmd_run(cfg)
        else:
            print(cmd_compare(cfg), end="")
        return 0
    except StringDispatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3 if isinstance(exc, FileNotFoundError) else 4


if __name__ == "__main__":
    sys.exit(main())
