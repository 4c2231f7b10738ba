"""Command-line front end: theory, simulate, validate and sweep.

Exit status: 0 success, 1 tolerance failure, 2 configuration error,
3 fixed-point non-convergence.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import math
import sys
from dataclasses import dataclass, field, fields
from typing import Callable, Sequence

from .analytic import TheoryReport, analyze
from .params import ConvergenceError, Mac, Mobility, NetworkParams, ParameterError

log = logging.getLogger("manetbuf")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NONCONVERGENCE = 0, 1, 2, 3

_INT_FIELDS = {"n", "m", "Bs", "Br", "nu"}
_FLOAT_FIELDS = {"lambda_s", "delta"}


class ConfigError(ParameterError):
    """Bad configuration file, flag or sweep specification."""


# ---------------------------------------------------------------------------
# value coercion


def _parse_bool(raw) -> bool:
    if isinstance(raw, bool):
        return raw
    text = str(raw).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {raw!r}")


def _parse_int(raw) -> int:
    if isinstance(raw, bool):
        raise ConfigError(f"not an integer: {raw!r}")
    if isinstance(raw, int):
        return raw
    if isinstance(raw, float):
        if raw.is_integer():
            return int(raw)
        raise ConfigError(f"not an integer: {raw!r}")
    try:
        return int(str(raw).strip())
    except ValueError:
        raise ConfigError(f"not an integer: {raw!r}") from None


def _parse_float(raw) -> float:
    if isinstance(raw, bool):
        raise ConfigError(f"not a number: {raw!r}")
    try:
        return float(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"not a number: {raw!r}") from None


def coerce_param(name: str, raw):
    """Convert ``raw`` to the type of NetworkParams field ``name``."""
    if name in _INT_FIELDS:
        return _parse_int(raw)
    if name in _FLOAT_FIELDS:
        return _parse_float(raw)
    if name == "feedback":
        return _parse_bool(raw)
    if name == "mac":
        try:
            return Mac(str(raw).upper())
        except ValueError:
            raise ConfigError(f"unknown MAC {raw!r}; choose LS or EC") from None
    if name == "mobility":
        try:
            return Mobility(str(raw).upper())
        except ValueError:
            raise ConfigError(f"unknown mobility {raw!r}; choose IID or RW") from None
    raise ConfigError(f"{name!r} is not a NetworkParams field")


# ---------------------------------------------------------------------------
# experiment configuration


@dataclass(frozen=True)
class Sweep:
    param: str
    values: tuple

    def __post_init__(self):
        if self.param not in NetworkParams.field_names():
            raise ConfigError(f"sweep parameter {self.param!r} is not a NetworkParams field")
        if len(self.values) == 0:
            raise ConfigError(f"sweep over {self.param} has no values")
        object.__setattr__(self, "values", tuple(coerce_param(self.param, v) for v in self.values))

    @classmethod
    def parse(cls, raw) -> "Sweep":
        """Accept ``"PARAM=v1,v2"`` or ``{"param": ..., "values": [...]}``."""
        if isinstance(raw, dict):
            if set(raw) != {"param", "values"}:
                raise ConfigError(f"sweep object needs exactly 'param' and 'values', got {sorted(raw)}")
            if not isinstance(raw["values"], list):
                raise ConfigError("sweep values must be a list")
            return cls(raw["param"], tuple(raw["values"]))
        if not isinstance(raw, str) or "=" not in raw:
            raise ConfigError(f"sweep must look like PARAM=v1,v2,..., got {raw!r}")
        name, _, rest = raw.partition("=")
        values = tuple(v.strip() for v in rest.split(",") if v.strip())
        return cls(name.strip(), values)


@dataclass(frozen=True)
class ExperimentConfig:
    params: NetworkParams = field(default_factory=NetworkParams)
    slots: int = 2_000_000
    replications: int = 10
    warmup_fraction: float = 0.2
    seed: int = 0
    sweep: Sweep | None = None
    tolerance: float = 0.05
    delay_tolerance: float | None = None
    workers: int = 1
    both_feedback: bool = False
    simulate: bool = False
    density: float | None = None

    def __post_init__(self):
        if self.slots < 1 or self.replications < 1:
            raise ConfigError("slots and replications must be positive")
        if self.tolerance < 0 or (self.delay_tolerance is not None and self.delay_tolerance < 0):
            raise ConfigError("tolerances must be non-negative")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.both_feedback and self.sweep is not None and self.sweep.param == "feedback":
            raise ConfigError("--both-feedback conflicts with a feedback sweep")
        if self.density is not None:
            if self.density <= 0:
                raise ConfigError("density must be positive")
            if self.sweep is None or self.sweep.param != "n":
                raise ConfigError("density only applies to a sweep over n")

    @property
    def delay_gate(self) -> float:
        return self.tolerance if self.delay_tolerance is None else self.delay_tolerance

    def points(self) -> list[tuple[str | None, object, NetworkParams]]:
        """(swept name, swept value, params) per point, in sweep order then feedback."""
        base = [(None, None, self.params)]
        if self.sweep is not None:
            base = [(self.sweep.param, v, self._at(v)) for v in self.sweep.values]
        if not self.both_feedback:
            return base
        return [(name, v, p.replace(feedback=fb)) for name, v, p in base for fb in (False, True)]

    def _at(self, value) -> NetworkParams:
        change = {self.sweep.param: value}
        if self.density is not None:
            m = math.isqrt(round(value / self.density))
            if m * m * self.density != value:
                raise ConfigError(f"n={value} at density {self.density} does not give a square torus")
            change["m"] = m
        return self.params.replace(**change)


_RUN_KEYS = {f.name for f in fields(ExperimentConfig)} - {"params"}
_RUN_CASTS = {
    "slots": _parse_int, "replications": _parse_int, "seed": _parse_int, "workers": _parse_int,
    "warmup_fraction": _parse_float, "tolerance": _parse_float,
    "delay_tolerance": _parse_float, "density": _parse_float,
    "both_feedback": _parse_bool, "simulate": _parse_bool, "sweep": Sweep.parse,
}


def build_config(settings: dict) -> ExperimentConfig:
    """Make a config from a flat mapping of field names; unknown keys are errors."""
    unknown = set(settings) - _RUN_KEYS - set(NetworkParams.field_names())
    if unknown:
        raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
    param_kw = {k: coerce_param(k, v) for k, v in settings.items()
                if k in NetworkParams.field_names()}
    run_kw = {k: (None if v is None else _RUN_CASTS[k](v)) for k, v in settings.items()
              if k in _RUN_KEYS}
    return ExperimentConfig(params=NetworkParams(**param_kw), **run_kw)


def load_config_file(path: str) -> dict:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    return data


# ---------------------------------------------------------------------------
# rows and serialization


@dataclass(frozen=True)
class ComparisonRow:
    param: str
    value: str
    feedback: bool
    T_theory: float
    T_sim: float
    T_rel_err: float
    T_ci: float
    ED_theory: float
    ED_sim: float
    ED_rel_err: float
    ED_ci: float
    inconclusive: bool
    passed: bool


@dataclass(frozen=True)
class SweepRow:
    param: str
    value: str
    feedback: bool
    T: float
    ED: float
    Tc: float
    pi_s0: float
    pi_rBr: float
    mu_s: float
    fixed_point_iterations: int
    T_sim: float = math.nan
    T_ci: float = math.nan
    ED_sim: float = math.nan
    ED_ci: float = math.nan


def _cell(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def rows_to_csv(rows: Sequence) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    names = [f.name for f in fields(rows[0])]
    writer.writerow(names)
    for row in rows:
        writer.writerow([_cell(getattr(row, k)) for k in names])
    return buf.getvalue()


_READERS = {bool: _parse_bool, int: int, float: float, str: str}


def rows_from_csv(text: str, row_type) -> list:
    """Inverse of :func:`rows_to_csv` for a row dataclass."""
    reader = csv.DictReader(io.StringIO(text))
    hints = {f.name: f.type for f in fields(row_type)}
    types = {k: {"bool": bool, "int": int, "float": float, "str": str}.get(v, v)
             for k, v in hints.items()}
    if reader.fieldnames != list(hints):
        raise ConfigError(f"CSV header {reader.fieldnames} does not match {row_type.__name__}")
    return [row_type(**{k: _READERS[types[k]](v) for k, v in rec.items()}) for rec in reader]


def _jsonable(x):
    if dataclasses.is_dataclass(x) and not isinstance(x, type):
        x = x.to_dict() if hasattr(x, "to_dict") else dataclasses.asdict(x)
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, float) and not math.isfinite(x):
        return repr(x)
    if hasattr(x, "tolist"):
        return _jsonable(x.tolist())
    if isinstance(x, (Mac, Mobility)):
        return x.value
    return x


def to_json(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, allow_nan=False) + "\n"


# ---------------------------------------------------------------------------
# commands

TheoryFn = Callable[[NetworkParams], TheoryReport]


def _rel_err(sim: float, theory: float) -> float:
    if math.isinf(theory) or math.isnan(sim):
        return 0.0 if sim == theory else math.inf
    if theory == 0.0:
        return 0.0 if sim == 0.0 else math.inf
    return abs(sim - theory) / abs(theory)


def _judge(theory: float, sim: float, ci: float, tol: float) -> tuple[bool, bool, float]:
    """(ok, inconclusive, relative error) for one metric."""
    err = _rel_err(sim, theory)
    inside = math.isfinite(ci) and abs(sim - theory) <= ci
    ok = err <= tol or inside
    # a CI wider than the tolerance band cannot resolve the comparison
    wide = math.isfinite(theory) and theory != 0 and (
        math.isnan(ci) or ci > tol * abs(theory))
    return ok, (not ok) and wide, err


def _simulate(cfg: ExperimentConfig, params: NetworkParams):
    from .sim import run

    log.info("simulating %s", params)
    return run(params, slots=cfg.slots, warmup_fraction=cfg.warmup_fraction, seed=cfg.seed,
               replications=cfg.replications, workers=cfg.workers)


def cmd_theory(cfg: ExperimentConfig, theory: TheoryFn = analyze) -> list[dict]:
    return [{"swept": name, "value": v, **theory(p).to_dict()} for name, v, p in cfg.points()]


def cmd_simulate(cfg: ExperimentConfig) -> list[dict]:
    return [{"swept": name, "value": v, **_simulate(cfg, p).to_dict()}
            for name, v, p in cfg.points()]


def cmd_validate(cfg: ExperimentConfig, theory: TheoryFn = analyze) -> list[ComparisonRow]:
    rows = []
    for name, v, p in cfg.points():
        th = theory(p)
        rep = _simulate(cfg, p)
        ci = rep.ci_halfwidth
        t_ok, t_inc, t_err = _judge(th.T, rep.throughput, ci["throughput"], cfg.tolerance)
        d_ok, d_inc, d_err = _judge(th.ED, rep.mean_delay, ci["mean_delay"], cfg.delay_gate)
        rows.append(ComparisonRow(
            param=name or "", value="" if v is None else _cell(_jsonable(v)),
            feedback=p.feedback,
            T_theory=th.T, T_sim=rep.throughput, T_rel_err=t_err, T_ci=ci["throughput"],
            ED_theory=th.ED, ED_sim=rep.mean_delay, ED_rel_err=d_err, ED_ci=ci["mean_delay"],
            inconclusive=(t_inc or d_inc) and not (t_ok and d_ok),
            passed=t_ok and d_ok,
        ))
    return rows


def validation_status(rows: Sequence[ComparisonRow]) -> int:
    """Exit status for a validation: failures that are not merely inconclusive count."""
    return EXIT_FAIL if any(not r.passed and not r.inconclusive for r in rows) else EXIT_OK


def cmd_sweep(cfg: ExperimentConfig, theory: TheoryFn = analyze) -> list[SweepRow]:
    if cfg.sweep is None:
        raise ConfigError("sweep needs --sweep PARAM=v1,v2,...")
    rows = []
    for name, v, p in cfg.points():
        th = theory(p)
        extra = {}
        if cfg.simulate:
            rep = _simulate(cfg, p)
            ci = rep.ci_halfwidth
            extra = dict(T_sim=rep.throughput, T_ci=ci["throughput"],
                         ED_sim=rep.mean_delay, ED_ci=ci["mean_delay"])
        rows.append(SweepRow(
            param=name, value=_cell(_jsonable(v)), feedback=p.feedback,
            T=th.T, ED=th.ED, Tc=th.Tc, pi_s0=th.pi_s0, pi_rBr=th.pi_rBr, mu_s=th.mu_s,
            fixed_point_iterations=th.iterations, **extra,
        ))
    return rows


# ---------------------------------------------------------------------------
# argument parsing


def _flat_records(records: list[dict]) -> list[dict]:
    flat = []
    for rec in records:
        row = {}
        for k, v in _jsonable(rec).items():
            if isinstance(v, dict):
                row.update({f"{k}.{kk}": vv for kk, vv in v.items() if not isinstance(vv, (list, dict))})
            elif not isinstance(v, list):
                row[k] = v
        flat.append(row)
    return flat


def _records_csv(records: list[dict]) -> str:
    flat = _flat_records(records)
    if not flat:
        return ""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(flat[0]), lineterminator="\n")
    writer.writeheader()
    for row in flat:
        writer.writerow({k: _cell(v) for k, v in row.items()})
    return buf.getvalue()


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON object of settings")
    common.add_argument("--out", metavar="PATH", help="write output here instead of stdout")
    common.add_argument("--format", choices=("csv", "json"), help="output format")
    common.add_argument("--seed", type=int)
    common.add_argument("--slots", type=int)
    common.add_argument("--reps", dest="replications", type=int)
    common.add_argument("--warmup-fraction", dest="warmup_fraction", type=float)
    common.add_argument("--workers", type=int)
    common.add_argument("--tolerance", type=float, help="relative error gate on throughput")
    common.add_argument("--delay-tolerance", dest="delay_tolerance", type=float,
                        help="relative error gate on delay (defaults to --tolerance)")
    common.add_argument("--sweep", metavar="PARAM=V1,V2,...")
    common.add_argument("--density", type=float, help="nodes per cell held fixed in an n sweep")
    common.add_argument("--both-feedback", dest="both_feedback", action="store_const", const=True,
                        help="evaluate every point with and without feedback")
    common.add_argument("--simulate", action="store_const", const=True,
                        help="add simulation columns to a sweep")
    common.add_argument("-v", "--verbose", action="store_true")
    net = common.add_argument_group("network parameters")
    net.add_argument("--n", type=int)
    net.add_argument("--m", type=int)
    net.add_argument("--Bs", type=int)
    net.add_argument("--Br", type=int)
    net.add_argument("--lambda-s", "--lambda_s", dest="lambda_s", type=float)
    net.add_argument("--feedback", type=str, metavar="BOOL")
    net.add_argument("--mac", type=str, choices=("LS", "EC", "ls", "ec"))
    net.add_argument("--nu", type=int)
    net.add_argument("--delta", type=float)
    net.add_argument("--mobility", type=str, choices=("IID", "RW", "iid", "rw"))

    parser = argparse.ArgumentParser(
        prog="manetbuf",
        description="Throughput and delay of buffer-limited two-hop relay MANETs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("theory", parents=[common], help="closed-form throughput, delay, capacity")
    sub.add_parser("simulate", parents=[common], help="Monte Carlo run")
    sub.add_parser("validate", parents=[common], help="compare theory with simulation")
    sub.add_parser("sweep", parents=[common], help="theory (and optionally simulation) over a sweep")
    return parser


_NON_SETTINGS = {"command", "config", "out", "format", "verbose"}


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    """Defaults, then the config file, then explicit flags."""
    settings = load_config_file(args.config) if args.config else {}
    for k, v in vars(args).items():
        if k not in _NON_SETTINGS and v is not None:
            settings[k] = v
    return build_config(settings)


def _emit(text: str, out: str | None):
    if out:
        with open(out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def main(argv: Sequence[str] | None = None, theory: TheoryFn = analyze) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = config_from_args(args)
        fmt = args.format
        status = EXIT_OK
        if args.command == "theory":
            records = cmd_theory(cfg, theory)
            text = _records_csv(records) if fmt == "csv" else to_json(
                records if cfg.sweep or cfg.both_feedback else records[0])
        elif args.command == "simulate":
            records = cmd_simulate(cfg)
            text = _records_csv(records) if fmt == "csv" else to_json(
                records if cfg.sweep or cfg.both_feedback else records[0])
        elif args.command == "validate":
            rows = cmd_validate(cfg, theory)
            text = to_json(rows) if fmt == "json" else rows_to_csv(rows)
            status = validation_status(rows)
        else:
            rows = cmd_sweep(cfg, theory)
            text = to_json(rows) if fmt == "json" else rows_to_csv(rows)
    except ConvergenceError as exc:
        print(f"error: {exc} (residual {exc.residual:.3e} after {exc.iterations} iterations)",
              file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except ParameterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    _emit(text, args.out)
    return status


if __name__ == "__main__":
    sys.exit(main())
