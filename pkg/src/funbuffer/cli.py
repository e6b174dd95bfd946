"""Command-line front end: ``fit``, ``tune``, ``simulate`` and ``inspect``.

Settings are resolved in increasing priority from built-in defaults, a flat
``key = value`` config file (``--config``), ``FUNBUFFER_<KEY>`` environment
variables and command-line flags. Keys are flag names with dashes replaced
by underscores (``--grid-l1`` is ``grid_l1``). Every run writes the resolved
settings to ``config.resolved`` in its output directory.

Exit status: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .basis import BSplineBasis, roughness_matrix
from .coxcore import NumericalError
from .inference import (RegionSelection, cumulative_effect, refit, select_regions,
                        selection_from_intervals)
from .simulate import ScenarioConfig, StudyConfig, run_coverage, run_study
from .solver import VARIANTS, SolverOptions
from .survdata import CsvSchema, DataError, design, load_csv
from .tuning import make_grid, select

log = logging.getLogger("funbuffer")

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 2, 3, 4
ENV_PREFIX = "FUNBUFFER_"


class ConfigError(ValueError):
    """Invalid or inconsistent run settings."""


# --------------------------------------------------------------------------
# value parsers


def _int(v) -> int:
    try:
        return int(v)
    except (TypeError, ValueError):
        raise ConfigError(f"expected an integer, got {v!r}") from None


def _float(v) -> float:
    try:
        return float(v)
    except (TypeError, ValueError):
        raise ConfigError(f"expected a number, got {v!r}") from None


def _bool(v) -> bool:
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {v!r}")


def _str(v) -> str:
    return str(v).strip()


def _opt_str(v):
    s = str(v).strip()
    return s or None


def parse_domain(v) -> tuple[float, float] | None:
    """``lo:hi`` to a pair of floats."""
    if v is None or (isinstance(v, str) and not v.strip()):
        return None
    if isinstance(v, tuple):
        return v
    parts = str(v).split(":")
    if len(parts) != 2:
        raise ConfigError(f"domain must look like lo:hi, got {v!r}")
    lo, hi = (_float(p) for p in parts)
    if not hi > lo:
        raise ConfigError(f"domain needs lo < hi, got {v!r}")
    return lo, hi


def parse_grid(v) -> tuple[float, float, int] | None:
    """Grid spec ``n`` or ``lo:hi:n``; ``lo``/``hi`` multiply the data-driven scale."""
    if v is None or (isinstance(v, str) and not v.strip()):
        return None
    if isinstance(v, tuple):
        return v
    parts = str(v).split(":")
    if len(parts) == 1:
        lo, hi, n = None, None, _int(parts[0])
    elif len(parts) == 3:
        lo, hi, n = _float(parts[0]), _float(parts[1]), _int(parts[2])
        if not 0 < lo <= hi:
            raise ConfigError(f"grid range needs 0 < lo <= hi, got {v!r}")
    else:
        raise ConfigError(f"grid must be n or lo:hi:n, got {v!r}")
    if n < 1:
        raise ConfigError(f"grid needs at least one point, got {v!r}")
    return lo, hi, n


def parse_floats(v) -> tuple[float, ...] | None:
    if v is None or (isinstance(v, str) and not v.strip()):
        return None
    if isinstance(v, tuple):
        return v
    return tuple(_float(x) for x in str(v).split(",") if x.strip())


def parse_names(v) -> tuple[str, ...] | None:
    if v is None or (isinstance(v, str) and not v.strip()):
        return None
    if isinstance(v, tuple):
        return v
    return tuple(x.strip() for x in str(v).split(",") if x.strip())


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


# --------------------------------------------------------------------------
# option table


@dataclass(frozen=True)
class Option:
    key: str
    parse: callable
    default: object
    help: str
    commands: tuple[str, ...]
    kind: str = ""  # "list" for comma-separated values


_ALL = ("fit", "tune", "simulate", "inspect")
_DATA = ("fit", "tune", "inspect")

OPTIONS = (
    Option("out", _str, "funbuffer-out", "output directory", ("fit", "tune", "simulate", "inspect")),
    Option("seed", _int, 0, "master random seed", _ALL),
    Option("threads", _int, 0, "worker processes (0 means all logical cores)", _ALL),
    Option("degree", _int, 3, "B-spline degree d", _ALL),
    Option("Mn", _int, 26, "number of equally spaced inner knots", _ALL),
    Option("knots", parse_floats, None, "explicit inner knots, comma separated (overrides --Mn)", _ALL,
           "list"),
    Option("domain", parse_domain, None, "exposure domain lo:hi (default: data radius range)", _ALL),
    Option("grid_l1", parse_grid, (1e-4, 1e1, 20), "lambda1 grid as n or lo:hi:n", _ALL),
    Option("grid_l2", parse_grid, (1e-1, 1e4, 10), "lambda2 grid as n or lo:hi:n", _ALL),
    Option("variant", _str, "SplineGbridge",
           "penalty variant (simulate accepts a comma-separated list)", _ALL),
    Option("gamma", _float, 0.5, "group bridge exponent", _ALL),
    Option("n_starts", _int, 1, "optimizer starts per grid cell", ("fit", "tune", "simulate")),
    Option("cold", _bool, False, "disable warm starts across the lambda2 axis", ("fit", "tune")),
    Option("data", _str, "", "input CSV", _DATA),
    Option("time_col", _str, "time", "column with follow-up times", _DATA),
    Option("event_col", _str, "event", "column with event indicators", _DATA),
    Option("covariates", parse_names, None, "scalar covariate columns (default: all others)", _DATA,
           "list"),
    Option("exposure_prefix", _str, "x", "exposure columns are named <prefix>@<radius>", _DATA),
    Option("strata", _opt_str, None, "optional stratum column", _DATA),
    Option("increment", _float, 1.0, "exposure increment for the cumulative hazard ratio", ("fit",)),
    Option("curve_points", _int, 201, "points on the output coefficient curve", ("fit",)),
    Option("scenario", _str, "II", "simulation scenario I, II or III", ("simulate",)),
    Option("n", _int, 1000, "subjects per replication", ("simulate",)),
    Option("reps", _int, 100, "replications", ("simulate",)),
    Option("censor_fraction", _float, 0.1, "target censored fraction", ("simulate",)),
    Option("coverage", _bool, False, "also run truth-region refits and dump ASE/ESE/coverage",
           ("simulate",)),
    Option("coverage_region", parse_domain, (0.0, 0.5), "truth region lo:hi for --coverage",
           ("simulate",)),
    Option("run", _str, "", "output directory of a previous fit to summarise", ("inspect",)),
    Option("log_level", _str, "INFO", "logging level", _ALL),
)
OPTION_MAP = {o.key: o for o in OPTIONS}


def read_config_file(path) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from None
    for k, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{k}: expected key = value")
        key, value = (x.strip() for x in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in OPTION_MAP:
            raise ConfigError(f"{path}:{k}: unknown key {key!r}")
        out[key] = value
    return out


def _env_settings(environ) -> dict[str, str]:
    out = {}
    for name, value in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        key = name[len(ENV_PREFIX):]
        match = [o.key for o in OPTIONS if o.key.lower() == key.lower()]
        if not match:
            raise ConfigError(f"unknown environment override {name}")
        out[match[0]] = value
    return out


def resolve(command: str, cli: dict, config_file=None, environ=None) -> dict:
    """Merge defaults, config file, environment and flags into typed settings."""
    environ = os.environ if environ is None else environ
    layers = [read_config_file(config_file) if config_file else {}, _env_settings(environ), cli]
    settings = {o.key: o.default for o in OPTIONS if command in o.commands}
    for layer in layers:
        for key, raw in layer.items():
            opt = OPTION_MAP[key]
            if command not in opt.commands:
                if layer is cli:
                    raise ConfigError(f"--{key.replace('_', '-')} does not apply to {command}")
                continue
            settings[key] = opt.parse(raw)
    _validate(command, settings)
    return settings


def _validate(command: str, s: dict) -> None:
    variants = parse_names(s["variant"])
    for v in variants:
        if v not in VARIANTS:
            raise ConfigError(f"unknown variant {v!r}; choose from {', '.join(VARIANTS)}")
    if command != "simulate" and len(variants) != 1:
        raise ConfigError("only simulate accepts several variants")
    if s["degree"] < 2:
        raise ConfigError("degree must be >= 2 for the roughness penalty")
    if s["Mn"] < 1:
        raise ConfigError("Mn must be >= 1")
    if s["threads"] < 0:
        raise ConfigError("threads must be >= 0")
    if not 0 < s["gamma"] <= 1:
        raise ConfigError("gamma must lie in (0, 1]")
    if command in ("fit", "tune") and not s["data"]:
        raise ConfigError(f"{command} needs --data")
    if command == "inspect" and not (s["data"] or s["run"]):
        raise ConfigError("inspect needs --data or --run")
    if command == "simulate":
        if s["scenario"] not in ("I", "II", "III"):
            raise ConfigError("scenario must be I, II or III")
        if s["n"] < 2 or s["reps"] < 1:
            raise ConfigError("need n >= 2 and reps >= 1")
        if not 0 <= s["censor_fraction"] < 1:
            raise ConfigError("censor_fraction must lie in [0, 1)")
        if s["domain"] not in (None, (0.0, 1.0)):
            raise ConfigError("simulated exposures live on 0:1")


def format_settings(command: str, settings: dict) -> str:
    lines = [f"# resolved settings for: funbuffer {command}"]
    for o in OPTIONS:
        if o.key not in settings:
            continue
        v = settings[o.key]
        if v is None:
            text = ""
        elif o.kind == "list":
            text = ",".join(_fmt(x) for x in v)
        elif o.parse is parse_grid:
            text = str(v[2]) if v[0] is None else f"{v[0]!r}:{v[1]!r}:{v[2]}"
        elif o.parse is parse_domain:
            text = f"{v[0]!r}:{v[1]!r}"
        else:
            text = _fmt(v)
        lines.append(f"{o.key} = {text}")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# shared steps


def _workers(settings) -> int:
    return settings["threads"] or (os.cpu_count() or 1)


def _grid_ranges(settings):
    d1, d2 = OPTION_MAP["grid_l1"].default, OPTION_MAP["grid_l2"].default
    g1, g2 = settings["grid_l1"], settings["grid_l2"]
    r1 = (g1[0], g1[1]) if g1[0] is not None else (d1[0], d1[1])
    r2 = (g2[0], g2[1]) if g2[0] is not None else (d2[0], d2[1])
    return r1, g1[2], r2, g2[2]


def _load(settings):
    schema = CsvSchema(time=settings["time_col"], event=settings["event_col"],
                       covariates=settings["covariates"], exposure_prefix=settings["exposure_prefix"],
                       strata=settings["strata"])
    return load_csv(settings["data"], schema)


def _basis(settings, radii=None) -> BSplineBasis:
    domain = settings["domain"]
    if domain is None:
        domain = (float(radii[0]), float(radii[-1])) if radii is not None else (0.0, 1.0)
    try:
        return BSplineBasis(settings["degree"], settings["Mn"], domain, settings["knots"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _prepare(settings):
    data = _load(settings)
    basis = _basis(settings, data.radii)
    J = roughness_matrix(basis).J
    designed = design(data, basis)
    r1, n1, r2, n2 = _grid_ranges(settings)
    grid = make_grid(designed, J, n1, n2, r1, r2)
    return data, basis, J, designed, grid


def _tune(settings, designed, basis, J, grid):
    workers = _workers(settings)
    warm = not settings["cold"]
    return select(designed, settings["variant"], grid, J, basis.groups(),
                  n_starts=settings["n_starts"], seed=settings["seed"], warm_start=warm,
                  workers=1 if warm else workers, gamma=settings["gamma"])


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2) + "\n")


# --------------------------------------------------------------------------
# subcommands


def cmd_fit(settings) -> int:
    """Stage one (BIC-tuned sparse fit), then stage two (refit and variances)."""
    out = Path(settings["out"])
    data, basis, J, designed, grid = _prepare(settings)
    log.info("data: n=%d events=%d covariates=%d rings=%d", data.n, int(data.event.sum()), data.p,
             data.radii.size)
    log.info("basis: degree %d, %d functions on [%g, %g]", basis.degree, basis.n_basis,
             *basis.domain)
    report = _tune(settings, designed, basis, J, grid)
    report.to_csv(out / "tuning.csv")
    if report.fit is None:
        raise NumericalError("no grid cell produced a finite BIC; see tuning.csv")
    stage1 = report.fit
    log.info("stage 1: lambda1=%.4g lambda2=%.4g converged=%s", *report.selected, stage1.converged)
    selection = select_regions(stage1.b, basis)
    log.info("non-null region: %s (buffer distance %g)", list(selection.intervals),
             selection.buffer_distance)
    result = refit(designed, selection, basis, J, options=SolverOptions())
    log.info("stage 2: lambda2=%.4g", result.lambda2)

    s = np.linspace(*basis.domain, settings["curve_points"])
    s = np.union1d(s, np.asarray([v for iv in selection.intervals for v in iv]))
    _write_curve(out / "beta_curve.csv", result, stage1, basis, s)
    regions = selection.to_dict()
    regions.update(domain=list(basis.domain), breaks=basis.breaks.tolist(),
                   stage1_lambda1=report.selected[0], stage1_lambda2=report.selected[1],
                   stage2_lambda2=result.lambda2,
                   theta=dict(zip(data.covariate_names, result.theta.tolist())),
                   note="conditional on selected region")
    _write_json(out / "regions.json", regions)
    effect = cumulative_effect(result, settings["increment"])
    _write_json(out / "cumulative.json", effect.to_dict())
    if selection.empty:
        log.info("no non-null region: the cumulative effect is reported as 0")
    else:
        lo, hi = effect.hazard_ratio_ci
        log.info("cumulative effect %.4g (se %.3g); HR per %g: %.4f (%.4f, %.4f)", effect.estimate,
                 effect.se, effect.increment, effect.hazard_ratio, lo, hi)
    return 0


def _write_curve(path: Path, result, stage1, basis, s) -> None:
    inside = result.selection.contains(s)
    beta = np.where(inside, result.beta(s), 0.0)
    se = np.zeros_like(s)
    if inside.any():
        se[inside] = np.sqrt(result._quad_var(result._basis_active(s[inside])))
    b1 = basis.evaluate(s) @ stage1.b
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["s", "beta", "se", "lo", "hi", "in_region", "stage1_beta"])
        for k in range(s.size):
            lo, hi = beta[k] - 1.959963984540054 * se[k], beta[k] + 1.959963984540054 * se[k]
            w.writerow([f"{v:.10g}" for v in (s[k], beta[k], se[k], lo, hi)]
                       + [int(inside[k]), f"{b1[k]:.10g}"])


def cmd_tune(settings) -> int:
    out = Path(settings["out"])
    _, basis, J, designed, grid = _prepare(settings)
    report = _tune(settings, designed, basis, J, grid)
    report.to_csv(out / "tuning.csv")
    (out / "tuning.json").write_text(report.to_json() + "\n")
    S = report.bic_surface()
    g = report.grid
    with open(out / "bic_surface.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lambda2\\lambda1"] + [f"{v:.10g}" for v in g.lambda1])
        for i, lam2 in enumerate(g.lambda2):
            w.writerow([f"{lam2:.10g}"] + [f"{v:.10g}" for v in S[i]])
    if report.selected is None:
        raise NumericalError("no grid cell produced a finite BIC; see tuning.csv")
    log.info("selected lambda1=%.6g lambda2=%.6g", *report.selected)
    return 0


def cmd_simulate(settings) -> int:
    out = Path(settings["out"])
    r1, n1, r2, n2 = _grid_ranges(settings)
    if settings["knots"] is not None:
        raise ConfigError("simulate uses equally spaced knots; set --Mn instead of --knots")
    study = StudyConfig(degree=settings["degree"], n_inner=settings["Mn"],
                        variants=parse_names(settings["variant"]), n1=n1, n2=n2,
                        l1_range=r1, l2_range=r2, n_starts=settings["n_starts"],
                        gamma=settings["gamma"])
    cfg = ScenarioConfig(settings["scenario"], settings["n"], settings["censor_fraction"],
                         seed=settings["seed"])
    workers = _workers(settings)
    report = run_study(cfg, study, settings["reps"], workers=workers, progress=workers == 1)
    report.to_csv(out / "replications.csv")
    (out / "aggregates.json").write_text(report.to_json() + "\n")
    for v, agg in report.aggregates().items():
        log.info("%s: %s", v, ", ".join(f"{k}={val:.4g}" if isinstance(val, float) else f"{k}={val}"
                                        for k, val in agg.items()))
    if settings["coverage"]:
        cov = run_coverage(cfg, settings["reps"], settings["coverage_region"], study=study,
                           workers=workers)
        cov.to_csv(out / "coverage.csv")
        log.info("coverage over %d refits: %s", cov.estimates.shape[0],
                 np.array2string(cov.coverage, precision=3))
    return 0


def cmd_inspect(settings) -> int:
    """Summarise an input dataset, a previous fit directory, or both."""
    out = Path(settings["out"])
    summary = {}
    if settings["data"]:
        data = _load(settings)
        basis = _basis(settings, data.radii)
        summary["data"] = data.summary()
        summary["basis"] = {"degree": basis.degree, "n_basis": basis.n_basis,
                            "domain": list(basis.domain), "breaks": basis.breaks.tolist()}
    if settings["run"]:
        summary["run"] = read_run(settings["run"])
    text = json.dumps(summary, indent=2, default=_jsonable)
    (out / "inspect.json").write_text(text + "\n")
    print(text)
    return 0


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, RegionSelection):
        return o.to_dict()
    if isinstance(o, (np.integer, np.floating)):
        return o.item()
    raise TypeError(type(o).__name__)


def read_run(directory) -> dict:
    """Re-read the artifacts written by ``fit`` into one summary dict."""
    d = Path(directory)
    try:
        regions = json.loads((d / "regions.json").read_text())
        cumulative = json.loads((d / "cumulative.json").read_text())
        with open(d / "beta_curve.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read fit artifacts in {d}: {exc}") from None
    curve = {k: np.array([float(r[k]) for r in rows]) for k in ("s", "beta", "se", "lo", "hi")}
    curve["in_region"] = np.array([int(r["in_region"]) for r in rows], dtype=bool)
    basis = BSplineBasis(3, 1, tuple(regions["domain"]), regions["breaks"][1:-1])
    selection = selection_from_intervals(basis, regions["intervals"])
    return {"buffer_distance": regions["buffer_distance"], "intervals": regions["intervals"],
            "selection": selection, "cumulative": cumulative, "curve": curve}


COMMANDS = {"fit": cmd_fit, "tune": cmd_tune, "simulate": cmd_simulate, "inspect": cmd_inspect}


# --------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="funbuffer", description=__doc__.split("\n\n")[0])
    parser.add_argument("--config", help="flat key = value settings file")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {"fit": "two-stage fit: tuned sparse fit, region refit, variances",
             "tune": "BIC surface over the (lambda1, lambda2) grid",
             "simulate": "Monte-Carlo study on a simulation scenario",
             "inspect": "summarise a dataset or a previous fit"}
    for name in COMMANDS:
        p = sub.add_parser(name, help=helps[name], argument_default=argparse.SUPPRESS)
        p.add_argument("--config", help="flat key = value settings file")
        for o in OPTIONS:
            if name not in o.commands:
                continue
            flag = "--" + o.key.replace("_", "-")
            if o.parse is _bool:
                p.add_argument(flag, nargs="?", const="true", dest=o.key, help=o.help)
            else:
                p.add_argument(flag, dest=o.key, help=o.help)
    return parser


def main(argv=None, environ=None) -> int:
    parser = build_parser()
    args = vars(parser.parse_args(argv))
    command = args.pop("command")
    config_file = args.pop("config", None)
    try:
        settings = resolve(command, args, config_file, environ)
        out = Path(settings["out"])
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.resolved").write_text(format_settings(command, settings))
    except ConfigError as exc:
        print(f"funbuffer: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"funbuffer: configuration error: cannot create output directory: {exc}",
              file=sys.stderr)
        return EXIT_CONFIG
    handler = _setup_logging(out / f"{command}.log", settings["log_level"])
    try:
        return COMMANDS[command](settings)
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except DataError as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERICAL
    finally:
        log.removeHandler(handler)
        handler.close()


def _setup_logging(path: Path, level: str) -> logging.Handler:
    lvl = getattr(logging, str(level).upper(), None)
    if not isinstance(lvl, int):
        lvl = logging.INFO
    log.setLevel(lvl)
    handler = logging.FileHandler(path, mode="w")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
    log.addHandler(handler)
    if not any(getattr(h, "_funbuffer_console", False) for h in log.handlers):
        console = logging.StreamHandler(sys.stderr)
        console.setFormatter(logging.Formatter("funbuffer: %(message)s"))
        console._funbuffer_console = True
        log.addHandler(console)
    return handler


if __name__ == "__main__":
    sys.exit(main())
