"""Batch command-line interface ``mselect``.

Subcommands: ``fit``, ``simulate``, ``benchmark`` and ``bootstrap``.  Each
writes its outputs plus ``resolved_config.json`` into ``--out``; every CSV
starts with a ``# config: {...}`` line holding the same configuration, and
``--config resolved_config.json`` repeats a run exactly.

Exit codes: 0 success, 1 input or validation error, 2 fit did not converge,
3 bootstrap unstable.

Dataset schema (YAML or JSON)::

    outcomes:
      - value: hours          # outcome column, empty when unobserved
        indicator: works      # 0/1 selection column
        x: ["1", educ, exper] # outcome covariates; "1" is the intercept
        w: ["1", educ, kids]  # selection covariates
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import warnings

import numpy as np
import yaml

from . import __version__
from .bootstrap import bootstrap as run_bootstrap
from .ecm import FitConfig, fit
from .errors import BootstrapUnstableError, FitError, MselectError
from .model import Dataset, ModelParams
from .sim import Scenario, compare_univariate, custom_scenario, generate, run_mc, scenario1, scenario2

EXIT_OK, EXIT_INPUT, EXIT_NONCONVERGED, EXIT_UNSTABLE = 0, 1, 2, 3
INTERCEPT = "1"

FIT_DEFAULTS = {
    "tol": 1e-6,
    "max_iter": 500,
    "rect_tol": 1e-6,
    "seed": 0,
    "regression": "joint",
    "constraint": "rescale",
    "init": None,
}
DEFAULTS = {
    "fit": dict(data=None, schema=None, out=None, **FIT_DEFAULTS),
    "simulate": dict(scenario="1", n=300, missing_rate=None, seed=0, out=None),
    "benchmark": dict(
        scenario="1",
        n_list="100,200,300",
        rate_list="0.1,0.25,0.5",
        reps=100,
        compare_univariate=False,
        out=None,
        **{k: v for k, v in FIT_DEFAULTS.items() if k != "init"},
    ),
    "bootstrap": dict(data=None, schema=None, out=None, reps=200, **FIT_DEFAULTS),
}
REQUIRED = {
    "fit": ("data", "schema", "out"),
    "simulate": ("out",),
    "benchmark": ("out",),
    "bootstrap": ("data", "schema", "out"),
}


class InputError(Exception):
    """Invalid command-line input, configuration or data file."""


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return "" if x is None else str(x)


def _config_line(cfg: dict) -> str:
    return "# config: " + json.dumps(cfg, sort_keys=True)


def write_csv(path: str, cfg: dict, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(_config_line(cfg) + "\n")
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for row in rows:
            wr.writerow([fmt(v) for v in row])


def write_json(path: str, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(f"cannot serialise {type(o).__name__}")


# ---------------------------------------------------------------------------
# input files
# ---------------------------------------------------------------------------


def load_schema(path: str) -> list:
    try:
        with open(path) as fh:
            doc = yaml.safe_load(fh)
    except OSError as exc:
        raise InputError(f"cannot read schema {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise InputError(f"schema {path} is not valid YAML/JSON: {exc}") from None
    if not isinstance(doc, dict) or not isinstance(doc.get("outcomes"), list) or not doc["outcomes"]:
        raise InputError(f"schema {path} needs a nonempty 'outcomes' list")
    outs = []
    for k, o in enumerate(doc["outcomes"], start=1):
        if not isinstance(o, dict):
            raise InputError(f"schema outcome {k} must be a mapping")
        missing = [key for key in ("value", "indicator", "x", "w") if key not in o]
        if missing:
            raise InputError(f"schema outcome {k} lacks {', '.join(missing)}")
        x = [str(c) for c in o["x"]]
        w = [str(c) for c in o["w"]]
        if not x or not w:
            raise InputError(f"schema outcome {k} needs at least one x and one w column")
        outs.append({"value": str(o["value"]), "indicator": str(o["indicator"]), "x": x, "w": w})
    return outs


def read_dataset(path: str, schema: list) -> Dataset:
    """Read a CSV according to ``schema``; errors name the offending line."""
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise InputError(f"cannot read data {path}: {exc}") from None
    with fh:
        lines = []
        for lineno, line in enumerate(fh, start=1):
            if line.startswith("#") or not line.strip():
                continue
            lines.append((lineno, line))
    if not lines:
        raise InputError(f"{path}: missing header row")
    reader = csv.reader([ln for _, ln in lines])
    rows = list(reader)
    header = [h.strip() for h in rows[0]]
    col = {h: j for j, h in enumerate(header)}
    needed = set()
    for o in schema:
        needed.update([o["value"], o["indicator"]])
        needed.update(c for c in o["x"] + o["w"] if c != INTERCEPT)
    absent = sorted(needed - set(col))
    if absent:
        raise InputError(f"{path} line {lines[0][0]}: header lacks columns {', '.join(absent)}")
    R = len(schema)
    n = len(rows) - 1
    if n == 0:
        raise InputError(f"{path}: no data rows")
    X = [np.empty((n, len(o["x"]))) for o in schema]
    W = [np.empty((n, len(o["w"]))) for o in schema]
    C = np.empty((n, R), dtype=int)
    Y = np.full((n, R), np.nan)

    def num(text, lineno, name):
        try:
            v = float(text)
        except ValueError:
            raise InputError(f"{path} line {lineno}: column {name!r} has non-numeric value {text!r}") from None
        if not math.isfinite(v):
            raise InputError(f"{path} line {lineno}: column {name!r} is not finite")
        return v

    for i, row in enumerate(rows[1:]):
        lineno = lines[i + 1][0]
        if len(row) != len(header):
            raise InputError(f"{path} line {lineno}: expected {len(header)} fields, found {len(row)}")
        for r, o in enumerate(schema):
            ind = row[col[o["indicator"]]].strip()
            if ind not in ("0", "1"):
                raise InputError(f"{path} line {lineno}: indicator {o['indicator']!r} must be 0 or 1, got {ind!r}")
            C[i, r] = int(ind)
            val = row[col[o["value"]]].strip()
            if C[i, r] == 1:
                if val == "":
                    raise InputError(f"{path} line {lineno}: outcome {o['value']!r} is empty but its indicator is 1")
                Y[i, r] = num(val, lineno, o["value"])
            elif val != "":
                raise InputError(f"{path} line {lineno}: outcome {o['value']!r} must be empty when its indicator is 0")
            for dest, cols in ((X[r], o["x"]), (W[r], o["w"])):
                for j, c in enumerate(cols):
                    dest[i, j] = 1.0 if c == INTERCEPT else num(row[col[c]].strip(), lineno, c)
    return Dataset(X, W, C, Y)


def load_params(path: str) -> ModelParams:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read parameters from {path}: {exc}") from None
    doc = doc.get("params", doc)
    try:
        return ModelParams.from_dict(doc)
    except (KeyError, ValueError, MselectError) as exc:
        raise InputError(f"{path}: invalid parameters: {exc}") from None


def load_scenario(spec: str, n: int, rate) -> Scenario:
    spec = str(spec)
    if spec in ("1", "scenario1"):
        return scenario1(n, rate)
    if spec in ("2", "scenario2"):
        return scenario2(n, rate)
    if spec.startswith("custom:"):
        path = spec[len("custom:") :]
        try:
            with open(path) as fh:
                doc = yaml.safe_load(fh)
            params = ModelParams.from_dict(doc)
            laws = doc.get("covariate_laws")
            return custom_scenario(params, laws, n, rate, name=doc.get("name", "custom"))
        except OSError as exc:
            raise InputError(f"cannot read scenario {path}: {exc}") from None
        except (KeyError, TypeError, ValueError, MselectError, yaml.YAMLError) as exc:
            raise InputError(f"invalid scenario file {path}: {exc}") from None
    raise InputError(f"unknown scenario {spec!r}; use 1, 2 or custom:<file>")


def _fit_config(cfg: dict) -> FitConfig:
    try:
        return FitConfig(
            tol=float(cfg["tol"]),
            max_iter=int(cfg["max_iter"]),
            rect_tol=float(cfg["rect_tol"]),
            seed=int(cfg["seed"]),
            regression=cfg["regression"],
            constraint=cfg["constraint"],
        )
    except (TypeError, ValueError) as exc:
        raise InputError(f"invalid fit settings: {exc}") from None


def _float_list(text: str, name: str) -> list:
    try:
        return [float(t) for t in str(text).split(",") if t.strip()]
    except ValueError:
        raise InputError(f"--{name.replace('_', '-')} must be a comma-separated list of numbers") from None


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def _estimate_rows(params: ModelParams):
    return [[name, v] for name, v in zip(params.names(), params.to_vector())]


def cmd_fit(cfg: dict) -> int:
    schema = load_schema(cfg["schema"])
    ds = read_dataset(cfg["data"], schema)
    init = load_params(cfg["init"]) if cfg.get("init") else None
    fc = _fit_config(cfg)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = fit(ds, config=fc, init=init)
    out = cfg["out"]
    write_csv(os.path.join(out, "estimates.csv"), cfg, ["parameter", "estimate"], _estimate_rows(res.params))
    trace = [[0, res.initial_loglik]] + [[k + 1, v] for k, v in enumerate(res.loglik_trace)]
    write_csv(os.path.join(out, "trace.csv"), cfg, ["iteration", "loglik"], trace)
    write_json(
        os.path.join(out, "diagnostics.json"),
        {
            "config": cfg,
            "converged": res.converged,
            "iterations": res.iterations,
            "loglik": res.loglik,
            "initial_loglik": res.initial_loglik,
            "warnings": list(res.warnings),
            "n": ds.n,
            "observed_per_outcome": ds.C.sum(axis=0).tolist(),
            "unobserved_per_outcome": (ds.n - ds.C.sum(axis=0)).tolist(),
            "params": res.params.to_dict(),
        },
    )
    return EXIT_OK if res.converged else EXIT_NONCONVERGED


def _schema_for(R: int) -> dict:
    return {
        "outcomes": [
            {"value": f"y{r}", "indicator": f"c{r}", "x": [INTERCEPT, f"w{r}_1"], "w": [INTERCEPT, f"w{r}_1", f"w{r}_2"]}
            for r in range(1, R + 1)
        ]
    }


def cmd_simulate(cfg: dict) -> int:
    rate = cfg["missing_rate"]
    sc = load_scenario(cfg["scenario"], int(cfg["n"]), None if rate is None else float(rate))
    data = generate(sc, int(cfg["seed"]))
    ds = data.dataset
    out = cfg["out"]
    header, rows = [], []
    for r in range(1, ds.R + 1):
        header += [f"y{r}", f"c{r}", f"w{r}_1", f"w{r}_2"]
    for i in range(ds.n):
        row = []
        for r in range(ds.R):
            row += [ds.Y[i, r] if ds.C[i, r] else None, ds.C[i, r], ds.W[r][i, 1], ds.W[r][i, 2]]
        rows.append(row)
    write_csv(os.path.join(out, "data.csv"), cfg, header, rows)
    with open(os.path.join(out, "schema.yaml"), "w") as fh:
        fh.write(_config_line(cfg) + "\n")
        yaml.safe_dump(_schema_for(ds.R), fh, sort_keys=False)
    write_json(
        os.path.join(out, "truth.json"),
        {
            "config": cfg,
            "scenario": sc.name,
            "seed": int(cfg["seed"]),
            "params": data.params.to_dict(),
            "intercept_offset": data.offset,
            "target_missing_rate": sc.target_missing_rate,
            "calibrated_missing_rate": None if math.isnan(data.calibrated_rate) else data.calibrated_rate,
            "achieved_missing_rate": data.empirical_rate,
        },
    )
    return EXIT_OK


METRIC_KEYS = ["frob_B", "frob_Gamma", "sigma_hat", "rho_hat", "phi_hat", "err_sigma", "err_rho", "err_phi"]


def cmd_benchmark(cfg: dict) -> int:
    n_list = [int(v) for v in _float_list(cfg["n_list"], "n_list")]
    rate_list = _float_list(cfg["rate_list"], "rate_list")
    reps = int(cfg["reps"])
    if not n_list or not rate_list or reps < 1:
        raise InputError("benchmark needs nonempty --n-list, --rate-list and --reps >= 1")
    sc = load_scenario(cfg["scenario"], n_list[0], None)
    fc = _fit_config(cfg)
    header = ["scenario", "n", "rate", "replication", "arm", "ok"] + METRIC_KEYS + [
        "converged",
        "iterations",
        "calibrated_rate",
        "empirical_rate",
    ]
    raw, summary = [], []
    for n in n_list:
        for rate in rate_list:
            if cfg["compare_univariate"]:
                arms = dict(zip(("multivariate", "univariate"), compare_univariate(sc, n, rate, reps, fc, int(cfg["seed"]))))
            else:
                arms = {"multivariate": run_mc(sc, [n], [rate], reps, fc, int(cfg["seed"]))[(n, rate)]}
            for rep in range(reps):
                for arm, s in arms.items():
                    row = s.rows[rep]
                    raw.append(
                        [sc.name, n, rate, rep, arm, row["ok"]]
                        + [row.get(k) for k in METRIC_KEYS]
                        + [row.get("converged"), row.get("iterations"), row.get("calibrated_rate"), row.get("empirical_rate")]
                    )
            for arm, s in arms.items():
                summary.append(
                    [
                        sc.name,
                        n,
                        rate,
                        arm,
                        s.median("frob_B"),
                        s.median("frob_Gamma"),
                        s.mse_sigma,
                        s.mse_rho,
                        s.mse_phi,
                        s.replications,
                        s.failures,
                    ]
                )
    out = cfg["out"]
    write_csv(os.path.join(out, "metrics.csv"), cfg, header, raw)
    write_csv(
        os.path.join(out, "summary.csv"),
        cfg,
        ["scenario", "n", "rate", "arm", "median_frob_B", "median_frob_Gamma", "mse_sigma", "mse_rho", "mse_phi", "replications", "failures"],
        summary,
    )
    return EXIT_OK


def cmd_bootstrap(cfg: dict) -> int:
    schema = load_schema(cfg["schema"])
    ds = read_dataset(cfg["data"], schema)
    init = load_params(cfg["init"]) if cfg.get("init") else None
    fc = _fit_config(cfg)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        point = fit(ds, config=fc, init=init)
        rep = run_bootstrap(ds, config=fc, B=int(cfg["reps"]), seed=int(cfg["seed"]), point=point)
    out = cfg["out"]
    rows = [[t["parameter"], t["estimate"], t["se"], t["ci_lower"], t["ci_upper"]] for t in rep.table()]
    write_csv(os.path.join(out, "bootstrap.csv"), cfg, ["parameter", "estimate", "se", "ci_lower", "ci_upper"], rows)
    write_csv(
        os.path.join(out, "replicates.csv"),
        cfg,
        ["replication"] + list(rep.names),
        [[b] + list(v) for b, v in zip(rep.replicate_ids, rep.replicates)],
    )
    write_json(
        os.path.join(out, "diagnostics.json"),
        {
            "config": cfg,
            "point_converged": point.converged,
            "replications_requested": int(cfg["reps"]),
            "replications_used": rep.replications_used,
            "failures": rep.failures,
            "nonconverged": rep.nonconverged,
        },
    )
    return EXIT_OK


COMMANDS = {"fit": cmd_fit, "simulate": cmd_simulate, "benchmark": cmd_benchmark, "bootstrap": cmd_bootstrap}


# ---------------------------------------------------------------------------
# argument handling
# ---------------------------------------------------------------------------


def _add_fit_options(p: argparse.ArgumentParser, with_init: bool = True) -> None:
    p.add_argument("--tol", type=float, help="relative log-likelihood change for convergence (default 1e-6)")
    p.add_argument("--max-iter", type=int, help="iteration cap (default 500)")
    p.add_argument("--rect-tol", type=float, help="rectangle probability accuracy (default 1e-6)")
    p.add_argument("--seed", type=int, help="top-level seed (default 0)")
    p.add_argument("--regression", choices=["joint", "per_outcome", "explicit"], help="regression update")
    p.add_argument("--constraint", choices=["rescale", "overwrite"], help="Sigma_22 = 1 handling")
    if with_init:
        p.add_argument("--init", help="JSON file with starting parameters (e.g. a simulate truth.json)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mselect", description="Multiple-outcome Heckman selection models.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a dataset by ECM")
    p.add_argument("--data")
    p.add_argument("--schema")
    p.add_argument("--out")
    _add_fit_options(p)
    p.add_argument("--config", help="resolved_config.json of an earlier run")

    p = sub.add_parser("simulate", help="simulate a dataset")
    p.add_argument("--scenario", help="1, 2 or custom:<file> (default 1)")
    p.add_argument("--n", type=int, help="sample size (default 300)")
    p.add_argument("--missing-rate", type=float, help="target missing rate (default: none)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--config")

    p = sub.add_parser("benchmark", help="Monte Carlo study over sample sizes and missing rates")
    p.add_argument("--scenario")
    p.add_argument("--n-list")
    p.add_argument("--rate-list")
    p.add_argument("--reps", type=int)
    p.add_argument("--compare-univariate", action="store_true", default=None)
    p.add_argument("--out")
    _add_fit_options(p, with_init=False)
    p.add_argument("--config")

    p = sub.add_parser("bootstrap", help="bootstrap standard errors and percentile intervals")
    p.add_argument("--data")
    p.add_argument("--schema")
    p.add_argument("--out")
    p.add_argument("--reps", type=int)
    _add_fit_options(p)
    p.add_argument("--config")
    return parser


def resolve_config(args: argparse.Namespace) -> dict:
    """Defaults, then the ``--config`` file, then explicit flags."""
    cmd = args.command
    cfg = dict(DEFAULTS[cmd])
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                saved = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read config {args.config}: {exc}") from None
        if saved.get("command", cmd) != cmd:
            raise InputError(f"config {args.config} belongs to '{saved.get('command')}', not '{cmd}'")
        unknown = set(saved) - set(cfg) - {"command", "version"}
        if unknown:
            raise InputError(f"config {args.config} has unknown keys {sorted(unknown)}")
        cfg.update({k: v for k, v in saved.items() if k in cfg})
    for key in cfg:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    missing = [k for k in REQUIRED[cmd] if cfg.get(k) in (None, "")]
    if missing:
        raise InputError(f"{cmd}: missing required option(s) " + ", ".join("--" + m.replace("_", "-") for m in missing))
    cfg["command"] = cmd
    cfg["version"] = __version__
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        os.makedirs(cfg["out"], exist_ok=True)
        write_json(os.path.join(cfg["out"], "resolved_config.json"), cfg)
        return COMMANDS[cfg["command"]](cfg)
    except InputError as exc:
        print(f"mselect: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except BootstrapUnstableError as exc:
        print(f"mselect: bootstrap unstable: {exc}", file=sys.stderr)
        return EXIT_UNSTABLE
    except FitError as exc:
        print(f"mselect: fit failed: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
    except MselectError as exc:
        print(f"mselect: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
