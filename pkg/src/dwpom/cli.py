"""Command-line interface: simulate, estimate, decide, montecarlo."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .balancing import WeightScheme
from .errors import DwpomError, SchemaError, UsageError
from .estimator import ModelSpec, cv_wpom
from .model_core import PomFit
from .policy import CONFIGS, BlipParams, blip_table, optimal_index
from .simulation import (MonteCarloConfig, Study1Config, gen_study1, gen_study2, run_monte_carlo,
                         study1_spec, study2_specs)
from .terms import evaluate_terms

log = logging.getLogger("dwpom")

DEFAULTS = {
    "study": "1a", "households": 500, "replicates": 100, "seed": 42, "scenario": 3, "case": 1,
    "scheme": "m4", "schemes": None, "draws": 25, "folds": 20, "cv": False, "stages": None,
    "replicate": 0, "data": None, "spec": None, "fit": None, "out": None, "strict_brant": False,
    "value_mode": "fitted", "unaware": True,
}
COMMAND_KEYS = {
    "simulate": {"study", "households", "seed", "scenario", "case", "replicate", "out"},
    "estimate": {"data", "spec", "scheme", "stages", "draws", "seed", "cv", "folds", "out", "strict_brant"},
    "decide": {"data", "fit", "out"},
    "montecarlo": {"study", "households", "replicates", "seed", "scenario", "case", "schemes", "scheme",
                   "draws", "folds", "cv", "out", "value_mode", "unaware"},
}


@dataclass
class RunConfig:
    command: str
    values: dict = field(default_factory=dict)

    def __getattr__(self, name):
        try:
            return self.__dict__["values"][name]
        except KeyError:
            raise AttributeError(name) from None

    def echo(self) -> dict:
        return {"command": self.command, **{k: v for k, v in sorted(self.values.items())}}


def _num(v):
    if isinstance(v, (float, np.floating)):
        return float(f"{float(v):.6g}")
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, dict):
        return {k: _num(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_num(x) for x in v]
    return v


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dwpom", description="Weighted proportional odds treatment regimes for two-person households")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON file of option values; flags take precedence")
        sp.add_argument("--out", help="output file or directory")
        sp.add_argument("-v", "--verbose", action="store_true")

    s = sub.add_parser("simulate", help="generate one simulated dataset with its ground truth")
    common(s)
    s.add_argument("--study")
    s.add_argument("--households", type=int)
    s.add_argument("--replicates", type=int, help="accepted for symmetry with montecarlo; one dataset is written")
    s.add_argument("--replicate", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--scenario", type=int)
    s.add_argument("--case", type=int)

    e = sub.add_parser("estimate", help="fit WPOM (or dWPOM with --stages) to a household CSV")
    common(e)
    e.add_argument("--data")
    e.add_argument("--spec")
    e.add_argument("--scheme")
    e.add_argument("--stages", type=int)
    e.add_argument("--draws", type=int, dest="draws")
    e.add_argument("--seed", type=int)
    e.add_argument("--cv", action="store_const", const=True)
    e.add_argument("--folds", type=int)
    e.add_argument("--strict-brant", action="store_const", const=True, dest="strict_brant")

    d = sub.add_parser("decide", help="recommend treatment configurations from a fit")
    common(d)
    d.add_argument("--data")
    d.add_argument("--fit")

    m = sub.add_parser("montecarlo", help="run a simulation study and summarise")
    common(m)
    m.add_argument("--study")
    m.add_argument("--households", type=int)
    m.add_argument("--replicates", type=int)
    m.add_argument("--seed", type=int)
    m.add_argument("--scenario", type=int)
    m.add_argument("--case", type=int)
    m.add_argument("--schemes")
    m.add_argument("--scheme")
    m.add_argument("--draws", type=int)
    m.add_argument("--folds", type=int)
    m.add_argument("--cv", action="store_const", const=True)
    m.add_argument("--value-mode", dest="value_mode")
    m.add_argument("--no-unaware", action="store_const", const=False, dest="unaware")
    return p


def parse_config(argv=None) -> RunConfig:
    """Resolve defaults, then config-file values, then explicit flags."""
    ns = _build_parser().parse_args(argv)
    cmd = ns.command
    allowed = COMMAND_KEYS[cmd]
    values = {k: DEFAULTS[k] for k in allowed}
    if ns.config:
        try:
            file_vals = json.loads(Path(ns.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"--config: cannot read {ns.config}: {exc}") from exc
        if not isinstance(file_vals, dict):
            raise UsageError("--config: file must hold a JSON object")
        unknown = sorted(set(file_vals) - allowed)
        if unknown:
            raise UsageError(f"--config: unknown keys for '{cmd}': {unknown}")
        values.update(file_vals)
    for k, v in vars(ns).items():
        if k in allowed and v is not None:
            values[k] = v
    values["verbose"] = bool(ns.verbose)
    _validate(cmd, values)
    return RunConfig(cmd, values)


def _validate(cmd: str, v: dict) -> None:
    def scheme_ok(name, s):
        try:
            return WeightScheme.parse(s).value
        except ValueError:
            raise UsageError(f"--{name}: unknown scheme {s!r} (expected m0, m1, m2, m3 or m4)") from None

    if "scheme" in v and v["scheme"] is not None:
        v["scheme"] = scheme_ok("scheme", v["scheme"])
    if cmd == "montecarlo":
        raw = v.get("schemes") or v.get("scheme") or "m4"
        items = raw.split(",") if isinstance(raw, str) else list(raw)
        v["schemes"] = [scheme_ok("schemes", s.strip()) for s in items if str(s).strip()]
    if "study" in v:
        study = str(v["study"]).lower().removeprefix("study")
        if study not in ("1a", "1b", "2"):
            raise UsageError(f"--study: expected 1a, 1b or 2, got {v['study']!r}")
        v["study"] = study
    for key in ("households", "replicates", "draws", "folds", "stages"):
        if v.get(key) is not None and int(v[key]) < 1:
            raise UsageError(f"--{key}: must be a positive integer")
    if v.get("scenario") is not None and v["scenario"] not in (1, 2, 3, 4):
        raise UsageError("--scenario: expected 1, 2, 3 or 4")
    if v.get("case") is not None and v["case"] not in (1, 2):
        raise UsageError("--case: expected 1 or 2")
    if v.get("value_mode") is not None and v["value_mode"] not in ("fitted", "true"):
        raise UsageError("--value-mode: expected 'fitted' or 'true'")
    for key in {"estimate": ("data", "spec"), "decide": ("data", "fit")}.get(cmd, ()):
        if not v.get(key):
            raise UsageError(f"--{key} is required for '{cmd}'")
    if not v.get("out"):
        raise UsageError(f"--out is required for '{cmd}'")


# --------------------------------------------------------------------------
# I/O helpers
# --------------------------------------------------------------------------

def write_csv(df: pd.DataFrame, path: Path, config: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# config: {json.dumps(config, sort_keys=True)}\n")
        df.to_csv(fh, index=False, float_format="%.6g", lineterminator="\n")


def read_csv(path) -> pd.DataFrame:
    try:
        return pd.read_csv(path, comment="#")
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise SchemaError(f"cannot read {path}: {exc}") from exc


def write_json(obj: dict, path: Path) -> None:
    Path(path).write_text(json.dumps(_num(obj), indent=2, sort_keys=False) + "\n", encoding="utf-8")


def load_specs(path) -> list[ModelSpec]:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise SchemaError(f"cannot read spec {path}: {exc}") from exc
    stages = raw["stages"] if isinstance(raw, dict) and "stages" in raw else [raw]
    return [ModelSpec.from_dict(s) for s in stages]


def validate_data(data: pd.DataFrame, specs: list[ModelSpec]) -> None:
    required = ["household_id", specs[-1].u_col] + [c for s in specs for c in s.a_cols]
    missing = [c for c in dict.fromkeys(required) if c not in data.columns]
    if missing:
        raise SchemaError(f"data is missing required columns {missing}")
    if data[required].isna().any().any():
        raise SchemaError("missing values in required columns")
    if not data[specs[-1].u_col].isin([1, 2, 3]).all():
        raise SchemaError("u must take values in {1, 2, 3}")
    for s in specs:
        for c in s.a_cols:
            if not data[c].isin([0, 1]).all():
                raise SchemaError(f"treatment column {c} must be 0/1")


def fit_record(fit: PomFit, spec: ModelSpec, extra: dict | None = None) -> dict:
    rec = {"zeta1": fit.zeta1, "zeta2": fit.zeta2}
    for block, cols in (("beta", spec.beta_cols), ("xi", spec.xi_cols), ("psi", spec.psi_cols), ("phi", spec.phi_cols)):
        rec[block] = dict(zip(cols, map(float, getattr(fit, block))))
    rec["converged"] = bool(fit.converged)
    rec["a_cols"] = list(spec.a_cols)
    if extra:
        rec.update(extra)
    return rec


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------

def cmd_simulate(cfg: RunConfig) -> None:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    echo = cfg.echo()
    if cfg.study == "2":
        data, truth = gen_study2(cfg.households, cfg.replicate, cfg.seed)
        specs = study2_specs(cfg.case)
        t = pd.DataFrame({"household_id": data["household_id"]})
        for j, st in enumerate(truth.stages, start=1):
            t[f"opt{j}_s"], t[f"opt{j}_r"] = st.optimal[:, 0], st.optimal[:, 1]
        t["mu"] = truth.stages[0].mu
    else:
        data, truth = gen_study1(Study1Config(cfg.households, 1, cfg.scenario, seed=cfg.seed), cfg.replicate)
        specs = [study1_spec(cfg.scenario)]
        t = pd.DataFrame({"household_id": data["household_id"], "opt_s": truth.optimal[:, 0],
                          "opt_r": truth.optimal[:, 1], "mu": truth.mu})
    write_csv(data, out / "data.csv", echo)
    write_csv(t, out / "truth.csv", echo)
    write_json({"config": echo, "stages": [s.to_dict() for s in specs]}, out / "spec.json")
    log.info("wrote %d households to %s", len(data), out)


def cmd_estimate(cfg: RunConfig) -> None:
    from .dynamics import dwpom_fit

    specs = load_specs(cfg.spec)
    if cfg.stages is not None and cfg.stages != len(specs):
        raise SchemaError(f"--stages {cfg.stages} but the spec describes {len(specs)} stage(s)")
    data = read_csv(cfg.data)
    validate_data(data, specs)
    echo = cfg.echo()
    result = {"config": echo, "scheme": cfg.scheme}
    if cfg.cv:
        if len(specs) != 1:
            raise UsageError("--cv: cross-validation is available for single-stage fits only")
        cv = cv_wpom(data, specs[0], cfg.scheme, cfg.folds, cfg.seed)
        spread = dict(zip(["zeta1", "zeta2"] + [f"{b}:{c}" for b in ("beta", "xi", "psi", "phi")
                                               for c in getattr(specs[0], f"{b}_cols")], map(float, cv.spread)))
        result["stages"] = [fit_record(cv.fit, specs[0], {"fold_sd": spread, "folds": len(cv.fold_fits)})]
    else:
        res = dwpom_fit(data, specs, cfg.scheme, R=cfg.draws, seed=cfg.seed, strict=cfg.strict_brant)
        result["stages"] = [
            fit_record(st.fit, spec, {"draws_used": st.draws_used, "draws_failed": st.draws_failed,
                                      "brant_failures": st.brant_failures, "brant_tests": len(st.brant_pvalues)})
            for st, spec in zip(res.stages, specs)
        ]
        result["warnings"] = len(res.warnings)
    write_json(result, Path(cfg.out))
    log.info("wrote fit to %s", cfg.out)


def _stage_blips(rec: dict, data: pd.DataFrame):
    blocks, coefs = [], []
    for block in ("xi", "psi", "phi"):
        terms = list(rec[block].keys())
        blocks.append(evaluate_terms(data, terms))
        coefs.append(np.array(list(rec[block].values()), dtype=float))
    return blocks, BlipParams(*coefs)


def cmd_decide(cfg: RunConfig) -> None:
    try:
        fit = json.loads(Path(cfg.fit).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise SchemaError(f"cannot read fit {cfg.fit}: {exc}") from exc
    stages = fit["stages"] if "stages" in fit else [fit]
    data = read_csv(cfg.data)
    out = pd.DataFrame({"household_id": data["household_id"] if "household_id" in data else np.arange(len(data))})
    for j, rec in enumerate(stages, start=1):
        missing = [b for b in ("xi", "psi", "phi") if b not in rec]
        if missing:
            raise SchemaError(f"fit stage {j} lacks blocks {missing}")
        blocks, params = _stage_blips(rec, data)
        tab = blip_table(*blocks, params)
        idx = optimal_index(tab)
        suffix = "" if len(stages) == 1 else str(j)
        out[f"a{suffix}_s"] = CONFIGS[idx, 0]
        out[f"a{suffix}_r"] = CONFIGS[idx, 1]
        out[f"blip{suffix}"] = tab[np.arange(len(idx)), idx]
    write_csv(out, Path(cfg.out), cfg.echo())
    log.info("wrote %d recommendations to %s", len(out), cfg.out)


def cmd_montecarlo(cfg: RunConfig) -> None:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    mc = MonteCarloConfig(study=cfg.study, households=cfg.households, replicates=cfg.replicates, seed=cfg.seed,
                          scenario=cfg.scenario, schemes=tuple(cfg.schemes), draws=cfg.draws, folds=cfg.folds,
                          cv=bool(cfg.cv), unaware=bool(cfg.unaware), case=cfg.case, value_mode=cfg.value_mode)
    res = run_monte_carlo(mc)
    echo = cfg.echo()
    write_csv(res.summary, out / "summary.csv", echo)
    write_csv(res.per_replicate, out / "replicates.csv", echo)
    summary = {
        "config": echo,
        "failed_replicates": sorted(res.failures),
        "summary": {f"{r.method}/{r.metric}": {"mean": r.mean, "sd": r.sd, "n": int(r.n)}
                    for r in res.summary.itertuples()},
    }
    write_json(summary, out / "summary.json")
    log.info("wrote Monte Carlo summary to %s", out)


COMMANDS = {"simulate": cmd_simulate, "estimate": cmd_estimate, "decide": cmd_decide, "montecarlo": cmd_montecarlo}


def execute(cfg: RunConfig) -> int:
    try:
        COMMANDS[cfg.command](cfg)
    except UsageError as exc:
        print(f"error [{exc.code}]: {exc}", file=sys.stderr)
        return 2
    except DwpomError as exc:
        print(f"error [{exc.code}]: {exc}", file=sys.stderr)
        return 1
    return 0


def main(argv=None) -> int:
    try:
        cfg = parse_config(argv)
    except UsageError as exc:
        print(f"error [{exc.code}]: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(stream=sys.stderr, level=logging.INFO if cfg.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return execute(cfg)


if __name__ == "__main__":
    sys.exit(main())
