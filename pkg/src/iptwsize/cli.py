"""Command line interface: ``design``, ``benchmark``, ``simulate``, ``validate``.

Every command accepts ``--config PATH`` (JSON); explicit flags override
config fields. The effective configuration is echoed to ``<out>/config.json``
so that ``--config <out>/config.json`` reproduces the run.

Exit codes: 0 success, 1 user or data error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from iptwsize import rng as streams
from iptwsize.data import OutcomeKind, load_csv, validate, write_csv
from iptwsize.design import BinaryRCT, ContinuousRCT, CountRCT, DesignInputs, rct_sample_size, required_n
from iptwsize.errors import DataError, NumericError
from iptwsize.msm import default_link, get_link
from iptwsize.powersim import replicates_csv_text, run_validation
from iptwsize.propensity import Estimand, PSSpec
from iptwsize.sandwich import dump_matrices, stacked_fit
from iptwsize.scenarios import PRESETS, generate_with_constants, get_scenario
from iptwsize.stabilize import (
    StabilityFunctional,
    UCBSpec,
    apply_functional,
    bootstrap_lsvf,
    ucb,
)

log = logging.getLogger("iptwsize")

DEFAULT_FUNCTIONALS = ["Q0.5", "Q0.7", "Q0.9", "mean"]
DEFAULT_UCB = ["Q0.5", "mean"]

DEFAULTS = {
    "design": {
        "pilot": None,
        "kind": None,
        "link": None,
        "covariates": None,
        "intercept_only": False,
        "estimand": "ATE",
        "delta": None,
        "alpha": 0.05,
        "power": 0.8,
        "B": 1000,
        "B_ucb": 1000,
        "gamma_ucb": 0.05,
        "functionals": DEFAULT_FUNCTIONALS,
        "ucb": DEFAULT_UCB,
        "seed": 0,
        "workers": 1,
        "out": None,
        "dump_matrices": False,
        "dump_bootstrap": False,
    },
    "benchmark": {
        "scenario": None,
        "kind": None,
        "p0": None,
        "p1": None,
        "lambda0": None,
        "lambda1": None,
        "sigma2": None,
        "rho": None,
        "delta": None,
        "alpha": 0.05,
        "power": 0.8,
        "out": None,
    },
    "simulate": {
        "scenario": None,
        "n": None,
        "constant_propensity": False,
        "null": False,
        "seed": None,
        "out": None,
    },
    "validate": {
        "scenario": None,
        "constant_propensity": False,
        "null": False,
        "R": 1000,
        "n_pilot": None,
        "B": 1000,
        "B_ucb": 1000,
        "gamma_ucb": 0.05,
        "functionals": DEFAULT_FUNCTIONALS,
        "ucb": DEFAULT_UCB,
        "reps": 2000,
        "alpha": 0.05,
        "power": 0.8,
        "delta": None,
        "target": 0.8,
        "smooth": False,
        "seed": None,
        "workers": 1,
        "out": None,
    },
}


class UsageError(DataError):
    pass


def _csv_list(text: str) -> list[str]:
    return [part.strip() for part in text.split(",") if part.strip()]


def _add_common(p: argparse.ArgumentParser, seed: bool = True, workers: bool = True) -> None:
    p.add_argument("--config", help="JSON config file; flags override its fields")
    p.add_argument("--out", help="output directory")
    if seed:
        p.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    if workers:
        p.add_argument("--workers", type=int, help="worker processes")


def _add_design_inputs(p: argparse.ArgumentParser) -> None:
    p.add_argument("--delta", type=float, help="effect size on the link scale")
    p.add_argument("--alpha", type=float, help="two-sided significance level (default 0.05)")
    p.add_argument("--power", type=float, help="target power (default 0.8)")


def _add_stabilization(p: argparse.ArgumentParser) -> None:
    p.add_argument("--B", type=int, dest="B", help="first-level bootstrap resamples")
    p.add_argument("--B-ucb", type=int, dest="B_ucb", help="second-level resamples")
    p.add_argument("--gamma-ucb", type=float, dest="gamma_ucb", help="UCB tail level")
    p.add_argument("--functionals", type=_csv_list, help="e.g. Q0.5,Q0.7,Q0.9,mean")
    p.add_argument("--ucb", type=_csv_list, help="inner functionals for UCB rows, e.g. Q0.5,mean")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="iptwsize", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="progress log on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("design", help="sample size from a pilot CSV")
    _add_common(p)
    p.add_argument("--pilot", help="pilot CSV with header y,t,x1..xp")
    p.add_argument("--kind", choices=[k.value for k in OutcomeKind])
    p.add_argument("--link", choices=["logit", "log", "identity"], help="default: by outcome kind")
    p.add_argument("--covariates", type=_csv_list, help="PS covariate columns, e.g. x1,x3 (default all)")
    p.add_argument("--intercept-only", action="store_true", default=None, help="constant propensity model")
    p.add_argument("--estimand", choices=["ATE", "ATT"])
    _add_design_inputs(p)
    _add_stabilization(p)
    p.add_argument("--dump-matrices", action="store_true", default=None, help="write A, B, Sigma CSVs")
    p.add_argument("--dump-bootstrap", action="store_true", default=None, help="write the V* draws")

    p = sub.add_parser("benchmark", help="RCT-style variance and sample size")
    _add_common(p, seed=False, workers=False)
    p.add_argument("--scenario", choices=sorted(PRESETS))
    p.add_argument("--kind", choices=[k.value for k in OutcomeKind])
    for name in ("p0", "p1", "lambda0", "lambda1", "sigma2", "rho"):
        p.add_argument(f"--{name}", type=float)
    _add_design_inputs(p)

    p = sub.add_parser("simulate", help="write a synthetic dataset and its constants")
    _add_common(p, workers=False)
    p.add_argument("--scenario", choices=sorted(PRESETS))
    p.add_argument("--n", type=int)
    p.add_argument("--constant-propensity", action="store_true", default=None)
    p.add_argument("--null", action="store_true", default=None, help="no treatment effect")

    p = sub.add_parser("validate", help="Monte Carlo validation of the design procedure")
    _add_common(p)
    p.add_argument("--scenario", choices=sorted(PRESETS))
    p.add_argument("--constant-propensity", action="store_true", default=None)
    p.add_argument("--null", action="store_true", default=None)
    p.add_argument("--R", type=int, dest="R", help="design replicates (pilots)")
    p.add_argument("--n-pilot", type=int, dest="n_pilot")
    p.add_argument("--reps", type=int, help="Monte Carlo replicates per grid point")
    p.add_argument("--target", type=float, help="power target for hit rates")
    p.add_argument("--smooth", action="store_true", default=None, help="isotonic power curve")
    _add_design_inputs(p)
    _add_stabilization(p)
    return parser


def effective_config(args: argparse.Namespace) -> dict:
    config = dict(DEFAULTS[args.command])
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                loaded = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        loaded.pop("command", None)
        unknown = set(loaded) - set(config)
        if unknown:
            raise UsageError(f"unknown config fields: {sorted(unknown)}")
        config.update(loaded)
    for key in config:
        value = getattr(args, key, None)
        if value is not None:
            config[key] = value
    return config


def _require(config: dict, *keys: str) -> None:
    missing = [k for k in keys if config.get(k) is None]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + k.replace("_", "-") for k in missing))


def _write_json(path: str, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _prepare_out(config: dict, command: str) -> str | None:
    out = config.get("out")
    if out:
        os.makedirs(out, exist_ok=True)
        _write_json(os.path.join(out, "config.json"), {"command": command, **config})
    return out


def _stability(config: dict):
    functionals = [StabilityFunctional.parse(f) for f in config["functionals"]]
    ucb_specs = [UCBSpec(StabilityFunctional.parse(f), config["B_ucb"], config["gamma_ucb"]) for f in config["ucb"]]
    return functionals, ucb_specs


def cmd_design(config: dict) -> dict:
    _require(config, "pilot", "kind", "delta")
    pilot = load_csv(config["pilot"], config["kind"])
    diag = validate(pilot)
    if not diag.ok:
        raise DataError("; ".join(diag.flags))
    link = get_link(config["link"]) if config["link"] else default_link(pilot.kind)
    if config["intercept_only"]:
        spec = PSSpec.intercept_only()
    elif config["covariates"]:
        spec = PSSpec(tuple(int(c.lstrip("x")) - 1 for c in config["covariates"]))
    else:
        spec = PSSpec.all_covariates(pilot.p)
    estimand = Estimand(config["estimand"])
    inp = DesignInputs(config["delta"], config["alpha"], config["power"])
    functionals, ucb_specs = _stability(config)
    out = _prepare_out(config, "design")

    fit = stacked_fit(pilot, spec, link, estimand)
    master = streams.StreamKey(config["seed"])
    dist = bootstrap_lsvf(pilot, spec, link, config["B"], master.child(streams.BOOTSTRAP), estimand, config["workers"])
    choices = {}
    for f in functionals:
        v = apply_functional(dist, f)
        choices[f.label] = {"v_stable": v, "n_prop": required_n(v, inp)}
    for j, u in enumerate(ucb_specs):
        v = ucb(dist, u, master.child(streams.UCB, j).generator())
        choices[u.label] = {"v_stable": v, "n_prop": required_n(v, inp)}
    report = {
        "n_pilot": pilot.n,
        "link": link.name,
        "estimand": estimand.value,
        "beta_hat": [float(b) for b in fit.msm.beta_hat],
        "V_pilot": fit.lsvf,
        "n_pilot_design": required_n(fit.lsvf, inp),
        "choices": choices,
        "bootstrap": {
            "B_requested": dist.B_requested,
            "B_succeeded": len(dist.values),
            "failures": dist.failures,
            "redraws": dist.redraws,
        },
        "diagnostics": diag.as_dict(),
    }
    if out:
        _write_json(os.path.join(out, "design.json"), report)
        if config["dump_matrices"]:
            dump_matrices(fit, os.path.join(out, "matrices"))
        if config["dump_bootstrap"]:
            dist.to_csv(os.path.join(out, "bootstrap.csv"))
    return report


def cmd_benchmark(config: dict) -> dict:
    if config["scenario"]:
        scenario = get_scenario(config["scenario"])
        if scenario.kind is OutcomeKind.CONTINUOUS and config["sigma2"] is None:
            raise UsageError("the continuous benchmark needs --sigma2")
        defaults = {"rho": scenario.rho, "delta": scenario.delta}
        defaults.update(
            {"p0": getattr(scenario, "p0", None), "lambda0": getattr(scenario, "lambda0", None)}
        )
        config = {**config, **{k: v for k, v in defaults.items() if config.get(k) is None}}
        config["kind"] = scenario.kind.value
    _require(config, "kind", "rho")
    kind = OutcomeKind(config["kind"])
    if kind is OutcomeKind.BINARY:
        _require(config, "p0")
        params = BinaryRCT(config["p0"], config["rho"], config["p1"], config["delta"])
    elif kind is OutcomeKind.COUNT:
        _require(config, "lambda0")
        params = CountRCT(config["lambda0"], config["rho"], config["lambda1"], config["delta"])
    else:
        _require(config, "sigma2", "delta")
        params = ContinuousRCT(config["sigma2"], config["rho"], config["delta"])
    V, n = rct_sample_size(params, config["alpha"], config["power"])
    report = {"kind": kind.value, "delta": params.delta, "V_rct": V, "n_rct": n}
    out = _prepare_out(config, "benchmark")
    if out:
        _write_json(os.path.join(out, "benchmark.json"), report)
    return report


def cmd_simulate(config: dict) -> dict:
    _require(config, "scenario", "n", "seed", "out")
    scenario = get_scenario(config["scenario"], config["constant_propensity"], config["null"])
    gen = streams.StreamKey(config["seed"]).child(streams.SIMULATE).generator()
    data, constants = generate_with_constants(scenario, config["n"], gen)
    out = _prepare_out(config, "simulate")
    write_csv(data, os.path.join(out, "data.csv"))
    sidecar = {"scenario": config["scenario"], "kind": data.kind.value, "n": data.n, **constants}
    _write_json(os.path.join(out, "constants.json"), sidecar)
    return sidecar


def cmd_validate(config: dict) -> dict:
    _require(config, "scenario", "seed", "out")
    scenario = get_scenario(config["scenario"], config["constant_propensity"], config["null"])
    delta = config["delta"] if config["delta"] is not None else scenario.delta
    inp = DesignInputs(delta, config["alpha"], config["power"])
    functionals, ucb_specs = _stability(config)
    n_pilot = config["n_pilot"] or scenario.n_pilot
    config = {**config, "n_pilot": n_pilot, "delta": delta}
    out = _prepare_out(config, "validate")
    result = run_validation(
        scenario,
        config["R"],
        n_pilot,
        config["B"],
        config["reps"],
        inp,
        streams.StreamKey(config["seed"]),
        functionals,
        ucb_specs,
        config["target"],
        config["workers"],
        config["smooth"],
    )
    result.report.to_csv(os.path.join(out, "report.csv"))
    result.grid.to_csv(os.path.join(out, "grid.csv"))
    with open(os.path.join(out, "replicates.csv"), "w", encoding="utf-8", newline="") as fh:
        fh.write(replicates_csv_text(result.replicates))
    return {"report": os.path.join(out, "report.csv"), "grid": os.path.join(out, "grid.csv")}


COMMANDS = {
    "design": cmd_design,
    "benchmark": cmd_benchmark,
    "simulate": cmd_simulate,
    "validate": cmd_validate,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
        stream=sys.stderr,
    )
    try:
        config = effective_config(args)
        result = COMMANDS[args.command](config)
    except (DataError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    json.dump(result, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
