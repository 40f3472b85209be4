"""Command-line entry point: one binary with a subcommand per operation.

Every run echoes its resolved configuration to stderr as one JSON line, prints
a one-line summary to stdout (a JSON object with ``--json``) and, with
``--out``, writes its run directory. Exit codes: 0 when every assertion of the
run holds, 1 when one fails, 2 on usage, configuration or input errors
(including a refusal to overwrite a non-empty output directory).
"""

from __future__ import annotations

import argparse
import math
import os
import sys

import numpy as np

from . import __version__
from .artifacts import prepare_output_dir, read_samples
from .coefficients import constants_table
from .config import canonical_json, load_config, resolve
from .errors import FollmerLabError
from .experiments import (
    audit_run,
    constants_run,
    persist,
    replay,
    run_experiment,
)
from .metrics import DEFAULT_FLOOR_C, mc_floor, sliced_w2, w2_exact

HELP_WIDTH = 100
EXIT_OK, EXIT_ASSERTION, EXIT_USAGE = 0, 1, 2

# Dotted summary paths shown on the one-line summary of each run kind.
SUMMARY_KEYS = {
    "sample": ("n", "d", "N", "w2_oracle", "floor", "bound"),
    "constants": ("variant", "K", "K0", "K1", "K2", "K5", "K9"),
    "audit": ("passed", "pass_rate", "budget_sum", "budget", "lipschitz.estimate",
              "lipschitz.bound"),
    "curve": ("slope", "floor", "reference"),
    "scaling": ("fit.slope", "fit.n_star", "fit.ratios", "fit_half_eps.n_star"),
    "eps_sweep": ("modes.random.slope", "modes.adversarial.slope",
                  "modes.random.coefficient", "modes.random.r2", "modes.adversarial.r2"),
    "early_stop": ("d", "R"),
    "compare": ("floor", "follmer_prob_ode_gap"),
    "bayes": ("mean", "oracle_mean", "mean_abs_error", "w2_oracle"),
}

# name -> (experiment kind, short help, description)
EXPERIMENT_COMMANDS = {
    "curve": ("curve", "W2 against the step size for one target and flow",
              "Fit the W2 error against the step size for one target and flow."),
    "scaling": ("scaling", "steps needed for W2 <= eps0 as the dimension grows",
                "Find the steps needed for W2 <= eps0 as the dimension grows."),
    "eps-sweep": ("eps_sweep", "W2 against the size of a velocity perturbation",
                  "Measure W2 against the size of a velocity perturbation."),
    "early-stop": ("early_stop", "bounded-support target sampled up to t = 1 - delta",
                   "Sample a bounded-support target up to t = 1 - delta."),
    "compare": ("compare", "Föllmer, rectified and probability-flow samplers side by side",
                "Run the Föllmer, rectified and probability-flow samplers side by side."),
    "bayes": ("bayes", "posterior moments against exact or grid oracles",
              "Compare sampled posterior moments with exact or grid oracles."),
}


class _Formatter(argparse.HelpFormatter):
    """Help formatter with a fixed width so that help text does not depend on the terminal."""

    def __init__(self, prog):
        super().__init__(prog, width=HELP_WIDTH, max_help_position=32)


class _Parser(argparse.ArgumentParser):
    def __init__(self, *args, **kwargs):
        kwargs.setdefault("formatter_class", _Formatter)
        super().__init__(*args, **kwargs)


def _common(p, config_flag):
    p.add_argument(config_flag, dest="config", required=True, metavar="FILE",
                   help="configuration file (path or bundled file name)")
    p.add_argument("--seed", type=int, default=None,
                   help="global seed (overrides experiment.seed)")
    p.add_argument("--out", default=None, metavar="DIR", help="write the run directory here")
    p.add_argument("--force", action="store_true",
                   help="allow replacing a non-empty output directory")
    p.add_argument("--workers", type=int, default=None, metavar="K",
                   help="worker threads (default: number of cores)")
    p.add_argument("--json", action="store_true", help="print the summary as one JSON object")


def build_parser():
    parser = _Parser(prog="follmerlab",
                     description="Deterministic transport samplers with explicit error bounds.")
    parser.add_argument("--version", action="version", version=f"follmerlab {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True,
                                parser_class=_Parser)

    p = sub.add_parser("sample", help="run one sampler and write its particles",
                       description="Run one sampler and write samples.bin, samples.hdr and "
                                   "diagnostics.csv.")
    _common(p, "--target")
    p.add_argument("--flow", choices=("follmer", "rectified", "prob-ode"), default=None,
                   help="sampler (default: flow.kind)")
    p.add_argument("--steps", type=int, default=None, metavar="N", help="number of steps")
    p.add_argument("--delta", type=float, default=None, help="stop the flow at t = 1 - delta")
    p.add_argument("--schedule", choices=("uniform", "log_uniform"), default=None,
                   help="time grid")
    p.add_argument("--particles", type=int, default=None, metavar="n", help="particle count")
    p.add_argument("--eps", type=float, default=None, help="perturbation size")
    p.add_argument("--perturb", choices=("none", "random", "adversarial"), default=None,
                   help="perturbation mode")

    p = sub.add_parser("constants", help="print the regularity constants of a target",
                       description="Print the coefficient set as a two-column table, then as CSV.")
    _common(p, "--target")
    p.add_argument("--variant", choices=("auto", "base", "bayes", "manifold", "rectified"),
                   default="auto", help="constant variant (default: from the target family)")

    p = sub.add_parser("w2", help="W2 distance between two sample files",
                       description="Print value, method and error estimate as one CSV row.")
    p.add_argument("a", help="first sample file (.bin with .hdr sidecar)")
    p.add_argument("b", help="second sample file")
    p.add_argument("--method", choices=("exact", "sliced"), default="exact",
                   help="exact assignment or sliced projections")
    p.add_argument("--projections", type=int, default=64, help="projections for --method sliced")
    p.add_argument("--seed", type=int, default=0, help="projection seed for --method sliced")
    p.add_argument("--json", action="store_true", help="print the result as one JSON object")

    p = sub.add_parser("audit", help="check the regularity inequalities on a probe grid",
                       description="Regularity audit of the Föllmer field with its constants, "
                                   "plus the flow-map Lipschitz probe.")
    _common(p, "--target")
    p.add_argument("--negative-control", action="store_true",
                   help="halve K5 and pass only if the audit then fails")
    p.add_argument("--no-lipschitz", action="store_true", help="skip the Lipschitz probe")

    for name, (_, short, text) in EXPERIMENT_COMMANDS.items():
        p = sub.add_parser(name, help=short, description=text)
        _common(p, "--config")

    p = sub.add_parser("replay", help="re-run a manifest and compare every number",
                       description="Re-execute the configuration recorded in a manifest and "
                                   "report whether every recorded number is reproduced.")
    p.add_argument("manifest", help="manifest.json or its run directory")
    p.add_argument("--workers", type=int, default=None, metavar="K",
                   help="worker threads (default: number of cores)")
    p.add_argument("--json", action="store_true", help="print the result as one JSON object")
    return parser


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------


def _lookup(doc, path):
    for part in path.split("."):
        if not isinstance(doc, dict) or part not in doc:
            return None
        doc = doc[part]
    return doc


def _fmt(value):
    if isinstance(value, float):
        return f"{value:.6g}" if math.isfinite(value) else str(value)
    if isinstance(value, (list, tuple)):
        return "[" + ",".join(_fmt(v) for v in value) + "]"
    return str(value)


def _emit(kind, passed, summary, assertions, as_json, out=None):
    if as_json:
        doc = {"kind": kind, "passed": passed, "assertions": assertions, "summary": summary}
        if out is not None:
            doc["out"] = str(out)
        print(canonical_json(_jsonable(doc)))
        return
    parts = [kind, "PASS" if passed else "FAIL"]
    for key in SUMMARY_KEYS.get(kind, ()):
        value = _lookup(summary, key)
        if value is not None:
            parts.append(f"{key}={_fmt(value)}")
    failed = sorted(k for k, v in assertions.items() if not v)
    if failed:
        parts.append("failed=" + ",".join(failed))
    if out is not None:
        parts.append(f"out={out}")
    print(" ".join(parts))


def _jsonable(obj):
    from .experiments import _json_ready

    return _json_ready(obj)


def _load(args):
    config = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        config.setdefault("experiment", {})["seed"] = int(args.seed)
    return config


def _apply_sample_flags(config, args):
    flow, sched, pert, metric = (config["flow"], config["schedule"], config["perturbation"],
                                 config["metric"])
    if args.flow is not None:
        flow["kind"] = args.flow
    if args.steps is not None:
        sched["steps"] = args.steps
    if args.delta is not None:
        sched["delta"] = args.delta
    if args.schedule is not None:
        sched["kind"] = args.schedule
    if args.particles is not None:
        metric["particles"] = args.particles
    if args.eps is not None:
        pert["eps"] = args.eps
        if args.perturb is None and args.eps > 0 and pert["mode"] == "none":
            pert["mode"] = "random"
    if args.perturb is not None:
        pert["mode"] = args.perturb
    config.setdefault("experiment", {})["kind"] = "sample"
    return resolve(config)


def _workers(args):
    return args.workers if args.workers else (os.cpu_count() or 1)


def _finish(result, config, args):
    out = None
    if args.out:
        persist(result, config, args.out, args.force)
        out = args.out
    assertions = {k: bool(v) for k, v in result.assertions.items()}
    _emit(result.kind, result.passed, result.summary, assertions, args.json, out)
    return EXIT_OK if result.passed else EXIT_ASSERTION


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _cmd_w2(args):
    a, _ = read_samples(args.a)
    b, _ = read_samples(args.b)
    if a.shape[1] != b.shape[1]:
        raise FollmerLabError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    if args.method == "exact":
        value = w2_exact(a, b).W2
    else:
        value = sliced_w2(a, b, args.projections, args.seed).value
    M0 = max(float(np.mean(np.sum(a**2, axis=1))), float(np.mean(np.sum(b**2, axis=1))), 1e-300)
    error = mc_floor(M0, min(len(a), len(b)), DEFAULT_FLOOR_C)
    if args.json:
        print(canonical_json({"value": value, "method": args.method, "error_estimate": error,
                              "n_a": len(a), "n_b": len(b)}))
    else:
        print(f"{value!r},{args.method},{error!r}")
    return EXIT_OK


def _cmd_constants(args, config):
    variant = None if args.variant == "auto" else args.variant
    result = constants_run(config, variant)
    coeffs = result.constants["flow"]
    if not args.json:
        rows = constants_table(coeffs)
        width = max(len(k) for k, _ in rows)
        for key, value in rows:
            print(f"{key:<{width}}  {_fmt(value)}")
        print()
        print("constant,value")
        for key, value in rows:
            print(f"{key},{value!r}" if isinstance(value, float) else f"{key},{value}")
    if args.out:
        persist(result, config, args.out, args.force)
    assertions = {k: bool(v) for k, v in result.assertions.items()}
    _emit("constants", result.passed, result.summary, assertions, args.json, args.out)
    return EXIT_OK if result.passed else EXIT_ASSERTION


def _cmd_replay(args):
    new, diffs = replay(args.manifest, _workers(args))
    passed = not diffs
    summary = {"manifest": args.manifest, "kind": new.kind, "differences": diffs}
    if args.json:
        print(canonical_json(_jsonable({"kind": "replay", "passed": passed, "summary": summary})))
    else:
        status = "PASS" if passed else "FAIL"
        print(f"replay {status} kind={new.kind} differences={_fmt(diffs)}")
    return EXIT_OK if passed else EXIT_ASSERTION


def dispatch(argv=None):
    """Parse ``argv`` and run the command; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        if args.command == "w2":
            return _cmd_w2(args)
        if args.command == "replay":
            return _cmd_replay(args)
        if args.out:
            # Refuse early so that no work is done for a run that cannot be written.
            _check_out(args.out, args.force)
        config = _load(args)
        if args.command == "sample":
            config = _apply_sample_flags(config, args)
        print("config: " + canonical_json(config), file=sys.stderr)
        if args.command == "constants":
            return _cmd_constants(args, config)
        if args.command == "audit":
            result = audit_run(config, args.negative_control, not args.no_lipschitz)
        elif args.command == "sample":
            result = run_experiment(config, _workers(args), kind="sample")
        else:
            result = run_experiment(config, _workers(args), kind=EXPERIMENT_COMMANDS[args.command][0])
        return _finish(result, config, args)
    except FollmerLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def _check_out(path, force):
    from pathlib import Path

    p = Path(path)
    if p.exists() and not force and (not p.is_dir() or any(p.iterdir())):
        prepare_output_dir(p, False)


def main():
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
