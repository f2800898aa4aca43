"""Command-line front door.

Exit codes: 0 accept (or success for non-test subcommands), 1 usage error,
2 numeric/calibration failure, 3 reject.  Diagnostics go to stderr, data to
files or stdout.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .engine import TestConfig, critical_value, run_test
from .errors import DpcovError, UsageError
from .moments import NoiseLaw, moment_table
from .reportio import dumps_json, report_from_dict, report_to_dict
from .rmt import MarchenkoPastur, mp_cdf, mp_density
from .simulation import (ExperimentConfig, ModelSpec, SigmaSpec,
                         run_experiment)
from .spectra import load_csv

EXIT_ACCEPT = 0
EXIT_USAGE = 1
EXIT_NUMERIC = 2
EXIT_REJECT = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _default_seed() -> int:
    env = os.environ.get("DPCOV_SEED")
    return int(env) if env else 0


def _build_parser() -> _Parser:
    p = _Parser(prog="dpcov", description=__doc__)
    p.add_argument("--version", action="version",
                   version=f"dpcov {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("test", parents=[], help="run the privatized test")
    t.add_argument("--input", required=True, help="CSV of observations")
    t.add_argument("--source", choices=["covariance", "correlation"],
                   default="covariance")
    t.add_argument("--epsilon", type=float, required=True)
    t.add_argument("--gamma-tilde", type=float, default=2.0)
    t.add_argument("--sigma", type=float, default=1.0)
    t.add_argument("--alpha", type=float, default=0.05)
    t.add_argument("--mc-samples", type=int, default=1_000_000)
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--center", action="store_true")
    t.add_argument("--header", action="store_true",
                   help="first CSV row is a header")
    t.add_argument("--json-out", default=None, help="write the report here")

    c = sub.add_parser("calibrate", help="print the null calibration as JSON")
    c.add_argument("--y", type=float, required=True)
    c.add_argument("--b", type=float, required=True)
    c.add_argument("--alpha", type=float, default=0.05)
    c.add_argument("--mc-samples", type=int, default=1_000_000)
    c.add_argument("--seed", type=int, default=None)

    r = sub.add_parser("rmt", help="dump density/CDF tables as CSV")
    r.add_argument("--y", type=float, required=True)
    r.add_argument("--points", type=int, default=1001)
    r.add_argument("--t-min", type=float, default=None)
    r.add_argument("--t-max", type=float, default=None)
    r.add_argument("--out", default=None, help="output CSV (default stdout)")

    s = sub.add_parser("simulate", help="empirical size/power experiment")
    s.add_argument("--config", default=None,
                   help="JSON or TOML experiment description")
    s.add_argument("--model", choices=["gaussian", "uniform"],
                   default="gaussian")
    s.add_argument("--family",
                   choices=["scaled_identity", "power1", "power2", "power3"],
                   default="scaled_identity")
    s.add_argument("--delta", type=float, default=0.0)
    s.add_argument("--cells", default="400x200",
                   help="comma list of NxD pairs, e.g. 400x200,800x400")
    s.add_argument("--epsilons", default="1,2,4,8")
    s.add_argument("--alpha", type=float, default=0.05)
    s.add_argument("--replications", type=int, default=2000)
    s.add_argument("--master-seed", type=int, default=None)
    s.add_argument("--mc-samples", type=int, default=1_000_000)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--common-random-numbers", action="store_true")
    s.add_argument("--full-scale", action="store_true",
                   help="allow cells beyond desk scale (d > 1000)")
    s.add_argument("--out", default=None, help="write rates CSV here")

    k = sub.add_parser("check", help="re-validate a stored test report")
    k.add_argument("--report", required=True)
    return p


def _cmd_test(args) -> int:
    X = load_csv(args.input, header=args.header)
    seed = args.seed if args.seed is not None else _default_seed()
    config = TestConfig(epsilon=args.epsilon, gamma_tilde=args.gamma_tilde,
                        sigma=args.sigma, alpha=args.alpha,
                        mc_samples=args.mc_samples, seed=seed,
                        source=args.source, center=args.center)
    report = run_test(X, config)
    doc = dumps_json(report_to_dict(report))
    if args.json_out:
        with open(args.json_out, "w") as fh:
            fh.write(doc)
        print(f"wrote report to {args.json_out}", file=sys.stderr)
    else:
        sys.stdout.write(doc)
    print(f"decision: {report.decision} "
          f"(T_max={report.statistics.T_max:.4f}, "
          f"z_alpha={report.critical.z_alpha:.4f}, p_max={report.p_max:.4g})",
          file=sys.stderr)
    return EXIT_REJECT if report.decision == "reject" else EXIT_ACCEPT


def _cmd_calibrate(args) -> int:
    seed = args.seed if args.seed is not None else _default_seed()
    table = moment_table(MarchenkoPastur(args.y), NoiseLaw(args.b))
    crit = critical_value(table.R, args.alpha, args.mc_samples, seed)
    doc = {
        "y": args.y, "b": args.b, "alpha": args.alpha,
        "mu": table.mu.tolist(),
        "V": [row.tolist() for row in table.V],
        "Gamma": table.Gamma.tolist(),
        "R": [row.tolist() for row in table.R],
        "z_alpha": crit.z_alpha,
        "mc_samples": crit.mc_samples,
        "seed": crit.seed,
    }
    sys.stdout.write(dumps_json(doc))
    return EXIT_ACCEPT


def _cmd_rmt(args) -> int:
    law = MarchenkoPastur(args.y)
    lo = 0.0 if args.t_min is None else args.t_min
    hi = (law.lambda_plus * 1.05) if args.t_max is None else args.t_max
    if args.points < 2 or hi <= lo:
        raise UsageError("need points >= 2 and t-max > t-min")
    xs = np.linspace(lo, hi, args.points)
    dens = mp_density(law, xs)
    cdfs = mp_cdf(law, xs)
    lines = ["x,density,cdf"]
    lines += [f"{x:.17g},{f:.17g},{F:.17g}" for x, f, F in zip(xs, dens, cdfs)]
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_ACCEPT


def _load_sim_config(path) -> dict:
    with open(path, "rb") as fh:
        raw = fh.read()
    if path.endswith(".toml"):
        try:
            import tomllib
        except ModuleNotFoundError:  # Python < 3.11
            import tomli as tomllib
        return tomllib.loads(raw.decode())
    return json.loads(raw.decode())


def _cmd_simulate(args) -> int:
    opts = {}
    if args.config:
        opts = _load_sim_config(args.config)

    def pick(name, flag):
        return opts.get(name, flag)

    cells = []
    for part in str(pick("cells", args.cells)).split(","):
        n_, d_ = part.lower().split("x")
        cells.append((int(n_), int(d_)))
    epsilons = pick("epsilons", args.epsilons)
    if isinstance(epsilons, str):
        epsilons = [float(e) for e in epsilons.split(",")]
    master = pick("master_seed", args.master_seed)
    if master is None:
        master = _default_seed()
    config = ExperimentConfig(
        model=ModelSpec(pick("model", args.model)),
        sigma=SigmaSpec(pick("family", args.family),
                        float(pick("delta", args.delta))),
        cells=tuple(cells),
        epsilons=tuple(epsilons),
        alpha=float(pick("alpha", args.alpha)),
        replications=int(pick("replications", args.replications)),
        master_seed=int(master),
        mc_samples=int(pick("mc_samples", args.mc_samples)),
        workers=int(pick("workers", args.workers)),
        common_random_numbers=bool(pick("common_random_numbers",
                                        args.common_random_numbers)),
    )
    if not args.full_scale and any(d > 1000 for _, d in config.cells):
        raise UsageError(
            "cells with d > 1000 are gated behind --full-scale")
    result = run_experiment(config)
    if args.out:
        result.to_csv(args.out)
        print(f"wrote rates to {args.out}", file=sys.stderr)
    print(result.format_table())
    print(f"wall time: {result.wall_seconds:.1f}s", file=sys.stderr)
    return EXIT_ACCEPT


def _cmd_check(args) -> int:
    with open(args.report) as fh:
        doc = json.load(fh)
    report = report_from_dict(doc)
    s, t = report.statistics, report.moment_table
    T = np.sqrt(s.K) * np.abs(s.L - t.mu) / np.sqrt(np.diag(t.V))
    problems = []
    if not np.allclose(T, s.T, rtol=1e-12, atol=1e-12):
        problems.append("standardized statistics do not match intermediates")
    if abs(max(T) - s.T_max) > 1e-12:
        problems.append("T_max does not equal max(T)")
    decision = "reject" if s.T_max > report.critical.z_alpha else "accept"
    if decision != report.decision:
        problems.append(f"stored decision {report.decision!r} but "
                        f"intermediates give {decision!r}")
    if problems:
        for msg in problems:
            print(f"check failed: {msg}", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"report consistent: decision={decision}", file=sys.stderr)
    return EXIT_ACCEPT


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        handler = {
            "test": _cmd_test,
            "calibrate": _cmd_calibrate,
            "rmt": _cmd_rmt,
            "simulate": _cmd_simulate,
            "check": _cmd_check,
        }[args.command]
        return handler(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DpcovError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
