"""Command-line front end.

Usage::

    phsmoc run linear-example --out results
    phsmoc run my_scenario.yaml nonlinear-example --jobs 2
    phsmoc certify nonlinear-example
    phsmoc show linear-example > linear.yaml

Exit codes: 0 success, 1 runtime invariant failed, 2 parse error,
3 certification failure, 4 simulation aborted.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .adaptation import METHODS
from .scenarios import (
    BUILTIN_SCENARIOS,
    EXIT_CERTIFY,
    EXIT_OK,
    EXIT_PARSE,
    ScenarioError,
    certify,
    dump_scenario,
    load_scenario,
    run_experiment,
)

log = logging.getLogger("phsmoc")


def _positive(kind):
    def parse(text):
        try:
            value = kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected a {kind.__name__}, got {text!r}") from None
        if not value > 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text!r}")
        return value
    return parse


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="phsmoc",
        description="Adaptive optimal control of port-Hamiltonian systems.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate one or more scenarios")
    run.add_argument("scenarios", nargs="+", metavar="NAME|PATH",
                     help=f"builtin ({', '.join(BUILTIN_SCENARIOS)}) or scenario file")
    run.add_argument("--out", default="results", help="output directory (default: results)")
    run.add_argument("--seed", type=int, help="seed for certificate sampling")
    run.add_argument("--step", type=_positive(float), help="integration step [s]")
    run.add_argument("--horizon", type=_positive(float), help="simulation horizon [s]")
    run.add_argument("--method", choices=METHODS, help="weight adaptation method")
    run.add_argument("--jobs", type=_positive(int), default=1,
                     help="run independent scenarios in K processes")

    cert = sub.add_parser("certify", help="CLF certificates and convexity diagnostic")
    cert.add_argument("scenario", metavar="NAME|PATH")
    cert.add_argument("--seed", type=int, help="sampling seed")
    cert.add_argument("--out", help="write the JSON report here instead of stdout")

    show = sub.add_parser("show", help="print a scenario as YAML")
    show.add_argument("scenario", metavar="NAME|PATH")
    return parser


def _load(source, args):
    spec = load_scenario(source)
    horizon = getattr(args, "horizon", None)
    disturbances = None
    if horizon is not None:
        disturbances = [d for d in spec.disturbances if d["time"] <= horizon]
        if len(disturbances) < len(spec.disturbances):
            log.warning("%s: dropping impulses beyond the %g s horizon", spec.name, horizon)
    return spec.replace(step=getattr(args, "step", None), horizon=horizon,
                        method=getattr(args, "method", None), disturbances=disturbances)


def _run_one(source, args) -> tuple[str, int, str]:
    try:
        exp = _load(source, args).build()
    except ScenarioError as exc:
        return str(source), EXIT_PARSE, f"parse error: {exc}"
    out_dir = Path(args.out) / exp.spec.name
    res = run_experiment(exp, out_dir, args.seed)
    if res.summary is not None:
        s = res.summary
        lines = [f"terminal w = {[round(v, 6) for v in s['terminal_w']]}",
                 f"terminal upsilon = {s['terminal_upsilon']:.6g}",
                 f"total cost = {s['total_cost']:.6g}"]
        if s.get("terminal_w_distance") is not None:
            lines.append(f"|w - w*| = {s['terminal_w_distance']:.3e}")
        if s["upsilon_oscillation"]["flag"]:
            lines.append(f"upsilon oscillates (amplitude {s['upsilon_oscillation']['amplitude']:.3g})")
        drift = s["post_disturbance_w_drift"]
        if drift is not None and drift["flag"]:
            lines.append(f"weights drift after disturbance ({drift['value']:.3g})")
        for row in s["invariants"]:
            lines.append(f"  [{row['result']}] {row['name']}")
        msg = "\n".join(lines + [f"outputs in {out_dir}", res.message])
    else:
        msg = res.message
    return exp.spec.name, res.exit_code, msg


def cmd_run(args) -> int:
    if args.jobs > 1 and len(args.scenarios) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_run_one, args.scenarios, [args] * len(args.scenarios)))
    else:
        results = [_run_one(s, args) for s in args.scenarios]
    for name, code, msg in results:
        stream = sys.stdout if code == EXIT_OK else sys.stderr
        print(f"== {name} (exit {code})\n{msg}", file=stream)
    return max(code for _, code, _ in results)


def cmd_certify(args) -> int:
    try:
        exp = load_scenario(args.scenario).build()
    except ScenarioError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    report = certify(exp, args.seed)
    text = json.dumps(report, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK if report["passed"] else EXIT_CERTIFY


def cmd_show(args) -> int:
    try:
        spec = load_scenario(args.scenario)
    except ScenarioError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    sys.stdout.write(dump_scenario(spec))
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    handler = {"run": cmd_run, "certify": cmd_certify, "show": cmd_show}[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
