"""Command-line interface: ``seqadjust graph|estimate|simulate``.

Exit codes: 0 success (or admissible), 1 domain-negative result (pair not
admissible, estimator not applicable), 2 usage, parse or data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import secrets
import sys
from pathlib import Path

from . import estimators as est
from .graph import AdmissiblePair, GraphError, enumerate_minimal_pairs, is_s_admissible
from .io import ColumnBinding, DataError, dumps_json, read_csv, read_graph, write_report
from .learners import SuperLearnerSpec
from .simulate import SCENARIOS, ConfigError, ScenarioConfig, run_monte_carlo

log = logging.getLogger("seqadjust")

OUTPUT_ENV = "SEQADJUST_OUTPUT_DIR"
METHODS = ("tsr", "dipw", "sr", "cd", "tmle1r", "tmlecc")
EXIT_OK, EXIT_NEGATIVE, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _trunc(text):
    v = float(text)
    if not 0 < v <= 0.2:
        raise argparse.ArgumentTypeError("must lie in (0, 0.2]")
    return v


def _at_least(k):
    def check(text):
        v = int(text)
        if v < k:
            raise argparse.ArgumentTypeError(f"must be >= {k}")
        return v
    return check


def _seed(args):
    if args.seed is not None:
        return args.seed
    seed = secrets.randbelow(2**31)
    log.warning("no --seed given; using random seed %d", seed)
    return seed


def _load_graph(path):
    try:
        return read_graph(path)
    except OSError as exc:
        raise UsageError(f"cannot read graph: {exc}") from None
    except GraphError as exc:
        raise UsageError(f"{path}: {exc}") from None


def _parse_pair(text):
    try:
        return AdmissiblePair.parse(text)
    except GraphError as exc:
        raise UsageError(str(exc)) from None


def _print_certificate(pair, cert, out):
    names = ("W avoids forbidden nodes", "Y _||_ A | W in the proper backdoor graph",
             "Y _||_ R | W, A, Z")
    print(f"pair {pair}", file=out)
    for i, (ok, label) in enumerate(zip(cert.conditions, names), start=1):
        print(f"  condition {i}: {'PASS' if ok else 'FAIL'}  {label}", file=out)
    if cert.detail:
        print(f"  {cert.detail}", file=out)
    if cert.open_path:
        print("  open path: " + " - ".join(cert.open_path), file=out)
    print("admissible" if cert.admissible else "not admissible", file=out)


def cmd_graph_check(args, out=sys.stdout):
    G = _load_graph(args.graph)
    pair = _parse_pair(args.pair)
    try:
        cert = is_s_admissible(pair, G)
    except GraphError as exc:
        raise UsageError(str(exc)) from None
    _print_certificate(pair, cert, out)
    return EXIT_OK if cert.admissible else EXIT_NEGATIVE


def cmd_graph_pairs(args, out=sys.stdout):
    G = _load_graph(args.graph)
    pairs = enumerate_minimal_pairs(G, chronological=args.chronological,
                                    minimal_only=not args.all)
    if not pairs:
        print("warning: no s-admissible pair exists for this graph", file=sys.stderr)
    if args.json:
        out.write(dumps_json({"pairs": [{"W": sorted(p.W), "Z": sorted(p.Z)} for p in pairs]})
                  .decode())
    else:
        for p in pairs:
            print(p, file=out)
    return EXIT_OK


def _reports_table(reports, skip=None):
    lines = [f"{'method':<12}{'pair':<22}{'psi':>11}{'se':>10}{'95% CI':>26}"]
    for r in reports:
        ci = f"[{r.ci[0]:.4f}, {r.ci[1]:.4f}]"
        lines.append(f"{r.method:<12}{r.pair:<22}{r.psi:>11.4f}{r.se:>10.4f}{ci:>26}")
        for w in r.warnings:
            if w == skip:
                continue
            lines.append(f"    warning: {w}")
    return "\n".join(lines)


def _failed_report(method, pair, n, exc):
    nan = float("nan")
    return est.EstimateReport(method, nan, nan, (nan, nan), n, str(pair),
                              warnings=[f"not estimated: {exc}"])


def _run_method(name, data, pair, args, seed):
    spec = SuperLearnerSpec(folds=args.folds)
    if name == "tsr":
        return est.estimate_tsr(data, pair, spec, split=args.split, trunc=args.trunc, seed=seed)
    if name == "dipw":
        return est.estimate_dipw(data, pair, spec, trunc=args.trunc, seed=seed)
    if name == "sr":
        return est.estimate_sr(data, pair, spec, bootstrap_B=args.bootstrap_B, seed=seed)
    if name == "cd":
        return est.estimate_cd_discrete(data, pair, spec, bootstrap_B=args.bootstrap_B, seed=seed)
    if name == "tmle1r":
        return est.estimate_tmle_1r(data, sorted(pair.W), spec, split=args.split,
                                    trunc=args.trunc, seed=seed)
    return est.estimate_tmle_cc(data, sorted(pair.W), spec, split=args.split, trunc=args.trunc,
                                seed=seed)


def cmd_estimate(args, out=sys.stdout):
    banner = None
    if args.graph is None:
        if not args.force or args.pair == "auto":
            raise UsageError("without --graph, pass --force and an explicit --pair")
        pair = _parse_pair(args.pair)
        banner = "admissibility not checked (--force without a graph)"
    else:
        G = _load_graph(args.graph)
        if args.pair == "auto":
            pairs = enumerate_minimal_pairs(G)
            if not pairs:
                print("no s-admissible pair exists for this graph", file=sys.stderr)
                return EXIT_NEGATIVE
            pair = pairs[0]
            log.info("auto pair: %s", pair)
        else:
            pair = _parse_pair(args.pair)
        try:
            cert = is_s_admissible(pair, G)
        except GraphError as exc:
            raise UsageError(str(exc)) from None
        if not cert.admissible:
            if not args.force:
                _print_certificate(pair, cert, sys.stderr)
                return EXIT_NEGATIVE
            banner = (f"pair {pair} is NOT s-admissible (condition {cert.failed} fails); "
                      "estimates may be biased (--force)")
    binding = ColumnBinding(sorted(pair.W), sorted(pair.Z), args.exposure,
                            None if args.selection == "none" else args.selection, args.outcome)
    try:
        data = read_csv(args.data, binding)
    except OSError as exc:
        raise UsageError(f"cannot read data: {exc}") from None
    except (DataError, est.EstimationError) as exc:
        raise UsageError(f"{args.data}: {exc}") from None
    seed = _seed(args)
    methods = METHODS if args.method == "all" else (args.method,)
    reports, failed = [], 0
    for m in methods:
        try:
            rep = _run_method(m, data, pair, args, seed)
        except est.EstimationError as exc:
            failed += 1
            rep = _failed_report(m.upper(), pair, data.n, exc)
        if banner:
            rep.warnings.insert(0, banner)
        reports.append(rep)
    if banner:
        print(f"WARNING: {banner}", file=sys.stderr)
    if args.format == "table":
        text = _reports_table(reports, skip=banner) + "\n"
        if banner:
            text = f"WARNING: {banner}\n" + text
        payload = text.encode()
    else:
        payload = write_report(reports, args.format, include_eif=args.eif)
    if args.output:
        Path(args.output).write_bytes(payload)
    else:
        out.write(payload.decode())
    return EXIT_NEGATIVE if failed == len(methods) else EXIT_OK


def _output_dir(args):
    d = args.output_dir or os.environ.get(OUTPUT_ENV) or "."
    path = Path(d)
    path.mkdir(parents=True, exist_ok=True)
    return path


def cmd_simulate(args, out=sys.stdout):
    overrides = {}
    if args.config:
        try:
            overrides = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config: {exc}") from None
        if not isinstance(overrides, dict):
            raise UsageError("config file must hold a JSON object")
    for key in ("n", "reps", "bootstrap_B", "folds", "trunc"):
        v = getattr(args, key)
        if v is not None:
            overrides[key] = v
    if args.estimators:
        overrides["estimators"] = [e.strip() for e in args.estimators.split(",") if e.strip()]
    if args.split:
        overrides["split"] = True
    if args.scenario:
        overrides["scenario"] = args.scenario
    if "scenario" not in overrides and "setup" not in overrides:
        raise UsageError("give --scenario or a config file")
    overrides.setdefault("seed", _seed(args) if args.seed is None else args.seed)
    if args.seed is not None:
        overrides["seed"] = args.seed
    try:
        cfg = ScenarioConfig.from_dict(overrides)
    except (ConfigError, TypeError) as exc:
        raise UsageError(str(exc)) from None
    log.info("running %s with seed %d", cfg.name, cfg.seed)
    summary = run_monte_carlo(cfg)
    outdir = _output_dir(args)
    stem = args.stem or f"{cfg.name}_summary"
    formats = ("json", "csv") if args.format == "both" else (args.format,)
    for fmt in formats:
        path = outdir / f"{stem}.{fmt}"
        path.write_bytes(write_report(summary, fmt))
        log.info("wrote %s", path)
    print(summary.table(), file=out)
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="seqadjust", description=(
        "Sequential adjustment for confounding and outcome attrition: graph checks, "
        "ATE estimation and simulation studies."))
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("graph", help="inspect an m-graph")
    gs = g.add_subparsers(dest="graph_command", required=True)
    c = gs.add_parser("check", help="check the three adjustment conditions for a pair")
    c.add_argument("graph", help="graph file")
    c.add_argument("--pair", required=True, help="pair as 'W1,W2|Z1,Z2'")
    c.set_defaults(func=cmd_graph_check)
    pp = gs.add_parser("pairs", help="list minimal admissible pairs")
    pp.add_argument("graph", help="graph file")
    pp.add_argument("--json", action="store_true", help="machine-readable output")
    pp.add_argument("--chronological", action="store_true",
                    help="require W in tier 0 and Z in tier 1")
    pp.add_argument("--all", action="store_true", help="list non-minimal pairs too")
    pp.set_defaults(func=cmd_graph_pairs)

    e = sub.add_parser("estimate", help="estimate the ATE from a CSV file")
    e.add_argument("--data", required=True, help="CSV file with a header row")
    e.add_argument("--graph", help="graph file used to validate the pair")
    e.add_argument("--pair", default="auto", help="'W1,W2|Z1' or 'auto' (default)")
    e.add_argument("--method", choices=METHODS + ("all",), default="tsr")
    e.add_argument("--exposure", default="A")
    e.add_argument("--outcome", default="Y")
    e.add_argument("--selection", default="R", help="selection column, or 'none' to derive it")
    e.add_argument("--split", action="store_true", help="fit on one half, evaluate on the other")
    e.add_argument("--trunc", type=_trunc, default=est.DEFAULT_TRUNC)
    e.add_argument("--folds", type=_at_least(2), default=5)
    e.add_argument("--bootstrap-B", dest="bootstrap_B", type=_at_least(10), default=200)
    e.add_argument("--seed", type=int)
    e.add_argument("--force", action="store_true",
                   help="estimate even if the pair is not admissible")
    e.add_argument("--format", choices=("table", "json", "csv"), default="table")
    e.add_argument("--eif", action="store_true", help="include influence-function values (json)")
    e.add_argument("--output", help="write to this file instead of stdout")
    e.set_defaults(func=cmd_estimate)

    s = sub.add_parser("simulate", help="run a Monte Carlo study")
    s.add_argument("--scenario", choices=sorted(SCENARIOS), metavar="NAME",
                   help="one of " + ", ".join(sorted(SCENARIOS)))
    s.add_argument("--config", help="JSON file with ScenarioConfig fields")
    s.add_argument("--n", type=_at_least(20))
    s.add_argument("--reps", type=_at_least(1))
    s.add_argument("--seed", type=int)
    s.add_argument("--folds", type=_at_least(2))
    s.add_argument("--bootstrap-B", dest="bootstrap_B", type=_at_least(10))
    s.add_argument("--trunc", type=_trunc)
    s.add_argument("--split", action="store_true")
    s.add_argument("--estimators", help="comma-separated roster labels")
    s.add_argument("--format", choices=("json", "csv", "both"), default="both")
    s.add_argument("--output-dir", help=f"output directory (default ${OUTPUT_ENV} or .)")
    s.add_argument("--stem", help="output file name without extension")
    s.set_defaults(func=cmd_simulate)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args, sys.stdout)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
