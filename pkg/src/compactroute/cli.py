"""Command line entry points: build, simulate, evaluate, info.

Reports are JSON on stdout (or ``--out``), keys sorted so that the same inputs
and seed give byte-identical output.  Validation problems exit with status 1
and a ``file:line`` diagnostic; failures while constructing a cluster's
schemes exit with status 2 and name the cluster.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from fractions import Fraction
from pathlib import Path

from .config import Config, load_config
from .decomposition import TreeError, parse_tree
from .flows import FlowError, flow_ts
from .graph import DisconnectedGraphError, GraphFormatError, load_demands, load_graph, parse_graph
from .oracle import OracleError, opt_congestion
from .scheme import BundleFormatError, SchemeBundle, SchemeError, build_scheme, info, load_bundle, save_bundle
from .simulator import LoadReport, simulate, simulate_ts

logger = logging.getLogger("compactroute")


class ValidationError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def dump(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2) + "\n"


def _emit(report: dict, out: str | None) -> None:
    text = dump(report)
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _config(path: str | None) -> Config:
    try:
        return load_config(path)
    except (OSError, ValueError) as exc:
        raise ValidationError(str(exc)) from None


def _bundle(path: str) -> SchemeBundle:
    try:
        return load_bundle(path)
    except OSError as exc:
        raise ValidationError(f"{path}: {exc.strerror or exc}") from None
    except BundleFormatError as exc:
        raise ValidationError(str(exc)) from None


def _demands(path: str, n: int):
    try:
        return load_demands(path, n)
    except OSError as exc:
        raise ValidationError(f"{path}: {exc.strerror or exc}") from None


def _simulate(bundle: SchemeBundle, demands, args) -> LoadReport:
    mode = "exact" if args.exact else "monte-carlo"
    return simulate(bundle, demands, mode=mode, trials=args.trials, seed=args.seed)


def _scheme_congestion(rep: LoadReport) -> float:
    return float(rep.exact_congestion) if rep.exact_congestion is not None else rep.congestion


def cmd_build(args) -> dict:
    config = _config(args.config)
    try:
        graph = load_graph(args.graph)
    except OSError as exc:
        raise ValidationError(f"{args.graph}: {exc.strerror or exc}") from None
    if not graph.is_connected():
        raise ValidationError(f"{args.graph}:1: graph not connected")
    tree = None
    if args.tree:
        try:
            text = Path(args.tree).read_text()
        except OSError as exc:
            raise ValidationError(f"{args.tree}: {exc.strerror or exc}") from None
        tree = parse_tree(text, graph, args.tree, eps=config.epsilon, lp_threshold=config.lp_threshold)
    bundle = build_scheme(graph, tree, config)
    save_bundle(bundle, args.output)
    return dict(bundle.report, bundle=str(args.output))


def parse_distribution(text: str, n: int, source: str) -> dict[int, Fraction]:
    """``node amount`` lines."""
    out: dict[int, Fraction] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise GraphFormatError(source, lineno, "expected 'node amount'")
        try:
            v, x = int(parts[0]), Fraction(parts[1])
        except ValueError as exc:
            raise GraphFormatError(source, lineno, str(exc)) from None
        if not 0 <= v < n:
            raise GraphFormatError(source, lineno, f"node out of range 0..{n - 1}")
        if x < 0 or x.denominator != 1:
            raise GraphFormatError(source, lineno, "amount must be a non-negative integer")
        out[v] = out.get(v, Fraction(0)) + x
    return out


def _read(path: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise ValidationError(f"{path}: {exc.strerror or exc}") from None


def cmd_simulate_flow(args) -> dict:
    if not (args.source and args.target):
        raise ValidationError("flow simulation needs --source and --target")
    graph = parse_graph(_read(args.graph), args.graph)
    mu = parse_distribution(_read(args.source), graph.n, args.source)
    mu_out = parse_distribution(_read(args.target), graph.n, args.target)
    if sum(mu.values()) != sum(mu_out.values()):
        raise ValidationError(f"{args.target}:1: total differs from {args.source}")
    try:
        ts = flow_ts(graph, mu, mu_out)
    except FlowError as exc:
        raise ValidationError(str(exc)) from None
    rep = simulate_ts(ts, "exact" if args.exact else "monte-carlo", args.trials, args.seed)
    return dict(rep.to_json(), flow_congestion=float(ts.congestion), config=_config(args.config).as_dict())


def cmd_simulate(args) -> dict:
    if args.graph:
        return cmd_simulate_flow(args)
    if not (args.bundle and args.demands):
        raise ValidationError("simulate needs -b and -d (or -g, --source and --target)")
    bundle = _bundle(args.bundle)
    demands = _demands(args.demands, bundle.graph.n)
    rep = _simulate(bundle, demands, args)
    return dict(rep.to_json(), config=bundle.config.as_dict())


def cmd_evaluate(args) -> dict:
    bundle = _bundle(args.bundle)
    demands = _demands(args.demands, bundle.graph.n)
    rep = _simulate(bundle, demands, args)
    cert = opt_congestion(bundle.graph, demands, bundle.config.epsilon, bundle.config.lp_threshold)
    cong = _scheme_congestion(rep)
    ratio = cong / cert.primal if cert.primal > 0 else None
    dual_ratio = cong / cert.dual if cert.dual > 0 else None
    return {
        "scheme_congestion": cong,
        "primal_opt": cert.primal,
        "dual_lower_bound": cert.dual,
        "oracle_gap": cert.gap,
        "oracle_method": cert.method,
        "ratio": ratio,
        "dual_ratio": dual_ratio,
        "load": rep.to_json(),
        "config": bundle.config.as_dict(),
    }


def cmd_info(args) -> dict:
    bundle = _bundle(args.bundle)
    return dict(info(bundle), config=bundle.config.as_dict())


def make_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="compactroute", description="Compact oblivious routing tables.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    b = sub.add_parser("build", help="build routing tables for a graph")
    b.add_argument("-g", "--graph", required=True, help="edge list: 'u v capacity' per line")
    b.add_argument("-t", "--tree", help="decomposition tree: 'level id parent : nodes' per line")
    b.add_argument("-o", "--output", required=True, help="bundle file to write")
    b.add_argument("-c", "--config", help="key=value constants file")
    b.add_argument("--out", help="write the report here instead of stdout")
    b.set_defaults(func=cmd_build)

    for name, func, text in (("simulate", cmd_simulate, "route demands and report edge loads"),
                             ("evaluate", cmd_evaluate, "simulate and compare against the optimal flow")):
        s = sub.add_parser(name, help=text)
        s.add_argument("-b", "--bundle", required=name == "evaluate")
        s.add_argument("-d", "--demands", required=name == "evaluate", help="'u v amount' per line")
        s.add_argument("--exact", action="store_true", help="exact expected loads instead of sampling")
        s.add_argument("--trials", type=int, default=1000, help="packets per demand pair")
        s.add_argument("--seed", type=int, default=0)
        s.add_argument("--out")
        if name == "simulate":
            s.add_argument("-g", "--graph", help="simulate a single flow scheme on this graph instead")
            s.add_argument("--source", help="flow scheme input distribution: 'node amount' per line")
            s.add_argument("--target", help="flow scheme output distribution")
            s.add_argument("-c", "--config", help="key=value constants file echoed into the report")
        s.set_defaults(func=func)

    i = sub.add_parser("info", help="print the size report of a bundle")
    i.add_argument("-b", "--bundle", required=True)
    i.add_argument("--out")
    i.set_defaults(func=cmd_info)
    return p


def main(argv: list[str] | None = None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "trials", 1) < 1:
        print("compactroute: error: --trials must be positive", file=sys.stderr)
        return 1
    try:
        report = args.func(args)
    except (ValidationError, GraphFormatError, TreeError, DisconnectedGraphError, OracleError) as exc:
        print(f"compactroute: error: {exc}", file=sys.stderr)
        return 1
    except SchemeError as exc:
        print(f"compactroute: construction failed in cluster {exc.cluster}: {exc}", file=sys.stderr)
        return 2
    _emit(report, args.out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
