"""Command-line front end.

Exit codes: 0 success, 2 oracle violation, 3 configuration or input error.
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import Optional, Sequence

from .adapter import Adapter, DimensionMismatch, LEVELS, load_weights, sample_batch
from .analyzer import (
    AnalysisResult,
    EmptyRegistry,
    analyze,
    build_static_graph,
    export_dot,
    find_dangerous_structures,
    load_templates,
)
from .core import IsolationLevel, Key, MalformedRecord, read_history, write_history
from .harness import ConfigError, WorkloadConfig, scenario_example3, simulate
from .oracle import InconsistentHistory, build_dsg, check_serializable, find_vulnerable_violations
from .workloads import generate_smallbank_templates, generate_ycsb_templates

EXIT_OK = 0
EXIT_VIOLATION = 2
EXIT_CONFIG = 3


def _config(args) -> WorkloadConfig:
    cfg = WorkloadConfig.load(args.config) if getattr(args, "config", None) else WorkloadConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg.validate()


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text if text.endswith("\n") else text + "\n")
    else:
        print(text)


def cmd_analyze(args) -> int:
    if args.templates:
        registry = load_templates(args.templates)
    elif args.benchmark == "ycsb":
        registry = generate_ycsb_templates()[0]
    else:
        registry = generate_smallbank_templates()
    level = IsolationLevel.parse(args.level)
    g = build_static_graph(registry)
    result: AnalysisResult = analyze(registry)
    if args.dot:
        with open(args.dot, "w", encoding="utf-8") as fh:
            fh.write(export_dot(g, level))
    structures = find_dangerous_structures(g, level)
    payload = {
        "level": level.value,
        "templates": list(g.vertices),
        "dangerous_structures": [[f"{e.src}->{e.dst}" for e in s] for s in structures],
        "vulnerable": [
            {"reader": p.reader_template, "writer": p.writer_template, "relations": list(p.relations)}
            for p in result.for_level(level).pairs
        ],
    }
    _emit(json.dumps(payload, indent=2), args.out)
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _config(args)
    result = simulate(cfg)
    if args.out:
        write_history(args.out, result.history)
    verdict = check_serializable(build_dsg(result.history))
    print(result.metrics.to_json())
    print(json.dumps({"serializable": verdict.serializable, "witness": verdict.witness_json()}))
    return EXIT_OK if verdict.serializable else EXIT_VIOLATION


def cmd_check(args) -> int:
    history = read_history(args.history)
    verdict = check_serializable(build_dsg(history))
    payload = {"serializable": verdict.serializable}
    if args.witness and not verdict.serializable:
        payload["witness"] = verdict.witness_json()
    if args.level:
        level = IsolationLevel.parse(args.level)
        payload["inverted_vulnerable"] = [
            {"reader": i, "writer": j, "key": str(k)} for i, j, k in find_vulnerable_violations(history, level)
        ]
    _emit(json.dumps(payload), args.out)
    return EXIT_OK if verdict.serializable else EXIT_VIOLATION


def cmd_predict(args) -> int:
    history = read_history(args.history)
    weights = load_weights(args.weights) if args.weights else None
    current = IsolationLevel.parse(args.current) if args.current else None
    adapter = Adapter(args.batch, args.seed or 0, weights)
    batch = sample_batch(history, args.batch, args.seed or 0)
    if weights is not None:
        rels = sorted({op.key.relation for rec in history for op in rec.ops})
        if len(rels) != weights.dims[4]:
            raise DimensionMismatch(f"history has {len(rels)} relations, weights expect {weights.dims[4]}")
        adapter.relations = tuple(rels)
    pred = adapter.predict(batch, current)
    payload = {
        "batch": len(batch),
        "probs": {lvl.value: float(p) for lvl, p in zip(LEVELS, pred.probs)},
        "chosen": pred.chosen.value,
        "predictor": "weights" if weights is not None else "heuristic",
    }
    _emit(json.dumps(payload), args.out)
    return EXIT_OK


def cmd_transition_demo(args) -> int:
    if args.scenario != "example3":
        raise ConfigError(f"unknown scenario {args.scenario!r}")
    old, new = IsolationLevel.parse(args.from_level), IsolationLevel.parse(args.to_level)
    lines = []
    for civ in (True, False):
        res = scenario_example3(civ_enabled=civ, old=old, new=new)
        lines.append(f"CIV {'on' if civ else 'off'}: {res.message}")
    _emit("\n".join(lines), args.out)
    return EXIT_OK


def cmd_dump(args) -> int:
    cfg = _config(args)
    result = simulate(cfg)
    keys = None
    if args.keys:
        keys = []
        for item in args.keys.split(","):
            rel, _, ident = item.strip().partition("/")
            if not ident.isdigit():
                raise ConfigError(f"bad key {item!r}, expected relation/id")
            keys.append(Key(rel, int(ident)))
    _emit(result.engine.dump(keys).rstrip("\n"), args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="JSON file with WorkloadConfig fields")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--out", default=argparse.SUPPRESS, help="output file")

    parser = argparse.ArgumentParser(prog="isoflex", parents=[common],
                                     description="Serializable transactions over low isolation levels.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", parents=[common], help="static dependency analysis")
    p.add_argument("--templates", help="template registry JSON (default: SmallBank)")
    p.add_argument("--benchmark", choices=["smallbank", "ycsb"], default="smallbank")
    p.add_argument("--level", default="rc", choices=["rc", "si", "RC", "SI"])
    p.add_argument("--dot", help="write the graph in DOT format")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("run", parents=[common], help="run a workload and check its history")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("check", parents=[common], help="check a history log for serializability")
    p.add_argument("--history", required=True)
    p.add_argument("--level", choices=["rc", "si", "RC", "SI"])
    p.add_argument("--witness", action="store_true")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("predict", parents=[common], help="predict the best isolation level for a history")
    p.add_argument("--history", required=True)
    p.add_argument("--batch", type=int, default=512)
    p.add_argument("--weights")
    p.add_argument("--current", help="current level, used to break ties")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("transition-demo", parents=[common], help="replay the cross-isolation scenario")
    p.add_argument("--from", dest="from_level", default="ser")
    p.add_argument("--to", dest="to_level", default="rc")
    p.add_argument("--scenario", default="example3")
    p.set_defaults(func=cmd_transition_demo)

    p = sub.add_parser("dump", parents=[common], help="run a workload and print version chains")
    p.add_argument("--keys", help="comma-separated relation/id list (default: every touched key)")
    p.set_defaults(func=cmd_dump)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for name in ("config", "seed", "out"):
        if not hasattr(args, name):
            setattr(args, name, None)
    try:
        return args.func(args)
    except (ConfigError, MalformedRecord, InconsistentHistory, DimensionMismatch, EmptyRegistry) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
