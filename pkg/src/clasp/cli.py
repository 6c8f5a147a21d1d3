"""Command-line entry point: run, bench, gen-data, eval, validate.

Exit status: 0 success, 1 task failure (or invalid file for ``validate``),
2 usage error.
"""
from __future__ import annotations

import argparse
import json
import sys

from .errors import ClaspError, SceneFormatError

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser():
    p = _Parser(prog="clasp", description="Closed-loop tabletop grasping pipeline")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="run episodes from a scene file or the scene generator")
    src = r.add_mutually_exclusive_group()
    src.add_argument("--scene", help="scene JSON file (one episode per object, in order)")
    src.add_argument("--gen-count", type=int, help="number of generated scenes")
    r.add_argument("--objects", type=int, default=5, help="objects per generated scene")
    r.add_argument("--reasoner", choices=("oracle", "perturbed", "remote"), default="oracle")
    r.add_argument("--endpoint", help="remote reasoner URL")
    r.add_argument("--timeout", type=float, default=5.0, help="remote reasoner deadline in seconds")
    r.add_argument("--offset-frac", type=float, default=0.6, help="perturbed reasoner displacement")
    r.add_argument("--policy", choices=("streaming", "async"), default="async")
    r.add_argument("--attempts", type=int, choices=(1, 2, 3), default=3)
    r.add_argument("--ablation", choices=("r", "rj", "prj", "prhj"), default="prhj")
    r.add_argument("--seed", type=int)
    r.add_argument("--workers", type=int, default=1)
    r.add_argument("--report", help="write the JSON report here")
    r.add_argument("--trace", help="write the JSONL event trace here")
    r.add_argument("--config", help="JSON run configuration (a report's config_echo works)")

    b = sub.add_parser("bench", help="latency benchmark, streaming vs async")
    b.add_argument("--seed", type=int)
    b.add_argument("--workers", type=int, default=1)
    b.add_argument("--report")
    b.add_argument("--trace", help="write the async JSONL trace here")

    g = sub.add_parser("gen-data", help="generate a synthetic dataset")
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--neg-ratio", type=float, default=0.25)
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True)
    g.add_argument("--objects", type=int, default=3)
    g.add_argument("--per-object", type=int, default=2)
    g.add_argument("--workers", type=int, default=1)

    e = sub.add_parser("eval", help="recompute metrics from a saved report or trace")
    e.add_argument("path")

    v = sub.add_parser("validate", help="lint a scene, dataset, report or trace file")
    v.add_argument("path")
    return p


def _print(obj):
    print(json.dumps(obj, sort_keys=True, indent=1))


def cmd_run(args):
    from . import harness
    from .orchestrator import PLACED, PipelineConfig, export_trace

    seed = harness.resolve_seed(args.seed)
    if args.config:
        with open(args.config, encoding="utf-8") as f:
            data = json.load(f)
        if args.seed is not None or "seed" not in data:
            data["seed"] = seed
        cfg = harness.RunConfig.from_dict(data)
    else:
        if args.scene is None and not args.gen_count:
            raise _Usage("give --scene or --gen-count (or --config)")
        if args.gen_count is not None and args.gen_count < 1:
            raise _Usage("--gen-count must be positive")
        pipe = PipelineConfig.ablation(args.ablation, attempts=args.attempts, policy=args.policy, seed=seed)
        cfg = harness.RunConfig(scene_file=args.scene, gen_count=args.gen_count or 0, objects=args.objects,
                                reasoner=args.reasoner, endpoint=args.endpoint, timeout=args.timeout,
                                offset_frac=args.offset_frac, pipeline=pipe, seed=seed, workers=args.workers)
    report, batch = harness.execute_run(cfg)
    if args.report:
        harness.write_report(report, args.report)
    if args.trace:
        export_trace(batch.trace, args.trace)
    summary = {k: report[k] for k in ("pick_success_rate", "task_success_rate", "mean_iou", "latency", "outcomes")}
    _print(summary)
    return EXIT_OK if all(e.outcome == PLACED for e in batch.episodes) else EXIT_FAIL


def cmd_bench(args):
    from . import harness
    from .orchestrator import PLACED, export_trace

    seed = harness.resolve_seed(args.seed)
    report, results = harness.run_bench(seed, workers=args.workers)
    if args.report:
        harness.write_report(report, args.report)
    if args.trace:
        export_trace(results["async"].trace, args.trace)
    _print(report["comparison"])
    ok = all(e.outcome == PLACED for r in results.values() for e in r.episodes)
    return EXIT_OK if ok else EXIT_FAIL


def cmd_gen_data(args):
    from . import dataforge, harness

    if args.count < 0:
        raise _Usage("--count must be non-negative")
    if not 0.0 <= args.neg_ratio <= 1.0:
        raise _Usage("--neg-ratio must lie in [0, 1]")
    seed = harness.resolve_seed(args.seed)
    cfg = dataforge.ForgeConfig(objects=args.objects, per_object=args.per_object, neg_ratio=args.neg_ratio)
    records = dataforge.generate(args.count, seed, cfg, args.workers)
    manifest = dataforge.write_dataset(records, args.out, seed)
    _print(manifest)
    return EXIT_OK


def _load_json_or_lines(path):
    with open(path, encoding="utf-8") as f:
        text = f.read()
    try:
        return json.loads(text), None
    except json.JSONDecodeError:
        return None, [json.loads(line) for line in text.splitlines() if line.strip()]


def cmd_eval(args):
    from . import harness
    from .schedule import TraceEvent, episode_durations

    doc, lines = _load_json_or_lines(args.path)
    if doc is not None and doc.get("schema") == harness.SCHEMA_ID:
        harness.validate_report(doc)
        eps = doc["episodes"]
        att = sum(e["executions"] for e in eps)
        succ = sum(e["grasps"] for e in eps)
        out = {"episodes": len(eps),
               "pick_success_rate": harness.pick_success_rate(succ, att) if att else 0.0,
               "task_success_rate": sum(e["outcome"] == "Placed" for e in eps) / len(eps),
               "latency": doc["latency"]}
        _print(out)
        return EXIT_OK
    if lines is not None:
        trace = [TraceEvent(**d) for d in lines]
        st = harness.latency_stats([d / 1000.0 for d in episode_durations(trace)])
        _print({"events": len(trace), "episodes": len({t.episode for t in trace}),
                "total_s": st["total"], "avg_s": st["mean"], "var_s2": st["variance"]})
        return EXIT_OK
    raise _Usage(f"{args.path}: neither a report nor a trace")


def cmd_validate(args):
    from . import dataforge, harness
    from .scene import load_scene

    with open(args.path, encoding="utf-8") as f:
        text = f.read()
    problems = []
    try:
        doc = json.loads(text)
    except json.JSONDecodeError:
        doc = None
    if isinstance(doc, dict) and doc.get("schema") == harness.SCHEMA_ID:
        kind = "report"
        try:
            harness.validate_report(doc)
        except Exception as e:  # jsonschema.ValidationError and friends
            problems.append(str(e).splitlines()[0])
    elif isinstance(doc, dict) and "objects" in doc:
        kind = "scene"
        try:
            load_scene(text)
        except ClaspError as e:
            problems.append(str(e))
    else:
        kind = "dataset"
        for n, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                problems.append(f"line {n}: {e.msg}")
                continue
            if "lane" in rec and "stage" in rec:
                kind = "trace"
                continue
            problems.extend(f"line {n}: {p}" for p in dataforge.validate_record(rec))
    for p in problems:
        print(f"{args.path}: {p}", file=sys.stderr)
    print(f"{args.path}: {kind} {'invalid' if problems else 'ok'}")
    return EXIT_FAIL if problems else EXIT_OK


class _Usage(Exception):
    pass


COMMANDS = {"run": cmd_run, "bench": cmd_bench, "gen-data": cmd_gen_data, "eval": cmd_eval,
            "validate": cmd_validate}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else EXIT_OK
    try:
        return COMMANDS[args.command](args)
    except _Usage as e:
        print(f"clasp {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, IsADirectoryError, PermissionError) as e:
        print(f"clasp {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, json.JSONDecodeError, SceneFormatError) as e:
        print(f"clasp {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
