"""Command-line entry point: gen-data, train, check, report.

Exit codes: 0 success, 1 runtime or experiment failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import statistics
import sys
from collections import defaultdict
from pathlib import Path

import numpy as np

from .counting import PatternKind, count_pattern
from .graphs import (SUBGRAPH_KINDS, DatasetFormatError, GraphError, gen_csl, gen_subgraph_task, read_jsonl,
                     write_jsonl)
from .model import ConfigError, ModelConfig, save_checkpoint
from .train import CSV_HEADER, MetricReport, TrainConfig, TrainingDiverged, counting_dataset, train
from .wl import spectrally_distinct, wl_equivalent

log = logging.getLogger("engnn")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
SEED_ENV = "ENGNN_SEED"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# ------------------------------------------------------------------ gen-data

def _parse_task(task: str):
    kind, _, arg = task.partition(":")
    if kind == "count":
        try:
            return kind, PatternKind(arg)
        except ValueError:
            raise UsageError(f"unknown pattern {arg!r}; choose from {[p.value for p in PatternKind]}") from None
    if kind == "subgraph":
        if arg not in SUBGRAPH_KINDS:
            raise UsageError(f"unknown subgraph task {arg!r}; choose from {list(SUBGRAPH_KINDS)}")
        return kind, arg
    if task == "csl-pairs":
        return task, None
    raise UsageError(f"unknown task {task!r}")


def build_dataset(task: str, n: int, count: int, seed: int, p: float = 0.3):
    kind, arg = _parse_task(task)
    if kind == "count":
        return counting_dataset(count, n, p, arg, seed)
    if kind == "subgraph":
        return gen_subgraph_task(arg, n, count, seed)
    g, h = gen_csl(n, 2), gen_csl(n, 3)
    if not wl_equivalent(g, h):
        raise GraphError("CSL pair is not 1-WL equivalent")
    if not spectrally_distinct(g, h):
        raise GraphError("CSL pair is not spectrally distinct")
    g.y, h.y = 0, 1
    return [g, h]


def cmd_gen_data(args) -> int:
    if args.n < 1 or args.count < 1:
        raise UsageError("--n and --count must be positive")
    graphs = build_dataset(args.task, args.n, args.count, args.seed, args.p)
    write_jsonl(args.out, graphs)
    if args.task == "csl-pairs":
        print(f"wrote 2 records to {args.out}; 1-WL equivalent: yes; spectrally distinct: yes")
        return EXIT_OK
    ys = np.concatenate([np.atleast_1d(np.asarray(g.y, dtype=np.float64)) for g in graphs])
    print(f"wrote {len(graphs)} records to {args.out}; labels: min {ys.min():g} max {ys.max():g} "
          f"mean {ys.mean():.4g} std {ys.std():.4g}")
    return EXIT_OK


# --------------------------------------------------------------------- train

RUN_SECTIONS = {"model", "train", "data", "output"}
DATA_KEYS = {"task", "n", "count", "p", "seed", "path"}
OUTPUT_KEYS = {"dir", "run_id"}


def load_run_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ConfigError("run config must be a JSON object")
    unknown = set(doc) - RUN_SECTIONS
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    for section, keys in (("data", DATA_KEYS), ("output", OUTPUT_KEYS)):
        bad = set(doc.get(section, {})) - keys
        if bad:
            raise ConfigError(f"unknown {section} keys: {sorted(bad)}")
    model = ModelConfig.from_dict(doc.get("model", {}))
    tcfg = TrainConfig.from_dict(doc.get("train", {}))
    if tcfg.epochs < 1:
        raise ConfigError("train.epochs must be >= 1")
    data = dict(doc.get("data", {}))
    if "path" not in data and "task" not in data:
        raise ConfigError("data needs either a path or a task")
    if "path" not in data and "seed" not in data:
        raise ConfigError("data.seed must be given explicitly")
    if "seed" not in doc.get("train", {}):
        raise ConfigError("train.seed must be given explicitly")
    output = dict(doc.get("output", {}))
    if "dir" not in output:
        raise ConfigError("output.dir is required")
    env = os.environ.get(SEED_ENV)
    if env is not None:
        try:
            tcfg.seed = int(env)
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer") from None
    return model, tcfg, data, output


def cmd_train(args) -> int:
    try:
        model, tcfg, data, output = load_run_config(args.config)
        if "path" in data:
            graphs = read_jsonl(data["path"])
        else:
            graphs = build_dataset(data["task"], data.get("n", 16), data.get("count", 100), data["seed"],
                                   data.get("p", 0.3))
    except (ConfigError, DatasetFormatError, GraphError, UsageError, OSError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    out_dir = Path(output["dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    run_id = output.get("run_id", "run")
    task = data.get("task", Path(data.get("path", "data")).stem)
    try:
        result = train(model, tcfg, graphs, run_id=run_id, task=task)
    except TrainingDiverged as exc:
        print(f"error: training diverged at epoch {exc.epoch}", file=sys.stderr)
        return EXIT_FAIL
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    save_checkpoint(out_dir / "checkpoint.json", model, result.params,
                    extra={"best_epoch": result.best_epoch, "target_shift": result.shift,
                           "target_scale": result.scale, "train": tcfg.to_dict()})
    result.history.write_csv(out_dir / "metrics.csv")
    for (split, metric), v in sorted(result.final.items()):
        print(f"{split:5s} {metric:8s} {v:.6g}")
    return EXIT_OK


# --------------------------------------------------------------------- check

def cmd_check(args) -> int:
    from . import audit

    if args.trials < 1:
        raise UsageError("--trials must be positive")
    if args.what == "equivariance":
        rng = np.random.default_rng(args.seed)
        worst = 0.0
        for t in range(args.trials):
            res = audit.equivariance_trial(rng)
            worst = max(worst, max(res.values()))
            print(f"trial {t:3d} " + " ".join(f"{k}={v:.3e}" for k, v in res.items()))
        ok = worst < 1e-6
        print(f"max residual {worst:.3e}")
    elif args.what == "gradients":
        res = audit.check_gradients(args.trials, args.seed)
        for t, v in enumerate(res.values):
            print(f"trial {t:3d} max relative error {v:.3e}")
        print(res.detail)
        ok = res.passed
    elif args.what == "expectation":
        res = audit.check_expectation(args.trials, args.seed)
        for t, v in enumerate(res.values):
            print(f"pair {t:3d} max z {v:.3f}")
        ok = res.passed
    else:
        res, rows = audit.check_covering(args.trials, args.seed)
        print("C,radius,n_raw,n_perm,ratio")
        for r in rows:
            print(f"{r['C']},{r['radius']:.4f},{r['n_raw']},{r['n_perm']},{r['ratio']:.4f}")
        ok = res.passed
    print("PASS" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_FAIL


# -------------------------------------------------------------------- report

def aggregate(reports: list[MetricReport]) -> list[dict]:
    """Median over seeds of each final (non-history) metric per task, variant, split and metric."""
    groups = defaultdict(list)
    for rep in reports:
        for r in rep.rows:
            if "@" in r["run_id"]:
                continue  # per-epoch history row
            groups[(r["task"], r["variant"], r["split"], r["metric"])].append(r["value"])
    return [{"task": k[0], "variant": k[1], "split": k[2], "metric": k[3],
             "median": statistics.median(v), "n": len(v)} for k, v in sorted(groups.items())]


def cmd_report(args) -> int:
    if not args.inputs:
        raise UsageError("report needs at least one input")
    reports = []
    for path in args.inputs:
        try:
            reports.append(MetricReport.read_csv(path))
        except ValueError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_USAGE
    if args.merged:
        MetricReport([r for rep in reports for r in rep.rows]).write_csv(args.merged)
    rows = aggregate(reports)
    widths = [max(len(str(r[k])) for r in rows + [dict(zip(("task", "variant", "split", "metric"),
                                                           ("task", "variant", "split", "metric")))])
              for k in ("task", "variant", "split", "metric")]
    head = ["task", "variant", "split", "metric"]
    print("  ".join(h.ljust(w) for h, w in zip(head, widths)) + "  median      n")
    for r in rows:
        print("  ".join(str(r[k]).ljust(w) for k, w in zip(head, widths)) + f"  {r['median']:<10.6g}  {r['n']}")
    return EXIT_OK


# ---------------------------------------------------------------------- main

def make_parser():
    p = _Parser(prog="engnn", description="Equivariant noise GNN toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="generate a synthetic JSONL dataset")
    g.add_argument("--task", required=True, help="count:<pattern> | subgraph:<kind> | csl-pairs")
    g.add_argument("--n", type=int, default=16, help="nodes per graph (base graph size for subgraph tasks)")
    g.add_argument("--count", type=int, default=100, help="number of records")
    g.add_argument("--p", type=float, default=0.3, help="edge probability for counting graphs")
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a model from a JSON run config")
    t.add_argument("--config", required=True)
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("check", help="numerical self-checks")
    c.add_argument("--what", required=True, choices=["equivariance", "gradients", "covering", "expectation"])
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--trials", type=int, default=None)
    c.set_defaults(func=cmd_check)

    r = sub.add_parser("report", help="median-over-seeds table from metric CSVs")
    r.add_argument("--inputs", nargs="*", default=[])
    r.add_argument("--merged", help="also write the concatenated rows here")
    r.set_defaults(func=cmd_report)
    return p


DEFAULT_TRIALS = {"equivariance": 100, "gradients": 1, "covering": 1, "expectation": 10}


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if args.cmd == "check" and args.trials is None:
            args.trials = DEFAULT_TRIALS[args.what]
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (GraphError, DatasetFormatError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
