"""Command-line interface.

Subcommands: ``run`` (train and emit metrics), ``gradcheck``
(finite-difference suite), ``compare-provenances`` (accuracy/time grid
over add-mult and top-k variants), ``oracle`` (brute-force equivalence
suite), ``bench`` (batched vs sequential timing and kernel backend
comparison).  Exit codes: 0 success, 2 configuration error, 3 check
failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import bench as bench_mod
from . import checks
from .config import ConfigError, RunConfig, load_config
from .kernels import backend_name
from .learn import train
from .metrics import emit_metrics
from .tasks import build_dataset, make_task

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CHECK = 3


def _load(args) -> RunConfig:
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if getattr(args, "output_dir", None):
        cfg = dataclasses.replace(cfg, output_dir=args.output_dir)
    if getattr(args, "repeats", None) is not None:
        cfg = dataclasses.replace(cfg, repeats=args.repeats)
    return cfg


def _train_once(cfg: RunConfig, seed: int):
    run_cfg = dataclasses.replace(cfg, seed=seed)
    task = make_task(run_cfg)
    dataset = build_dataset(run_cfg)
    return train(task, run_cfg.train_config(), dataset)


def cmd_run(args) -> int:
    cfg = _load(args)
    best = []
    records = []
    for r in range(cfg.repeats):
        records = _train_once(cfg, cfg.seed + r)
        best.append(max((row["accuracy"] for row in records), default=0.0))
        for row in records:
            print(
                f"epoch {row['epoch']}: loss={row['loss']:.6f} "
                f"accuracy={row['accuracy']:.4f} ({row['epoch_seconds']:.2f}s)"
            )
    csv_path, summary_path = emit_metrics(records, cfg.output_dir)
    print(f"metrics written to {csv_path}")
    if cfg.repeats > 1:
        print(f"mean best accuracy over {cfg.repeats} repeats: {np.mean(best):.4f}")
    return EXIT_OK


def _report(results) -> int:
    failed = 0
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'} {name} ({detail})")
        failed += 0 if ok else 1
    if failed:
        print(f"{failed} of {len(results)} checks failed")
        return EXIT_CHECK
    print(f"all {len(results)} checks passed")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    cfg = _load(args)
    return _report(checks.run_gradcheck(cfg))


def cmd_oracle(args) -> int:
    cfg = _load(args)
    return _report(checks.run_oracle(cfg))


def cmd_compare(args) -> int:
    cfg = _load(args)
    ks = [int(v) for v in args.ks.split(",")] if args.ks else [1, 3, 5, 7]
    cells = [("damp", 0)] + [("dtkp", k) for k in ks]
    rows = []
    for provenance, k in cells:
        best = []
        total = 0.0
        for r in range(cfg.repeats):
            cell_cfg = dataclasses.replace(
                cfg, provenance=provenance, k=max(k, 1), seed=cfg.seed + r
            )
            records = _train_once(cell_cfg, cell_cfg.seed)
            best.append(max((row["accuracy"] for row in records), default=0.0))
            total += sum(row["epoch_seconds"] for row in records)
        rows.append(
            {
                "provenance": provenance,
                "k": k,
                "mean_best_accuracy": float(np.mean(best)),
                "total_seconds": total,
            }
        )
        print(
            f"{provenance:>5} k={k}: best accuracy "
            f"{rows[-1]['mean_best_accuracy']:.4f} "
            f"({total:.1f}s over {cfg.repeats} repeat(s))"
        )
    os.makedirs(cfg.output_dir, exist_ok=True)
    out = os.path.join(cfg.output_dir, "provenances.csv")
    with open(out, "w", encoding="utf-8") as f:
        f.write("provenance,k,mean_best_accuracy,total_seconds\n")
        for row in rows:
            f.write(
                f"{row['provenance']},{row['k']},"
                f"{row['mean_best_accuracy']!r},{row['total_seconds']!r}\n"
            )
    print(f"grid written to {out}")
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = _load(args)
    report = bench_mod.run_bench(cfg)
    bvs = report["batched_vs_sequential"]
    print(
        f"batched forward (b={bvs['batch_size']}): {bvs['batched_seconds']:.4f}s; "
        f"per-sample loop: {bvs['sequential_seconds']:.4f}s; "
        f"speedup {bvs['speedup']:.2f}x"
    )
    if "batch_scaling" in report:
        sc = report["batch_scaling"]
        print(
            f"epoch time b={sc['small_batch']}: {sc['small_seconds']:.4f}s, "
            f"b={sc['large_batch']}: {sc['large_seconds']:.4f}s "
            f"(ratio {sc['ratio']:.2f}, want < 1.5)"
        )
    kb = report["kernel_backends"]
    if "compiled_seconds" in kb:
        print(
            f"proof kernel [{kb['workload']}]: compiled "
            f"{kb['compiled_seconds']:.4f}s vs numpy {kb['numpy_seconds']:.4f}s "
            f"({kb['kernel_speedup']:.2f}x)"
        )
    else:
        print(
            f"proof kernel [{kb['workload']}]: numpy {kb['numpy_seconds']:.4f}s "
            "(compiled backend not built)"
        )
    counts = report["product_symbol_counts"]
    bad = [c for c in counts if not c["match"]]
    print(
        "product-fold symbol counts match brute force for n=1.."
        f"{counts[-1]['n']}: {'yes' if not bad else 'NO'}"
    )
    os.makedirs(cfg.output_dir, exist_ok=True)
    out = os.path.join(cfg.output_dir, "bench.json")
    with open(out, "w", encoding="utf-8") as f:
        json.dump(report, f, indent=2, default=float)
        f.write("\n")
    print(f"report written to {out}")
    if bad:
        return EXIT_CHECK
    if args.assert_speedup is not None and bvs["speedup"] < args.assert_speedup:
        print(
            f"speedup {bvs['speedup']:.2f}x below required "
            f"{args.assert_speedup:.2f}x"
        )
        return EXIT_CHECK
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="symgrad",
        description="Differentiable symbolic distributions: train and check.",
    )
    parser.add_argument(
        "--backend", action="version", version=f"kernel backend: {backend_name()}",
        help="print the active kernel backend and exit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("config", help="path to a run configuration file")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--output-dir", default=None, help="override output directory")

    p_run = sub.add_parser("run", help="train a model and emit metrics")
    common(p_run)
    p_run.add_argument("--repeats", type=int, default=None,
                       help="seeds to run; reports mean of best accuracies")
    p_run.set_defaults(func=cmd_run)

    p_grad = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    common(p_grad)
    p_grad.set_defaults(func=cmd_gradcheck)

    p_cmp = sub.add_parser(
        "compare-provenances", help="accuracy/time grid over provenances"
    )
    common(p_cmp)
    p_cmp.add_argument("--repeats", type=int, default=None)
    p_cmp.add_argument("--ks", default="1,3,5,7",
                       help="comma-separated top-k values for the proof provenance")
    p_cmp.set_defaults(func=cmd_compare)

    p_oracle = sub.add_parser("oracle", help="brute-force equivalence suite")
    common(p_oracle)
    p_oracle.set_defaults(func=cmd_oracle)

    p_bench = sub.add_parser("bench", help="batched vs sequential timing")
    common(p_bench)
    p_bench.add_argument("--assert-speedup", type=float, default=None,
                         help="fail unless batched execution is this many times faster")
    p_bench.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        code = exc.code
        return EXIT_CONFIG if code not in (0, None) else 0
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
