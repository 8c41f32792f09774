"""Timing harness: batched vs per-sample execution, batch scaling, and
compiled-vs-numpy kernel comparison.

The central performance contract is that symbol work runs once per
batch while tag algebra is vectorized, so batched execution should beat
a per-sample loop by a wide margin and epoch cost should track the
symbol-combination count, not the batch size.
"""

from __future__ import annotations

import itertools
import time

import numpy as np

from . import kernels
from .config import RunConfig
from .distribution import ProgramContext
from .tasks import build_dataset, make_task

__all__ = ["bench_batched_vs_sequential", "bench_batch_scaling",
           "bench_kernel_backends", "product_symbol_counts", "run_bench"]


def _forward(task, model, batch, tc):
    ctx = ProgramContext(tc.make_provenance())
    task.run_batch(ctx, model, batch, tc)


def bench_batched_vs_sequential(cfg: RunConfig, batch_size=64, repeats=2):
    """Forward-pass wall time: one batched run vs a per-sample loop."""
    tc = cfg.train_config()
    task = make_task(cfg)
    train_set, _ = build_dataset(cfg)
    samples = train_set[:batch_size]
    model = task.build_model(tc)
    batch = next(task.batches(samples, batch_size))
    singles = [next(task.batches([s], 1)) for s in samples]

    _forward(task, model, batch, tc)  # warm both paths
    _forward(task, model, singles[0], tc)

    batched = np.inf
    sequential = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        _forward(task, model, batch, tc)
        batched = min(batched, time.perf_counter() - t0)
        t0 = time.perf_counter()
        for single in singles:
            _forward(task, model, single, tc)
        sequential = min(sequential, time.perf_counter() - t0)
    return {
        "batch_size": batch_size,
        "batched_seconds": batched,
        "sequential_seconds": sequential,
        "speedup": sequential / batched if batched > 0 else np.inf,
    }


def bench_batch_scaling(cfg: RunConfig, small=64, large=128):
    """Per-epoch forward+backward time at two batch sizes, same samples."""
    tc = cfg.train_config()
    task = make_task(cfg)
    train_set, _ = build_dataset(cfg)
    samples = train_set[: large * 4]
    model = task.build_model(tc)

    def epoch_time(bsize):
        total = 0.0
        for batch in task.batches(samples, bsize):
            t0 = time.perf_counter()
            ctx = ProgramContext(tc.make_provenance())
            loss, _, _ = task.run_batch(ctx, model, batch, tc)
            ctx.tape.backward(loss)
            total += time.perf_counter() - t0
        return total

    epoch_time(small)  # warm
    t_small = epoch_time(small)
    t_large = epoch_time(large)
    return {
        "samples": len(samples),
        "small_batch": small,
        "large_batch": large,
        "small_seconds": t_small,
        "large_seconds": t_large,
        "ratio": t_large / t_small if t_small > 0 else np.inf,
    }


def bench_kernel_backends(batch=64, combos=200, k=3, width=48, repeats=3, seed=0):
    """Compiled vs numpy dedup/top-k on a realistic proof workload."""
    rng = np.random.default_rng(seed)
    M = batch * combos
    rows = k * k
    member = (rng.uniform(size=(M, rows, width)) < 0.15).astype(np.uint8)
    present = (rng.uniform(size=(M, rows)) < 0.9).astype(np.uint8)
    member &= present[:, :, None]
    p = rng.uniform(0.05, 0.95, size=(M, width))

    timings = {"workload": f"M={M} rows={rows} width={width} k={k}"}
    if kernels.backend_name() == "compiled":
        from symgrad import _dtkpcore

        best = np.inf
        for _ in range(repeats):
            t0 = time.perf_counter()
            _dtkpcore.dedup_topk(member, present, p, k)
            best = min(best, time.perf_counter() - t0)
        timings["compiled_seconds"] = best
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        kernels.dedup_topk_numpy(member, present, p, k)
        best = min(best, time.perf_counter() - t0)
    timings["numpy_seconds"] = best
    if "compiled_seconds" in timings:
        timings["kernel_speedup"] = timings["numpy_seconds"] / timings["compiled_seconds"]
    return timings


def product_symbol_counts(max_n=6):
    """Distinct product-fold symbol counts vs brute-force enumeration."""
    from .programs import product_n
    from .distribution import make_distribution
    from .provenance import Damp

    rows = [[0.1] * 10]
    out = []
    for n in range(1, max_n + 1):
        ctx = ProgramContext(Damp())
        dists = [
            make_distribution(ctx, rows, list(range(10))) for _ in range(n)
        ]
        fold = product_n(ctx, dists)
        brute = set()
        for combo in itertools.product(range(10), repeat=n):
            value = 1
            for c in combo:
                value *= c
            brute.add(value)
        out.append(
            {"n": n, "fold_symbols": len(fold.symbols), "brute_force": len(brute),
             "match": set(fold.symbols) == brute}
        )
    return out


def run_bench(cfg: RunConfig):
    """Full bench report for a config; speedup asserted by the caller."""
    import dataclasses

    report = {}
    report["batched_vs_sequential"] = bench_batched_vs_sequential(cfg)
    if cfg.task == "sum":
        # Batch scaling is probed on the 4-digit fold, where tag work is
        # substantial but the combination count stays fixed.
        scaling_cfg = dataclasses.replace(cfg, sum_n=4)
        report["batch_scaling"] = bench_batch_scaling(scaling_cfg)
    report["kernel_backends"] = bench_kernel_backends()
    report["product_symbol_counts"] = product_symbol_counts()
    return report
