"""Metrics records, CSV/JSON emission, and reading back.

The CSV schema is the interchange contract:
``epoch,loss,accuracy,epoch_seconds,provenance,k,seed`` with
full-precision decimal floats, UTF-8, newline-terminated rows.
``summary.json`` carries the aggregate (best accuracy, total time).
Writes are idempotent overwrites.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

__all__ = ["MetricsRecord", "emit_metrics", "read_metrics", "CSV_HEADER"]

CSV_HEADER = "epoch,loss,accuracy,epoch_seconds,provenance,k,seed"


@dataclass
class MetricsRecord:
    epoch: int
    loss: float
    accuracy: float
    epoch_seconds: float
    provenance: str
    k: int
    seed: int

    @classmethod
    def from_dict(cls, d) -> "MetricsRecord":
        return cls(
            epoch=int(d["epoch"]),
            loss=float(d["loss"]),
            accuracy=float(d["accuracy"]),
            epoch_seconds=float(d["epoch_seconds"]),
            provenance=str(d["provenance"]),
            k=int(d["k"]),
            seed=int(d["seed"]),
        )


def _normalize(records):
    out = [
        r if isinstance(r, MetricsRecord) else MetricsRecord.from_dict(r)
        for r in records
    ]
    for i, r in enumerate(out):
        if r.epoch != i:
            raise ValueError(
                f"epochs must be contiguous from 0, found {r.epoch} at row {i}"
            )
    return out


def emit_metrics(records, out_dir):
    """Write metrics.csv and summary.json; returns their paths."""
    records = _normalize(records)
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, "metrics.csv")
    with open(csv_path, "w", encoding="utf-8", newline="") as f:
        f.write(CSV_HEADER + "\n")
        for r in records:
            f.write(
                f"{r.epoch},{r.loss!r},{r.accuracy!r},{r.epoch_seconds!r},"
                f"{r.provenance},{r.k},{r.seed}\n"
            )
    summary = {
        "epochs": len(records),
        "best_accuracy": max((r.accuracy for r in records), default=0.0),
        "final_loss": records[-1].loss if records else None,
        "total_seconds": sum(r.epoch_seconds for r in records),
        "provenance": records[-1].provenance if records else None,
        "k": records[-1].k if records else None,
        "seed": records[-1].seed if records else None,
    }
    summary_path = os.path.join(out_dir, "summary.json")
    with open(summary_path, "w", encoding="utf-8") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
    return csv_path, summary_path


def read_metrics(path):
    """Parse a metrics.csv back into records."""
    with open(path, "r", encoding="utf-8") as f:
        lines = [line.rstrip("\n") for line in f if line.strip()]
    if not lines or lines[0] != CSV_HEADER:
        raise ValueError(f"{path}: unexpected header {lines[:1]!r}")
    records = []
    for line in lines[1:]:
        epoch, loss, acc, secs, prov, k, seed = line.split(",")
        records.append(
            MetricsRecord(int(epoch), float(loss), float(acc), float(secs),
                          prov, int(k), int(seed))
        )
    return records
