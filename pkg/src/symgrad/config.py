"""Run configuration: strict line-oriented key = value files.

Unknown keys are rejected outright so ablation sweeps cannot silently
typo a setting.  Keys are dotted (``train.lr``), one per line, with
``#`` comments.  Defaults follow the benchmark conventions: learning
rate 1e-3 for the digit tasks and 1e-4 for formula/path, top-k 1
everywhere except formulas (3), batch size 64.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

from .learn import TrainConfig

__all__ = ["ConfigError", "RunConfig", "parse_config", "load_config"]


class ConfigError(ValueError):
    """Malformed or inconsistent run configuration."""


def _bool(text: str) -> bool:
    if text in ("true", "1", "yes"):
        return True
    if text in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# key -> (type constructor, default); None default means "task dependent"
# or "optional".
_SCHEMA = {
    "task": (str, None),
    "provenance": (str, "damp"),
    "k": (int, None),
    "seed": (int, 0),
    "output_dir": (str, "runs/out"),
    "repeats": (int, 1),
    "sum.n": (int, 2),
    "product.n": (int, 2),
    "hwf.length": (int, 3),
    "path.nodes": (int, 5),
    "path.edge_prob": (float, 0.3),
    "toy.classes": (int, 5),
    "train.lr": (float, None),
    "train.batch_size": (int, 64),
    "train.epochs": (int, 3),
    "train.optimizer": (str, "adam"),
    "train.sample_size": (int, 0),
    "data.source": (str, "synthetic"),
    "data.train_count": (int, 2000),
    "data.test_count": (int, 400),
    "data.separation": (float, 5.0),
    "data.dim": (int, None),
    "data.mnist_train_images": (str, ""),
    "data.mnist_train_labels": (str, ""),
    "data.mnist_test_images": (str, ""),
    "data.mnist_test_labels": (str, ""),
}

_TASKS = ("sum", "product", "hwf", "path", "toy")
_TASK_LR = {"sum": 1e-3, "product": 1e-3, "toy": 1e-3, "hwf": 1e-4, "path": 1e-4}
_TASK_K = {"sum": 1, "product": 1, "toy": 1, "path": 1, "hwf": 3}
_TASK_DIM = {"sum": 784, "product": 784, "toy": 784, "hwf": 64, "path": 32}


@dataclass
class RunConfig:
    task: str
    provenance: str
    k: int
    seed: int
    output_dir: str
    repeats: int
    sum_n: int
    product_n: int
    hwf_length: int
    path_nodes: int
    path_edge_prob: float
    toy_classes: int
    lr: float
    batch_size: int
    epochs: int
    optimizer: str
    sample_size: int
    data_source: str
    train_count: int
    test_count: int
    separation: float
    dim: int
    mnist_paths: dict = field(default_factory=dict)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            lr=self.lr,
            batch_size=self.batch_size,
            epochs=self.epochs,
            provenance=self.provenance,
            k=self.k,
            seed=self.seed,
            sample_size=self.sample_size,
            optimizer=self.optimizer,
        )


def parse_config(text: str, base_dir: str = ".") -> RunConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in _SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        ctor, _ = _SCHEMA[key]
        try:
            values[key] = _bool(value) if ctor is bool else ctor(value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from exc

    task = values.get("task")
    if task is None:
        raise ConfigError("missing required key 'task'")
    if task not in _TASKS:
        raise ConfigError(f"unknown task {task!r}, expected one of {_TASKS}")
    provenance = values.get("provenance", "damp")
    if provenance not in ("damp", "dtkp"):
        raise ConfigError(f"unknown provenance {provenance!r}")

    def get(key):
        v = values.get(key, _SCHEMA[key][1])
        return v

    k = values.get("k", _TASK_K[task])
    lr = values.get("train.lr", _TASK_LR[task])
    dim = values.get("data.dim", _TASK_DIM[task])
    if k < 1:
        raise ConfigError("k must be >= 1")

    if task == "hwf" and get("hwf.length") % 2 == 0:
        raise ConfigError("hwf.length must be odd (digits alternate with operators)")
    if task == "path" and get("path.nodes") > 64:
        raise ConfigError("path.nodes must stay <= 64 for the reachability oracle")

    source = get("data.source")
    if source not in ("synthetic", "mnist"):
        raise ConfigError(f"unknown data source {source!r}")
    mnist_paths = {}
    if source == "mnist":
        for part in ("train_images", "train_labels", "test_images", "test_labels"):
            path = values.get(f"data.mnist_{part}", "")
            if not path:
                raise ConfigError(f"data.source = mnist requires data.mnist_{part}")
            full = path if os.path.isabs(path) else os.path.join(base_dir, path)
            if not os.path.exists(full):
                raise ConfigError(f"referenced path does not exist: {full}")
            mnist_paths[part] = full

    return RunConfig(
        task=task,
        provenance=provenance,
        k=k,
        seed=get("seed"),
        output_dir=get("output_dir"),
        repeats=get("repeats"),
        sum_n=get("sum.n"),
        product_n=get("product.n"),
        hwf_length=get("hwf.length"),
        path_nodes=get("path.nodes"),
        path_edge_prob=get("path.edge_prob"),
        toy_classes=get("toy.classes"),
        lr=lr,
        batch_size=get("train.batch_size"),
        epochs=get("train.epochs"),
        optimizer=get("train.optimizer"),
        sample_size=get("train.sample_size"),
        data_source=source,
        train_count=get("data.train_count"),
        test_count=get("data.test_count"),
        separation=get("data.separation"),
        dim=dim,
        mnist_paths=mnist_paths,
    )


def load_config(path: str) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, base_dir=os.path.dirname(os.path.abspath(path)))
