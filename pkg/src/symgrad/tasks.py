"""Task adapters: datasets, perception, and programs wired for training.

Each task turns raw samples into batched arrays, runs perception and the
symbolic program inside a fresh context, and reports the loss plus
exact-match counts.  Predictions are argmax over the program output's
symbols (threshold 0.5 for the binary path task).
"""

from __future__ import annotations

from fractions import Fraction

import numpy as np

from . import datasets
from . import tensor as T
from .config import RunConfig
from .distribution import get_probs, make_distribution, sample_symbols
from .learn import Mlp, loss_bce, loss_nll
from .programs import (
    Coord,
    TOKEN_ALPHABET,
    equality_toy,
    hwf,
    path_closure,
    product_n,
    sum_n,
)

__all__ = ["make_task", "build_dataset", "SumTask", "ProductTask",
           "HwfTask", "PathTask", "ToyTask"]

DIGITS = list(range(10))


def _chunks(samples, size):
    for start in range(0, len(samples), size):
        yield samples[start : start + size]


def _argmax_symbols(symbols, probs: np.ndarray):
    idx = probs.argmax(axis=1)
    return [symbols[i] for i in idx]


class _DigitFoldTask:
    """Shared machinery for the sum and product folds."""

    def __init__(self, n_digits: int, dim: int):
        self.n_digits = n_digits
        self.dim = dim

    def build_model(self, config) -> Mlp:
        return Mlp(self.dim, 128, 10, seed=config.seed)

    def batches(self, samples, batch_size):
        for chunk in _chunks(samples, batch_size):
            feats = np.stack([s[0] for s in chunk], axis=1)  # (N, b, dim)
            labels = [self._target(s[1]) for s in chunk]
            yield feats, labels

    def run_batch(self, ctx, model, batch, config):
        feats, labels = batch
        dists = []
        for i in range(self.n_digits):
            probs = model.forward(ctx.tape, feats[i])
            d = make_distribution(ctx, probs, DIGITS)
            if config.sample_size:
                d = sample_symbols(d, config.sample_size, seed=config.seed)
            dists.append(d)
        out = self._fold(ctx, dists)
        probs = get_probs(out)
        targets = [out.find(label) for label in labels]
        loss = loss_nll(probs, targets)
        preds = _argmax_symbols(out.symbols, probs.data)
        ncorrect = sum(p == t for p, t in zip(preds, labels))
        return loss, ncorrect, len(labels)


class SumTask(_DigitFoldTask):
    name = "sum"

    def _target(self, digit_labels):
        return sum(digit_labels)

    def _fold(self, ctx, dists):
        return sum_n(ctx, dists)


class ProductTask(_DigitFoldTask):
    name = "product"

    def _target(self, digit_labels):
        value = 1
        for d in digit_labels:
            value *= d
        return value

    def _fold(self, ctx, dists):
        return product_n(ctx, dists)


class HwfTask:
    name = "hwf"

    def __init__(self, length: int, dim: int):
        self.length = length
        self.dim = dim

    def build_model(self, config) -> Mlp:
        return Mlp(self.dim, 128, len(TOKEN_ALPHABET), seed=config.seed)

    def batches(self, samples, batch_size):
        for chunk in _chunks(samples, batch_size):
            feats = np.stack([s[0] for s in chunk], axis=1)  # (L, b, dim)
            values = [Fraction(s[2]) for s in chunk]
            yield feats, values

    def run_batch(self, ctx, model, batch, config):
        feats, values = batch
        slots = []
        for i in range(self.length):
            probs = model.forward(ctx.tape, feats[i])
            d = make_distribution(ctx, probs, list(TOKEN_ALPHABET))
            if config.sample_size:
                d = sample_symbols(d, config.sample_size, seed=config.seed)
            slots.append(d)
        out = hwf(ctx, slots, self.length)
        probs = get_probs(out)
        targets = [out.find(v) for v in values]
        loss = loss_nll(probs, targets)
        preds = _argmax_symbols(out.symbols, probs.data)
        ncorrect = sum(p == t for p, t in zip(preds, values))
        return loss, ncorrect, len(values)


class PathTask:
    name = "path"

    def __init__(self, nodes: int, dim: int):
        self.nodes = nodes
        self.dim = dim
        self.pairs = datasets.all_edges(nodes)

    def build_model(self, config) -> Mlp:
        return Mlp(self.dim, 64, 2, seed=config.seed)

    def batches(self, samples, batch_size):
        for chunk in _chunks(samples, batch_size):
            feats = np.stack([s[0] for s in chunk], axis=0)  # (b, E, dim)
            queries = [s[1] for s in chunk]
            labels = np.array([1.0 if s[2] else 0.0 for s in chunk])
            yield feats, queries, labels

    def run_batch(self, ctx, model, batch, config):
        feats, queries, labels = batch
        b, n_edges, dim = feats.shape
        flat = feats.reshape(b * n_edges, dim)
        edge_probs = model.forward(ctx.tape, flat)
        present = T.reshape(
            T.select_rows(edge_probs, [1], axis=1), (b, n_edges)
        )
        edges = make_distribution(
            ctx, present, [Coord(a, c) for a, c in self.pairs]
        )
        closure = path_closure(ctx, edges)
        probs = get_probs(closure)
        onehot = np.zeros((b, len(closure.symbols)))
        for i, (u, v) in enumerate(queries):
            pos = closure.find(Coord(u, v))
            if pos is not None:
                onehot[i, pos] = 1.0
        picked = T.reduce_sum(T.mul(probs, T.Tensor(onehot)), axis=1)
        loss = loss_bce(picked, labels)
        preds = picked.data >= 0.5
        ncorrect = int((preds == labels.astype(bool)).sum())
        return loss, ncorrect, b


class ToyTask:
    """Pairwise-equality program over one classifier distribution."""

    name = "toy"

    def __init__(self, classes: int, dim: int):
        self.classes = classes
        self.dim = dim

    def build_model(self, config) -> Mlp:
        return Mlp(self.dim, 64, self.classes, seed=config.seed)

    def batches(self, samples, batch_size):
        for chunk in _chunks(samples, batch_size):
            yield (np.stack([s[0] for s in chunk], axis=0),)

    def run_batch(self, ctx, model, batch, config):
        (feats,) = batch
        probs = model.forward(ctx.tape, feats)
        d = make_distribution(ctx, probs, list(range(self.classes)))
        out = equality_toy(ctx, d)
        out_probs = get_probs(out)
        targets = [out.find(True)] * feats.shape[0]
        loss = loss_nll(out_probs, targets)
        preds = _argmax_symbols(out.symbols, out_probs.data)
        ncorrect = sum(1 for p in preds if p is True)
        return loss, ncorrect, feats.shape[0]


def make_task(cfg: RunConfig):
    if cfg.task == "sum":
        return SumTask(cfg.sum_n, cfg.dim)
    if cfg.task == "product":
        return ProductTask(cfg.product_n, cfg.dim)
    if cfg.task == "hwf":
        return HwfTask(cfg.hwf_length, cfg.dim)
    if cfg.task == "path":
        return PathTask(cfg.path_nodes, cfg.dim)
    if cfg.task == "toy":
        return ToyTask(cfg.toy_classes, cfg.dim)
    raise ValueError(f"unknown task {cfg.task!r}")


def _group_digits(images, labels, n_digits):
    count = len(labels) // n_digits
    samples = []
    for i in range(count):
        sl = slice(i * n_digits, (i + 1) * n_digits)
        samples.append((images[sl], tuple(labels[sl])))
    return samples


def build_dataset(cfg: RunConfig):
    """(train samples, eval samples) for a run configuration."""
    if cfg.task in ("sum", "product"):
        n = cfg.sum_n if cfg.task == "sum" else cfg.product_n
        if cfg.data_source == "mnist":
            images, labels = datasets.parse_idx(
                cfg.mnist_paths["train_images"], cfg.mnist_paths["train_labels"]
            )
            test_images, test_labels = datasets.parse_idx(
                cfg.mnist_paths["test_images"], cfg.mnist_paths["test_labels"]
            )
            train = _group_digits(images, labels, n)[: cfg.train_count]
            test = _group_digits(test_images, test_labels, n)[: cfg.test_count]
            return train, test
        train = datasets.gen_sum_samples(
            n, cfg.train_count, cfg.separation, cfg.seed, cfg.dim,
            means_seed=cfg.seed,
        )
        test = datasets.gen_sum_samples(
            n, cfg.test_count, cfg.separation, cfg.seed + 10_000, cfg.dim,
            means_seed=cfg.seed,
        )
        return train, test
    if cfg.task == "hwf":
        train = datasets.gen_hwf_dataset(
            cfg.hwf_length, cfg.train_count, cfg.seed, cfg.dim, cfg.separation,
            means_seed=cfg.seed,
        )
        test = datasets.gen_hwf_dataset(
            cfg.hwf_length, cfg.test_count, cfg.seed + 10_000, cfg.dim,
            cfg.separation, means_seed=cfg.seed,
        )
        return train, test
    if cfg.task == "path":
        train = datasets.gen_path_dataset(
            cfg.path_nodes, cfg.path_edge_prob, cfg.train_count,
            cfg.seed, cfg.dim, cfg.separation, means_seed=cfg.seed,
        )
        test = datasets.gen_path_dataset(
            cfg.path_nodes, cfg.path_edge_prob, cfg.test_count,
            cfg.seed + 10_000, cfg.dim, cfg.separation, means_seed=cfg.seed,
        )
        return train, test
    if cfg.task == "toy":
        train = datasets.gen_sum_samples(
            1, cfg.train_count, cfg.separation, cfg.seed, cfg.dim,
            classes=cfg.toy_classes, means_seed=cfg.seed,
        )
        test = datasets.gen_sum_samples(
            1, cfg.test_count, cfg.separation, cfg.seed + 10_000, cfg.dim,
            classes=cfg.toy_classes, means_seed=cfg.seed,
        )
        return ([(s[0][0],) for s in train], [(s[0][0],) for s in test])
    raise ValueError(f"unknown task {cfg.task!r}")
