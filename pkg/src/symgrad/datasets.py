"""Dataset ingestion and synthetic generation.

IDX is the big-endian container used by the classic digit corpus: a
magic number (2051 for image files, 2049 for label files), 32-bit
dimension extents, then raw unsigned bytes.  Synthetic generators build
Gaussian class clusters so the whole suite runs without external data;
every generator is a pure function of its configuration and seed.
"""

from __future__ import annotations

import struct
from fractions import Fraction

import numpy as np

from .programs import OPERATOR_TOKENS, TOKEN_ALPHABET, reference_formula_eval

__all__ = [
    "IdxFormatError",
    "IdxBadMagic",
    "IdxTruncated",
    "IdxCountMismatch",
    "parse_idx_images",
    "parse_idx_labels",
    "parse_idx",
    "write_idx_images",
    "write_idx_labels",
    "gen_synthetic_digits",
    "gen_sum_samples",
    "gen_hwf_dataset",
    "gen_path_dataset",
    "class_means",
]

IMAGE_MAGIC = 2051
LABEL_MAGIC = 2049


class IdxFormatError(ValueError):
    """Malformed IDX container."""


class IdxBadMagic(IdxFormatError):
    pass


class IdxTruncated(IdxFormatError):
    pass


class IdxCountMismatch(IdxFormatError):
    pass


def _read_exact(f, n, path, what):
    data = f.read(n)
    if len(data) != n:
        raise IdxTruncated(f"{path}: truncated while reading {what}")
    return data


def parse_idx_images(path) -> np.ndarray:
    """Images as float64 rows in [0, 1], flattened to (n, rows*cols)."""
    with open(path, "rb") as f:
        magic, n, rows, cols = struct.unpack(
            ">IIII", _read_exact(f, 16, path, "image header")
        )
        if magic != IMAGE_MAGIC:
            raise IdxBadMagic(f"{path}: bad magic {magic}, expected {IMAGE_MAGIC}")
        raw = _read_exact(f, n * rows * cols, path, f"{n} images")
    pixels = np.frombuffer(raw, dtype=np.uint8).astype(np.float64) / 255.0
    return pixels.reshape(n, rows * cols)


def parse_idx_labels(path) -> list:
    with open(path, "rb") as f:
        magic, n = struct.unpack(">II", _read_exact(f, 8, path, "label header"))
        if magic != LABEL_MAGIC:
            raise IdxBadMagic(f"{path}: bad magic {magic}, expected {LABEL_MAGIC}")
        raw = _read_exact(f, n, path, f"{n} labels")
    return [int(b) for b in raw]


def parse_idx(images_path, labels_path):
    """Parse a paired image/label file set, cross-checking counts."""
    images = parse_idx_images(images_path)
    labels = parse_idx_labels(labels_path)
    if images.shape[0] != len(labels):
        raise IdxCountMismatch(
            f"{images.shape[0]} images in {images_path} but "
            f"{len(labels)} labels in {labels_path}"
        )
    return images, labels


def write_idx_images(path, images: np.ndarray):
    """Serialize uint8 images of shape (n, rows, cols)."""
    images = np.asarray(images, dtype=np.uint8)
    n, rows, cols = images.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", IMAGE_MAGIC, n, rows, cols))
        f.write(images.tobytes())


def write_idx_labels(path, labels):
    labels = list(labels)
    with open(path, "wb") as f:
        f.write(struct.pack(">II", LABEL_MAGIC, len(labels)))
        f.write(bytes(int(v) for v in labels))


def class_means(classes: int, dim: int, separation: float, seed: int) -> np.ndarray:
    """Deterministic unit-direction cluster centers scaled by separation."""
    rng = np.random.default_rng(seed)
    means = rng.normal(size=(classes, dim))
    means /= np.linalg.norm(means, axis=1, keepdims=True)
    return means * separation


def gen_synthetic_digits(classes=10, per_class=100, separation=5.0, seed=0, dim=784):
    """Gaussian clusters standing in for digit images.

    Returns (features (n, dim), labels (n,)) with exactly ``per_class``
    samples per class, shuffled deterministically.
    """
    if separation <= 0:
        raise ValueError("separation must be positive")
    rng = np.random.default_rng(seed)
    means = class_means(classes, dim, separation, seed)
    labels = np.repeat(np.arange(classes), per_class)
    feats = means[labels] + rng.normal(size=(labels.size, dim))
    order = rng.permutation(labels.size)
    return feats[order], labels[order]


def gen_sum_samples(n_digits, count, separation=5.0, seed=0, dim=784, classes=10,
                    means_seed=None):
    """Digit groups for the sum/product tasks.

    Each sample is (features (n_digits, dim), digit labels tuple).
    ``means_seed`` pins the cluster centers independently of the draw
    seed so train and eval splits share one feature space.
    """
    rng = np.random.default_rng(seed)
    means = class_means(classes, dim, separation,
                        seed if means_seed is None else means_seed)
    samples = []
    for _ in range(count):
        labels = rng.integers(0, classes, size=n_digits)
        feats = means[labels] + rng.normal(size=(n_digits, dim))
        samples.append((feats, tuple(int(v) for v in labels)))
    return samples


def gen_hwf_dataset(length, count, seed=0, dim=64, separation=5.0, means_seed=None):
    """Alternating digit/operator token sequences with exact ground truth.

    Each sample is (token features (length, dim), token tuple, value).
    Formulas whose evaluation divides by zero are resampled away, so
    stored values always re-evaluate cleanly.
    """
    if length % 2 == 0:
        raise ValueError("formula length must be odd")
    rng = np.random.default_rng(seed)
    means = class_means(len(TOKEN_ALPHABET), dim, separation,
                        seed if means_seed is None else means_seed)
    samples = []
    while len(samples) < count:
        tokens = []
        for i in range(length):
            if i % 2 == 0:
                tokens.append(str(rng.integers(0, 10)))
            else:
                tokens.append(OPERATOR_TOKENS[rng.integers(0, 4)])
        try:
            value = reference_formula_eval(tokens)
        except ZeroDivisionError:
            continue
        idx = [TOKEN_ALPHABET.index(t) for t in tokens]
        feats = means[idx] + rng.normal(size=(length, dim))
        samples.append((feats, tuple(tokens), Fraction(value)))
    return samples


def all_edges(nodes: int):
    """Directed node pairs in lexicographic order; the edge symbol list."""
    return [(a, b) for a in range(nodes) for b in range(nodes) if a != b]


def reachable(nodes: int, edges) -> set:
    """All (source, target) pairs connected by a nonempty path."""
    adj = {i: [] for i in range(nodes)}
    for a, b in edges:
        adj[a].append(b)
    pairs = set()
    for start in range(nodes):
        seen = set()
        stack = [start]
        while stack:
            for nxt in adj[stack.pop()]:
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        pairs.update((start, t) for t in seen)
    return pairs


def gen_path_dataset(nodes, edge_prob, count, seed=0, dim=32, separation=5.0,
                     means_seed=None):
    """Random digraphs with reachability queries.

    Each sample is (edge features (E, dim), query pair, connected flag,
    edge set), where E enumerates all directed node pairs.  Edge
    features carry a presence/absence cluster signal plus noise; labels
    come from brute-force reachability.
    """
    if nodes > 64:
        raise ValueError("node count above 64 defeats the oracle guard")
    rng = np.random.default_rng(seed)
    means = class_means(2, dim, separation,
                        seed if means_seed is None else means_seed)
    pairs = all_edges(nodes)
    samples = []
    for _ in range(count):
        present = rng.uniform(size=len(pairs)) < edge_prob
        edges = frozenset(p for p, keep in zip(pairs, present) if keep)
        feats = means[present.astype(int)] + rng.normal(size=(len(pairs), dim))
        u = int(rng.integers(0, nodes))
        v = int(rng.integers(0, nodes - 1))
        if v >= u:
            v += 1
        label = (u, v) in reachable(nodes, edges)
        samples.append((feats, (u, v), bool(label), edges))
    return samples
