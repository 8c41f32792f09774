"""Distributions over discrete symbols and the primitives to combine them.

A ``Distribution`` pairs an ordered list of distinct symbols, shared by
the whole batch, with one batched tag per symbol.  Symbols are plain
Python values manipulated on the host; all tag algebra is batched array
work routed through the context's provenance.  ``apply`` follows a
map-shuffle-reduce scheme: the mapping function runs once per symbol
combination for the entire batch, combinations are grouped by result
symbol, and each group's tags are disjoined.
"""

from __future__ import annotations

import itertools
import struct
from fractions import Fraction

import numpy as np

from .provenance import InputRegistry
from .tensor import GradientTape, Tensor

__all__ = [
    "UNDEFINED",
    "ContextError",
    "SymbolFunctionError",
    "ProgramContext",
    "Distribution",
    "encode_symbol",
    "make_distribution",
    "apply",
    "apply_if",
    "union",
    "get_probs",
    "sample_symbols",
    "stack",
]


class _Undefined:
    """Marker a mapping function returns for combinations with no result."""

    __slots__ = ()

    def __repr__(self):
        return "UNDEFINED"


UNDEFINED = _Undefined()


class ContextError(ValueError):
    """Distributions from different execution contexts were mixed."""


class SymbolFunctionError(RuntimeError):
    """A user-supplied symbol function raised; carries the offending tuple."""

    def __init__(self, message, symbols):
        super().__init__(message)
        self.symbols = symbols


def encode_symbol(s) -> bytes:
    """Canonical injective byte encoding of a symbol.

    Supports ints, bools, strings, floats, Fractions, None, and nested
    tuples of these.  Used for deterministic ordering, never for equality
    (which stays structural).
    """
    if isinstance(s, bool):
        return b"b1" if s else b"b0"
    if isinstance(s, int):
        return b"i" + str(s).encode()
    if isinstance(s, Fraction):
        return b"q%d/%d" % (s.numerator, s.denominator)
    if isinstance(s, float):
        return b"f" + repr(s).encode()
    if isinstance(s, str):
        return b"s" + s.encode("utf-8")
    if s is None:
        return b"n"
    if isinstance(s, tuple):
        parts = [encode_symbol(x) for x in s]
        return b"t" + b"".join(struct.pack(">I", len(p)) + p for p in parts)
    raise TypeError(f"symbol type {type(s).__name__} has no canonical encoding")


class ProgramContext:
    """One symbolic-program execution scope.

    Binds a provenance, an input registry, and a gradient tape.  The
    registry freezes at the first differentiable probability extraction
    (``get_probs``); registering inputs afterwards is an error.  Algebra
    operations before that point tolerate interleaved registration, which
    per-sample processing with ``stack`` relies on.  Contexts are
    single-execution scoped: run concurrent programs in separate contexts.
    """

    def __init__(self, provenance, tape: GradientTape | None = None):
        self.provenance = provenance
        self.registry = InputRegistry()
        self.tape = tape if tape is not None else GradientTape()
        self._serial = 0

    @property
    def frozen(self) -> bool:
        return self.registry.frozen

    def freeze(self):
        self.registry.freeze()

    def _next_serial(self) -> int:
        self._serial += 1
        return self._serial


class Distribution:
    """Ordered distinct symbols paired with batched tags."""

    __slots__ = ("context", "symbols", "tags", "_index")

    def __init__(self, context, symbols, tags):
        self.context = context
        self.symbols = tuple(symbols)
        self.tags = tags
        self._index = {s: i for i, s in enumerate(self.symbols)}
        if len(self._index) != len(self.symbols):
            raise ValueError("distribution symbols must be pairwise distinct")
        if tags.count != len(self.symbols):
            raise ValueError(
                f"{tags.count} tags for {len(self.symbols)} symbols"
            )

    @property
    def batch(self) -> int:
        return self.tags.batch

    def __len__(self):
        return len(self.symbols)

    def __contains__(self, symbol):
        return symbol in self._index

    def index_of(self, symbol) -> int:
        return self._index[symbol]

    def find(self, symbol):
        """Position of a symbol, or None when absent."""
        return self._index.get(symbol)

    def __repr__(self):
        return (
            f"Distribution({len(self.symbols)} symbols, batch={self.batch}, "
            f"provenance={self.context.provenance.name})"
        )

    def filter(self, pred) -> "Distribution":
        """Keep exactly the symbols satisfying ``pred``, tags untouched."""
        keep = []
        for i, s in enumerate(self.symbols):
            if _call_user(pred, (s,)):
                keep.append(i)
        prov = self.context.provenance
        return Distribution(
            self.context,
            [self.symbols[i] for i in keep],
            prov.gather(self.tags, keep),
        )

    def probs(self) -> Tensor:
        return get_probs(self)

    def forward_probs(self) -> np.ndarray:
        """Probability values without recording tape operations."""
        return self.context.provenance.forward_probs(self.tags)


def _call_user(fn, syms):
    try:
        return fn(*syms)
    except Exception as exc:
        raise SymbolFunctionError(
            f"symbol function failed on {syms!r}: {exc}", syms
        ) from exc


def _same_context(dists):
    ctx = dists[0].context
    for d in dists[1:]:
        if d.context is not ctx:
            raise ContextError("distributions belong to different contexts")
    return ctx


def make_distribution(context, probs, symbols) -> Distribution:
    """Register classifier outputs as an input distribution.

    ``probs`` is a (batch, n) tensor treated as probabilities; apply a
    softmax upstream when feeding raw scores.  Raw arrays are wrapped as
    constants.  Each call registers fresh input columns, so reusing one
    classifier output in two distributions yields independent inputs,
    while reusing the same Distribution object does not.
    """
    symbols = tuple(symbols)
    if not symbols:
        raise ValueError("a distribution needs at least one symbol")
    if len(set(symbols)) != len(symbols):
        raise ValueError("duplicate symbols in distribution")
    if not isinstance(probs, Tensor):
        probs = Tensor(np.asarray(probs, dtype=np.float64))
    if probs.ndim != 2:
        raise ValueError(f"probabilities must be (batch, n), got {probs.shape}")
    if probs.shape[1] != len(symbols):
        raise ValueError(
            f"{probs.shape[1]} probability columns for {len(symbols)} symbols"
        )
    serial = context._next_serial()
    ids = [(serial, s) for s in symbols]
    tags = context.provenance.input_tags(context.registry, ids, probs)
    return Distribution(context, symbols, tags)


def _empty(context, batch) -> Distribution:
    tags = context.provenance.zero(context.registry, batch, 0)
    return Distribution(context, (), tags)


def apply_if(f, cond, *dists) -> Distribution:
    """Conditional map-shuffle-reduce over the symbol product.

    The map stage evaluates ``cond`` and ``f`` host-side, once per symbol
    combination (shared across the batch); tag conjunction and per-result
    disjunction are batched tensor work.  Combinations where ``cond``
    fails or ``f`` returns ``UNDEFINED`` contribute nothing.
    """
    if not dists:
        raise ValueError("apply requires at least one distribution")
    ctx = _same_context(dists)
    batch = max(d.batch for d in dists)
    if any(len(d) == 0 for d in dists):
        return _empty(ctx, batch)

    combos = []
    results = []
    for positions in itertools.product(*(range(len(d)) for d in dists)):
        syms = tuple(d.symbols[i] for d, i in zip(dists, positions))
        if cond is not None and not _call_user(cond, syms):
            continue
        value = _call_user(f, syms)
        if value is UNDEFINED:
            continue
        combos.append(positions)
        results.append(value)
    if not combos:
        return _empty(ctx, batch)

    buckets = {}
    for ordinal, value in enumerate(results):
        buckets.setdefault(value, []).append(ordinal)

    prov = ctx.provenance
    gathered = [
        prov.gather(d.tags, np.array([c[i] for c in combos], dtype=np.intp))
        for i, d in enumerate(dists)
    ]
    folded = gathered[0]
    for other in gathered[1:]:
        folded = prov.conj(folded, other)
    out_tags = prov.group_disj(folded, list(buckets.values()))
    return Distribution(ctx, list(buckets.keys()), out_tags)


def apply(f, *dists) -> Distribution:
    """Map-shuffle-reduce over all symbol combinations."""
    return apply_if(f, None, *dists)


def union(d1: Distribution, d2: Distribution) -> Distribution:
    """Symbol-set union; tags of shared symbols are disjoined."""
    ctx = _same_context((d1, d2))
    if len(d1) == 0:
        return d2
    if len(d2) == 0:
        return d1
    prov = ctx.provenance
    symbols = list(d1.symbols)
    groups = [[i] for i in range(len(d1.symbols))]
    for j, s in enumerate(d2.symbols):
        pos = d1._index.get(s)
        if pos is None:
            symbols.append(s)
            groups.append([len(d1.symbols) + j])
        else:
            groups[pos].append(len(d1.symbols) + j)
    both = prov.concat_syms([d1.tags, d2.tags])
    return Distribution(ctx, symbols, prov.group_disj(both, groups))


def get_probs(d: Distribution) -> Tensor:
    """Per-symbol probabilities, differentiable to the classifier leaves.

    No normalization is applied; that is a loss-side decision.
    """
    d.context.freeze()
    return d.context.provenance.probs(d.tags)


def sample_symbols(d: Distribution, m: int, seed=None, strategy="top") -> Distribution:
    """Restrict a distribution to a subset of m symbols.

    ``top`` (default) keeps the m symbols with the highest mean
    probability across the batch, ties broken by canonical symbol
    encoding.  ``categorical`` draws m symbols without replacement,
    weighted by mean probability, from a generator seeded with ``seed``.
    Symbols keep their original order either way.
    """
    if m < 1:
        raise ValueError(f"sample size must be >= 1, got {m}")
    if m >= len(d):
        return d
    mean = d.forward_probs().mean(axis=0)
    if strategy == "top":
        ranked = sorted(
            range(len(d)),
            key=lambda i: (-mean[i], encode_symbol(d.symbols[i])),
        )
        keep = set(ranked[:m])
    elif strategy == "categorical":
        rng = np.random.default_rng(seed)
        total = mean.sum()
        weights = mean / total if total > 0 else np.full(len(d), 1.0 / len(d))
        keep = set(rng.choice(len(d), size=m, replace=False, p=weights).tolist())
    else:
        raise ValueError(f"unknown sampling strategy {strategy!r}")
    indices = [i for i in range(len(d)) if i in keep]
    prov = d.context.provenance
    return Distribution(
        d.context,
        [d.symbols[i] for i in indices],
        prov.gather(d.tags, indices),
    )


def stack(parts) -> Distribution:
    """Stack per-sample distributions along the batch axis.

    Symbol sets are aligned by union (missing symbols receive zero tags)
    in first-appearance order across the parts.
    """
    parts = list(parts)
    if not parts:
        raise ValueError("stack requires at least one distribution")
    ctx = _same_context(parts)
    symbols = []
    index = {}
    for part in parts:
        for s in part.symbols:
            if s not in index:
                index[s] = len(symbols)
                symbols.append(s)
    prov = ctx.provenance
    placed = []
    for part in parts:
        placement = np.zeros((len(part.symbols), len(symbols)))
        for i, s in enumerate(part.symbols):
            placement[i, index[s]] = 1.0
        placed.append(prov.placed(part.tags, placement))
    return Distribution(ctx, symbols, prov.stack_parts(placed))
