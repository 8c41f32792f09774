"""Provenance semirings over batched tags.

A provenance is a 5-tuple (tag space, zero, one, conjunction,
disjunction).  Two implementations are provided:

* ``Damp``: tags are probabilities in [0, 1]; conjunction is the
  product, disjunction the sum clamped to [0, 1].  Tags live on the
  gradient tape, so every operation is differentiable directly.

* ``DtkpAm``: tags are matrices of up to ``k`` proofs over the ordered
  universe of registered input symbols.  A proof is the set of input
  symbols needed to derive an output symbol; its probability is the
  product of the member probabilities, and a tag's probability is the
  clamped sum over its proofs.  Conjunction combines every pair of
  proofs (set union), disjunction concatenates proof sets; both
  deduplicate identical proofs and retain the k most probable ones.

Instead of storing IEEE ``+inf`` / ``-inf`` sentinels inside tape
arithmetic, proof matrices are kept as presence masks plus the registry's
probability leaves: a row-level mask marks absent proofs (the ``-inf``
rows) and a membership mask marks which symbols participate (absent
symbols are the ``+inf`` entries, contributing factor 1).  The masks are
plain arrays; only the probability extraction builds tape operations, so
gradients flow to exactly the registered inputs appearing in retained
proofs and no NaN can arise from sentinel arithmetic.

``wmc_exact`` is the enumeration oracle: the exact probability that at
least one proof is satisfied under independent inputs.  It is
deliberately non-differentiable and guarded to small universes.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from . import tensor as T
from .tensor import Tensor

__all__ = [
    "ProvenanceError",
    "InputRegistry",
    "Damp",
    "DtkpAm",
    "DampTags",
    "DtkpTags",
    "wmc_exact",
    "provenance_from_name",
]


class ProvenanceError(ValueError):
    """Registry misuse or incompatible tags."""


def _common_batch(a: np.ndarray, b: np.ndarray):
    """Broadcast two tag arrays to a shared leading batch extent."""
    if a.shape[0] == b.shape[0]:
        return a, b
    target = max(a.shape[0], b.shape[0])
    a = np.ascontiguousarray(np.broadcast_to(a, (target,) + a.shape[1:]))
    b = np.ascontiguousarray(np.broadcast_to(b, (target,) + b.shape[1:]))
    return a, b


class InputRegistry:
    """Ordered universe of input symbols and their probability leaves.

    Each registered block contributes new columns.  The registry freezes
    when its context first extracts differentiable probabilities, fixing
    the column axis of proof matrices; until then tags created at an
    earlier width align to the current one by zero padding.
    """

    def __init__(self):
        self.ids = []
        self._parts = []  # probability Tensors, one per registered block
        self._frozen = False
        self._prob_cache = None

    @property
    def size(self) -> int:
        return len(self.ids)

    @property
    def frozen(self) -> bool:
        return self._frozen

    def freeze(self):
        self._frozen = True

    def add_block(self, ids, probs: Tensor) -> int:
        """Append a block of input columns; returns the starting column."""
        if self._frozen:
            raise ProvenanceError(
                "cannot register inputs after the registry is frozen"
            )
        if probs.ndim != 2 or probs.shape[1] != len(ids):
            raise ProvenanceError(
                f"probability block shape {probs.shape} does not match "
                f"{len(ids)} input symbols"
            )
        start = len(self.ids)
        self.ids.extend(ids)
        self._parts.append(probs)
        return start

    @property
    def batch(self) -> int:
        return max((p.shape[0] for p in self._parts), default=1)

    def prob_tensor(self) -> Tensor:
        """Differentiable (b, |I|) view of all registered probabilities."""
        if self._frozen and self._prob_cache is not None:
            return self._prob_cache
        if not self._parts:
            raise ProvenanceError("registry holds no input symbols")
        b = self.batch
        parts = [self._expand(p, b) for p in self._parts]
        out = parts[0] if len(parts) == 1 else T.concat(parts, axis=1)
        if self._frozen:
            self._prob_cache = out
        return out

    def prob_values(self) -> np.ndarray:
        """Forward probability values, without touching the tape."""
        b = self.batch
        return np.concatenate(
            [np.broadcast_to(p.data, (b, p.shape[1])) for p in self._parts],
            axis=1,
        )

    @staticmethod
    def _expand(t: Tensor, b: int) -> Tensor:
        if t.shape[0] == b:
            return t
        return T.add(t, Tensor(np.zeros((b, 1))))


class DampTags:
    """Probability tags for a whole symbol list, shape (b, n) on tape."""

    __slots__ = ("value",)

    def __init__(self, value: Tensor):
        self.value = value

    @property
    def batch(self) -> int:
        return self.value.shape[0]

    @property
    def count(self) -> int:
        return self.value.shape[1]


class DtkpTags:
    """Proof-matrix tags for a whole symbol list.

    member:  uint8 (b, n, k, width), symbol membership per proof row.
    present: uint8 (b, n, k), which proof rows exist.
    width is the registry size at creation; tags are padded to the
    current registry width on demand (registration only appends columns).
    """

    __slots__ = ("member", "present", "registry")

    def __init__(self, member, present, registry):
        self.member = member
        self.present = present
        self.registry = registry

    @property
    def batch(self) -> int:
        return self.member.shape[0]

    @property
    def count(self) -> int:
        return self.member.shape[1]

    @property
    def k(self) -> int:
        return self.member.shape[2]

    def aligned_member(self) -> np.ndarray:
        width = self.registry.size
        have = self.member.shape[3]
        if have == width:
            return self.member
        pad = [(0, 0)] * 3 + [(0, width - have)]
        self.member = np.pad(self.member, pad)
        return self.member

    def to_matrix(self) -> np.ndarray:
        """Sentinel view: +inf for absent symbols, -inf rows for absent
        proofs, probabilities elsewhere.  Debug/display only."""
        member = self.aligned_member().astype(bool)
        present = self.present.astype(bool)
        p = self.registry.prob_values()
        out = np.where(member, p[:, None, None, :], np.inf)
        out = np.where(present[..., None], out, -np.inf)
        return out

    def proof_sets(self, col: int = 0):
        """Set-of-frozensets view of one symbol's proofs, per batch row."""
        member = self.aligned_member()
        out = []
        for m in range(self.batch):
            proofs = set()
            for r in range(self.k):
                if self.present[m, col, r]:
                    proofs.add(frozenset(np.flatnonzero(member[m, col, r])))
            out.append(proofs)
        return out


class Damp:
    """Add-mult probabilities: conj = product, disj = clamped sum."""

    name = "damp"
    k = None

    def input_tags(self, registry, ids, probs: Tensor) -> DampTags:
        registry.add_block(ids, probs)
        return DampTags(probs)

    def zero(self, registry, b: int = 1, n: int = 1) -> DampTags:
        return DampTags(Tensor(np.zeros((b, n))))

    def one(self, registry, b: int = 1, n: int = 1) -> DampTags:
        return DampTags(Tensor(np.ones((b, n))))

    def gather(self, tags: DampTags, indices) -> DampTags:
        return DampTags(T.select_rows(tags.value, indices, axis=1))

    def conj(self, a: DampTags, b: DampTags) -> DampTags:
        return DampTags(T.mul(a.value, b.value))

    def disj(self, a: DampTags, b: DampTags) -> DampTags:
        return DampTags(T.clamp(T.add(a.value, b.value), 0.0, 1.0))

    def group_disj(self, tags: DampTags, groups) -> DampTags:
        """Disjoin bucket members: one 0/1 grouping matmul, then clamp.

        Clamping the bucket total equals folding pairwise clamped sums
        because all operands are nonnegative.
        """
        n = tags.count
        G = np.zeros((n, len(groups)))
        for s, group in enumerate(groups):
            G[group, s] = 1.0
        out = T.affine(tags.value, Tensor(G), Tensor(np.zeros(len(groups))))
        return DampTags(T.clamp(out, 0.0, 1.0))

    def concat_syms(self, parts) -> DampTags:
        return DampTags(T.concat([p.value for p in parts], axis=1))

    def probs(self, tags: DampTags) -> Tensor:
        return tags.value

    def forward_probs(self, tags: DampTags) -> np.ndarray:
        return tags.value.data

    def placed(self, tags: DampTags, placement: np.ndarray) -> DampTags:
        """Scatter columns into a wider symbol list (union alignment)."""
        m = placement.shape[1]
        out = T.affine(tags.value, Tensor(placement), Tensor(np.zeros(m)))
        return DampTags(out)

    def stack_parts(self, parts) -> DampTags:
        return DampTags(T.concat([p.value for p in parts], axis=0))


class DtkpAm:
    """Top-k proof matrices with add-mult probability extraction."""

    name = "dtkp"

    def __init__(self, k: int):
        if k < 1:
            raise ProvenanceError(f"top-k retention needs k >= 1, got {k}")
        self.k = int(k)

    def input_tags(self, registry, ids, probs: Tensor) -> DtkpTags:
        start = registry.add_block(ids, probs)
        b, n = probs.shape
        width = registry.size
        member = np.zeros((b, n, self.k, width), dtype=np.uint8)
        present = np.zeros((b, n, self.k), dtype=np.uint8)
        for i in range(n):
            member[:, i, 0, start + i] = 1
        present[:, :, 0] = 1
        return DtkpTags(member, present, registry)

    def zero(self, registry, b: int = 1, n: int = 1) -> DtkpTags:
        width = registry.size
        member = np.zeros((b, n, self.k, width), dtype=np.uint8)
        present = np.zeros((b, n, self.k), dtype=np.uint8)
        return DtkpTags(member, present, registry)

    def one(self, registry, b: int = 1, n: int = 1) -> DtkpTags:
        tags = self.zero(registry, b, n)
        tags.present[:, :, 0] = 1  # single empty proof
        return tags

    def _check_registry(self, a: DtkpTags, b: DtkpTags):
        if a.registry is not b.registry:
            raise ProvenanceError("tags belong to different input registries")
        if a.count != b.count:
            raise ProvenanceError(
                f"columnwise tag operation on {a.count} vs {b.count} symbols"
            )

    def _p_rows(self, registry, b: int, n: int) -> np.ndarray:
        p = registry.prob_values()
        width = p.shape[1]
        rows = np.broadcast_to(p[:, None, :], (b, n, width))
        return np.ascontiguousarray(rows.reshape(b * n, width))

    def gather(self, tags: DtkpTags, indices) -> DtkpTags:
        idx = np.asarray(indices, dtype=np.intp)
        return DtkpTags(
            np.take(tags.member, idx, axis=1),
            np.take(tags.present, idx, axis=1),
            tags.registry,
        )

    def conj(self, a: DtkpTags, b: DtkpTags) -> DtkpTags:
        """Combine every pair of proofs by set union, then dedup + top-k."""
        self._check_registry(a, b)
        am, bm = a.aligned_member(), b.aligned_member()
        ka, kb = am.shape[2], bm.shape[2]
        cand = am[:, :, :, None, :] | bm[:, :, None, :, :]
        pres = a.present[:, :, :, None] & b.present[:, :, None, :]
        bsz, n = pres.shape[:2]
        width = cand.shape[-1]
        return self._normalize(
            np.ascontiguousarray(cand).reshape(bsz, n, ka * kb, width),
            np.ascontiguousarray(pres).reshape(bsz, n, ka * kb),
            a.registry,
        )

    def disj(self, a: DtkpTags, b: DtkpTags) -> DtkpTags:
        """Concatenate proof rows (left operand first), dedup + top-k."""
        self._check_registry(a, b)
        am, bm = _common_batch(a.aligned_member(), b.aligned_member())
        pa, pb = _common_batch(a.present, b.present)
        cand = np.concatenate([am, bm], axis=2)
        pres = np.concatenate([pa, pb], axis=2)
        return self._normalize(cand, pres, a.registry)

    def group_disj(self, tags: DtkpTags, groups) -> DtkpTags:
        member = tags.aligned_member()
        bsz, _, k, width = member.shape
        out_member = np.zeros((bsz, len(groups), self.k, width), dtype=np.uint8)
        out_present = np.zeros((bsz, len(groups), self.k), dtype=np.uint8)
        p = self._p_rows(tags.registry, bsz, 1)
        for s, group in enumerate(groups):
            rows = member[:, group].reshape(bsz, len(group) * k, width)
            pres = tags.present[:, group].reshape(bsz, len(group) * k)
            om, op = kernels.dedup_topk(rows, pres, p, self.k)
            out_member[:, s] = om
            out_present[:, s] = op
        return DtkpTags(out_member, out_present, tags.registry)

    def _normalize(self, cand, pres, registry) -> DtkpTags:
        bsz, n, rows, width = cand.shape
        p = self._p_rows(registry, bsz, n)
        member, present = kernels.dedup_topk(
            cand.reshape(bsz * n, rows, width),
            pres.reshape(bsz * n, rows),
            p,
            self.k,
        )
        return DtkpTags(
            member.reshape(bsz, n, self.k, width),
            present.reshape(bsz, n, self.k),
            registry,
        )

    def concat_syms(self, parts) -> DtkpTags:
        registry = parts[0].registry
        b = max(p.batch for p in parts)
        members, presents = [], []
        for p in parts:
            m, pr = p.aligned_member(), p.present
            if m.shape[0] != b:
                m = np.ascontiguousarray(np.broadcast_to(m, (b,) + m.shape[1:]))
                pr = np.ascontiguousarray(np.broadcast_to(pr, (b,) + pr.shape[1:]))
            members.append(m)
            presents.append(pr)
        return DtkpTags(
            np.concatenate(members, axis=1),
            np.concatenate(presents, axis=1),
            registry,
        )

    def probs(self, tags: DtkpTags) -> Tensor:
        """Differentiable add-mult probability of every tag.

        norm maps absent symbols to factor 1 and absent proofs to term 0;
        per-proof products are summed and clamped to [0, 1].
        """
        member = tags.aligned_member().astype(np.float64)
        present = tags.present.astype(np.float64)
        bsz, n, k, width = member.shape
        p = tags.registry.prob_tensor()
        p4 = T.reshape(p, (p.shape[0], 1, 1, width))
        blended = T.add(T.mul(p4, Tensor(member)), Tensor(1.0 - member))
        proof_probs = T.reduce_prod(blended, axis=3)
        masked = T.mul(proof_probs, Tensor(present))
        total = T.reduce_sum(masked, axis=2)
        return T.clamp(total, 0.0, 1.0)

    def forward_probs(self, tags: DtkpTags) -> np.ndarray:
        member = tags.aligned_member().astype(bool)
        present = tags.present.astype(bool)
        p = tags.registry.prob_values()
        bsz = max(tags.batch, p.shape[0])
        factors = np.where(member, p[:, None, None, :], 1.0)
        proof_probs = np.where(present, factors.prod(axis=3), 0.0)
        total = proof_probs.sum(axis=2)
        return np.clip(np.broadcast_to(total, (bsz, tags.count)), 0.0, 1.0)

    def placed(self, tags: DtkpTags, placement: np.ndarray) -> DtkpTags:
        member = tags.aligned_member()
        bsz, n, k, width = member.shape
        m = placement.shape[1]
        out_member = np.zeros((bsz, m, k, width), dtype=np.uint8)
        out_present = np.zeros((bsz, m, k), dtype=np.uint8)
        src, dst = np.nonzero(placement)
        out_member[:, dst] = member[:, src]
        out_present[:, dst] = tags.present[:, src]
        return DtkpTags(out_member, out_present, tags.registry)

    def stack_parts(self, parts) -> DtkpTags:
        registry = parts[0].registry
        member = np.concatenate([p.aligned_member() for p in parts], axis=0)
        present = np.concatenate([p.present for p in parts], axis=0)
        return DtkpTags(member, present, registry)

    def tags_from_proofs(self, registry, proofs, b: int = 1) -> DtkpTags:
        """Single-symbol tag built from explicit proof index sets.

        Normalized through the same dedup/top-k path as the operators, so
        the result is a well-formed tag regardless of input order.
        """
        proofs = list(proofs)
        width = registry.size
        rows = max(len(proofs), 1)
        member = np.zeros((b, 1, rows, width), dtype=np.uint8)
        present = np.zeros((b, 1, rows), dtype=np.uint8)
        for r, proof in enumerate(proofs):
            for j in proof:
                member[:, 0, r, j] = 1
            present[:, 0, r] = 1
        return self._normalize(member, present, registry)


def wmc_exact(proofs, weights) -> float:
    """Exact weighted model count of a proof set.

    Sums, over all assignments to the input universe that satisfy at
    least one proof, the product of per-input probabilities (``p_j`` when
    set, ``1 - p_j`` when unset).  Inputs are treated as independent.
    Enumeration only: refuses universes beyond 20 inputs.
    """
    if isinstance(weights, InputRegistry):
        weights = weights.prob_values()[0]
    w = np.asarray(weights, dtype=np.float64).ravel()
    n = w.size
    if n > 20:
        raise ProvenanceError(
            f"wmc_exact enumerates 2^|I| assignments; |I|={n} exceeds the "
            "guard of 20"
        )
    proofs = list(proofs)
    if not proofs:
        return 0.0
    for proof in proofs:
        for j in proof:
            if not 0 <= j < n:
                raise ProvenanceError(f"proof index {j} outside universe of {n}")
    # Variables outside every proof marginalize to a factor of exactly 1,
    # so enumeration is restricted to the involved ones.
    involved = sorted(set().union(*proofs))
    pos = {j: i for i, j in enumerate(involved)}
    m = len(involved)
    masks = [
        np.uint64(sum(1 << pos[j] for j in proof)) for proof in proofs
    ]
    idx = np.arange(1 << m, dtype=np.uint64)
    sat = np.zeros(idx.size, dtype=bool)
    for mask in masks:
        sat |= (idx & mask) == mask
    weight = np.ones(idx.size, dtype=np.float64)
    one = np.uint64(1)
    for i, j in enumerate(involved):
        bit = (idx >> np.uint64(i)) & one
        weight *= np.where(bit == one, w[j], 1.0 - w[j])
    return float(weight[sat].sum())


def provenance_from_name(name: str, k: int = 1):
    if name == "damp":
        return Damp()
    if name == "dtkp":
        return DtkpAm(k)
    raise ProvenanceError(f"unknown provenance {name!r} (expected damp or dtkp)")
