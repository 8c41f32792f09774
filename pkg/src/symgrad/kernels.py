"""Hot kernels for proof-matrix tags: dedup and stable top-k retention.

A compiled extension (``symgrad._dtkpcore``) provides the single-pass C
implementation; a vectorized numpy fallback with identical semantics is
used when the extension is unavailable or ``SYMGRAD_PURE=1`` is set.
Both select up to ``k`` distinct present proof rows per batch element,
ordered by proof probability descending and, on exact ties, by original
row index ascending (duplicates keep their first occurrence).
"""

from __future__ import annotations

import os

import numpy as np

_compiled = None
if os.environ.get("SYMGRAD_PURE", "") != "1":
    try:
        from symgrad import _dtkpcore as _compiled
    except ImportError:
        _compiled = None


def backend_name() -> str:
    return "numpy" if _compiled is None else "compiled"


def dedup_topk(member, present, p, k):
    """Retain the top-k distinct present proofs of every batch element.

    member:  uint8 (M, R, I), symbol-membership of each candidate proof.
    present: uint8 (M, R), whether a candidate row is a live proof.
    p:       float64 (M, I), input-symbol probabilities.
    Returns (member_out (M, k, I) uint8, present_out (M, k) uint8).
    """
    member = np.ascontiguousarray(member, dtype=np.uint8)
    present = np.ascontiguousarray(present, dtype=np.uint8)
    p = np.ascontiguousarray(p, dtype=np.float64)
    if _compiled is not None:
        return _compiled.dedup_topk(member, present, p, k)
    return dedup_topk_numpy(member, present, p, k)


def dedup_topk_numpy(member, present, p, k):
    """Pure-numpy reference for :func:`dedup_topk`."""
    M, R, I = member.shape
    out_member = np.zeros((M, k, I), dtype=np.uint8)
    out_present = np.zeros((M, k), dtype=np.uint8)
    if M == 0 or R == 0 or k == 0:
        return out_member, out_present

    alive = present.astype(bool)
    if R > 1:
        packed = np.packbits(member, axis=2)
        eq = (packed[:, :, None, :] == packed[:, None, :, :]).all(axis=3)
        earlier = np.tril(np.ones((R, R), dtype=bool), -1)
        dup = (eq & alive[:, None, :] & earlier).any(axis=2)
        alive = alive & ~dup

    probs = np.where(member.astype(bool), p[:, None, :], 1.0).prod(axis=2)
    key = np.where(alive, probs, -1.0)
    # Stable sort on the negated key keeps original row order on ties.
    order = np.argsort(-key, axis=1, kind="stable")[:, :k]
    take = min(k, R)
    sel = order[:, :take]
    out_member[:, :take] = np.take_along_axis(member, sel[:, :, None], axis=1)
    out_present[:, :take] = np.take_along_axis(alive, sel, axis=1)
    out_member &= out_present[:, :, None]
    return out_member, out_present
