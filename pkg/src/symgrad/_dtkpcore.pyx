# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled core for proof dedup and stable top-k retention.

Single pass per batch element: pack membership rows into 64-bit words,
drop duplicate rows (first occurrence wins), compute per-proof
probabilities, then select the k best rows by probability with ties
broken by original row index.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def dedup_topk(const unsigned char[:, :, ::1] member,
               const unsigned char[:, ::1] present,
               const double[:, ::1] p,
               Py_ssize_t k):
    cdef Py_ssize_t M = member.shape[0]
    cdef Py_ssize_t R = member.shape[1]
    cdef Py_ssize_t I = member.shape[2]
    cdef Py_ssize_t W = (I + 63) >> 6

    out_member_arr = np.zeros((M, k, I), dtype=np.uint8)
    out_present_arr = np.zeros((M, k), dtype=np.uint8)
    if M == 0 or R == 0 or k == 0:
        return out_member_arr, out_present_arr

    cdef unsigned char[:, :, ::1] out_member = out_member_arr
    cdef unsigned char[:, ::1] out_present = out_present_arr

    scratch_words = np.zeros((R, W if W > 0 else 1), dtype=np.uint64)
    scratch_probs = np.zeros(R, dtype=np.float64)
    scratch_idx = np.zeros(R, dtype=np.intp)
    cdef unsigned long long[:, ::1] words = scratch_words
    cdef double[::1] probs = scratch_probs
    cdef Py_ssize_t[::1] idx = scratch_idx

    cdef Py_ssize_t m, r, j, w, d, a, c, best, src, nsel, ndistinct
    cdef double prob, tp
    cdef Py_ssize_t ti
    cdef bint dup, same

    for m in range(M):
        ndistinct = 0
        for r in range(R):
            if not present[m, r]:
                continue
            for w in range(W):
                words[ndistinct, w] = 0
            prob = 1.0
            for j in range(I):
                if member[m, r, j]:
                    words[ndistinct, j >> 6] |= (<unsigned long long>1) << (j & 63)
                    prob *= p[m, j]
            dup = False
            for d in range(ndistinct):
                same = True
                for w in range(W):
                    if words[d, w] != words[ndistinct, w]:
                        same = False
                        break
                if same:
                    dup = True
                    break
            if dup:
                continue
            probs[ndistinct] = prob
            idx[ndistinct] = r
            ndistinct += 1

        nsel = k if k < ndistinct else ndistinct
        for a in range(nsel):
            best = a
            for c in range(a + 1, ndistinct):
                # Probability descending, original row index ascending on
                # exact ties (swaps perturb array order, so compare idx).
                if probs[c] > probs[best] or (
                    probs[c] == probs[best] and idx[c] < idx[best]
                ):
                    best = c
            if best != a:
                tp = probs[a]
                probs[a] = probs[best]
                probs[best] = tp
                ti = idx[a]
                idx[a] = idx[best]
                idx[best] = ti
            src = idx[a]
            out_present[m, a] = 1
            for j in range(I):
                out_member[m, a, j] = member[m, src, j]

    return out_member_arr, out_present_arr
