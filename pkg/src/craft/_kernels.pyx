# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled spectral scoring + top-r selection.

Arithmetic order matches ``craft._fallback`` exactly so both backends return
bit-identical scores (build with -ffp-contract=off).
"""

import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange

ctypedef cnp.int64_t i64

cnp.import_array()


cdef inline bint _better(double s1, i64 c1, i64 e1, double s2, i64 c2, i64 e2) noexcept nogil:
    if s1 > s2:
        return True
    if s1 < s2:
        return False
    if c1 != c2:
        return c1 < c2
    return e1 < e2


cdef void _score_one(
    const double[::1] qr, const double[::1] qi, double qn,
    const double[:, :, ::1] kr, const double[:, :, ::1] ki, const double[:, ::1] kn,
    const i64[::1] pool, const i64[::1] t_end, i64 lo, i64 hi,
    i64 lookback, i64 horizon, double eps,
    i64[::1] out_ch, i64[::1] out_e, double[::1] out_s, i64* n_evals,
) noexcept nogil:
    cdef Py_ssize_t r = out_ch.shape[0]
    cdef Py_ssize_t n_entries = kr.shape[1]
    cdef Py_ssize_t n_freq = kr.shape[2]
    cdef Py_ssize_t p, i, f, pos, filled = 0
    cdef i64 ch, t
    cdef double acc, s
    cdef bint use_excl = lo <= hi
    cdef i64 evals = 0
    for p in range(pool.shape[0]):
        ch = pool[p]
        if ch < 0:
            continue
        for i in range(n_entries):
            if use_excl:
                t = t_end[i]
                if t - lookback + 1 <= hi and t + horizon >= lo:
                    continue
            acc = 0.0
            for f in range(n_freq):
                acc += qr[f] * kr[ch, i, f] + qi[f] * ki[ch, i, f]
            s = acc / (qn * kn[ch, i] + eps)
            evals += 1
            if filled == r and not _better(s, ch, i, out_s[r - 1], out_ch[r - 1], out_e[r - 1]):
                continue
            pos = filled if filled < r else r - 1
            while pos > 0 and _better(s, ch, i, out_s[pos - 1], out_ch[pos - 1], out_e[pos - 1]):
                out_s[pos] = out_s[pos - 1]
                out_ch[pos] = out_ch[pos - 1]
                out_e[pos] = out_e[pos - 1]
                pos -= 1
            out_s[pos] = s
            out_ch[pos] = ch
            out_e[pos] = i
            if filled < r:
                filled += 1
    n_evals[0] = evals


def score_topk(
    const double[:, :, ::1] q_re, const double[:, :, ::1] q_im, const double[:, ::1] q_norm,
    const double[:, :, ::1] k_re, const double[:, :, ::1] k_im, const double[:, ::1] k_norm,
    const i64[:, ::1] pools, const i64[::1] t_end, const i64[:, ::1] exclude,
    i64 lookback, i64 horizon, Py_ssize_t r, double eps, int threads=1,
):
    cdef Py_ssize_t B = q_re.shape[0]
    cdef Py_ssize_t Q = q_re.shape[1]
    out_ch_a = np.full((B, Q, r), -1, dtype=np.int64)
    out_e_a = np.full((B, Q, r), -1, dtype=np.int64)
    out_s_a = np.full((B, Q, r), np.nan)
    evals_a = np.zeros((B, Q), dtype=np.int64)
    cdef i64[:, :, ::1] out_ch = out_ch_a
    cdef i64[:, :, ::1] out_e = out_e_a
    cdef double[:, :, ::1] out_s = out_s_a
    cdef i64[:, ::1] evals = evals_a
    cdef Py_ssize_t b, q
    if threads > 1:
        for b in prange(B, nogil=True, num_threads=threads, schedule="static"):
            for q in range(Q):
                _score_one(q_re[b, q], q_im[b, q], q_norm[b, q], k_re, k_im, k_norm,
                           pools[q], t_end, exclude[b, 0], exclude[b, 1], lookback, horizon, eps,
                           out_ch[b, q], out_e[b, q], out_s[b, q], &evals[b, q])
    else:
        with nogil:
            for b in range(B):
                for q in range(Q):
                    _score_one(q_re[b, q], q_im[b, q], q_norm[b, q], k_re, k_im, k_norm,
                               pools[q], t_end, exclude[b, 0], exclude[b, 1], lookback, horizon, eps,
                               out_ch[b, q], out_e[b, q], out_s[b, q], &evals[b, q])
    return out_ch_a, out_e_a, out_s_a, evals_a
