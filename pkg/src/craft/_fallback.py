"""Pure numpy implementation of the scoring kernel.

Same signature and results as the compiled ``_kernels.score_topk``. The inner
product is accumulated bin by bin (vectorized over candidates) so the rounding
sequence is identical to the compiled scalar loop.
"""

from __future__ import annotations

import numpy as np


def score_topk(
    q_re, q_im, q_norm, k_re, k_im, k_norm, pools, t_end, exclude,
    lookback, horizon, r, eps, threads=1,
):
    B, Q, F = q_re.shape
    N = k_re.shape[1]
    out_ch = np.full((B, Q, r), -1, dtype=np.int64)
    out_e = np.full((B, Q, r), -1, dtype=np.int64)
    out_s = np.full((B, Q, r), np.nan)
    evals = np.zeros((B, Q), dtype=np.int64)

    lo = exclude[:, 0][:, None]
    hi = exclude[:, 1][:, None]
    start = (t_end - lookback + 1)[None, :]
    stop = (t_end + horizon)[None, :]
    excluded = (lo <= hi) & (start <= hi) & (stop >= lo)  # (B, N)
    entry_ids = np.arange(N, dtype=np.int64)

    for q in range(Q):
        pool = pools[q][pools[q] >= 0]
        P = len(pool)
        kr = k_re[pool].reshape(P * N, F)
        ki = k_im[pool].reshape(P * N, F)
        kn = k_norm[pool].reshape(P * N)
        acc = np.zeros((B, P * N))
        for f in range(F):
            acc += q_re[:, q, f, None] * kr[None, :, f] + q_im[:, q, f, None] * ki[None, :, f]
        scores = acc / (q_norm[:, q, None] * kn[None, :] + eps)
        valid = ~np.tile(excluded, (1, P))
        cand_ch = np.repeat(pool, N)
        cand_e = np.tile(entry_ids, P)
        evals[:, q] = valid.sum(axis=1)
        for b in range(B):
            idx = np.flatnonzero(valid[b])
            if len(idx) == 0:
                continue
            s = scores[b, idx]
            if len(idx) > r:
                kth = np.partition(s, len(s) - r)[len(s) - r]
                keep = s >= kth
                idx, s = idx[keep], s[keep]
            order = np.lexsort((cand_e[idx], cand_ch[idx], -s))[:r]
            k = len(order)
            out_ch[b, q, :k] = cand_ch[idx[order]]
            out_e[b, q, :k] = cand_e[idx[order]]
            out_s[b, q, :k] = s[order]
    return out_ch, out_e, out_s, evals
