# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled batched RNN recurrence and BPTT; same contract as ``_rnn_py``.

Matrix products go straight to BLAS (``scipy.linalg.cython_blas``) so the per-step
cost carries no interpreter overhead. Row-major arrays are handed to column-major
dgemm as their transposes.
"""

import numpy as np
cimport numpy as cnp
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()


def forward(W_hx, W_hh, W_yh, b_h, b_y, h0, inputs, targets):
    cdef double[:, ::1] Wx_T = np.ascontiguousarray(np.asarray(W_hx, dtype=np.float64).T)
    cdef double[:, ::1] Wh = np.ascontiguousarray(W_hh, dtype=np.float64)
    cdef double[:, ::1] Wy = np.ascontiguousarray(W_yh, dtype=np.float64)
    cdef double[::1] bh = np.ascontiguousarray(b_h, dtype=np.float64)
    cdef double[::1] by = np.ascontiguousarray(b_y, dtype=np.float64)
    cdef double[::1] init = np.ascontiguousarray(h0, dtype=np.float64)
    cdef cnp.int64_t[:, ::1] inp = np.ascontiguousarray(inputs, dtype=np.int64)
    cdef cnp.int64_t[:, ::1] tgt = np.ascontiguousarray(targets, dtype=np.int64)
    cdef int B = inp.shape[0], L = inp.shape[1], H = Wh.shape[0]
    hs_arr = np.empty((L + 1, B, H))
    logits_arr = np.empty((B, L))
    cdef double[:, :, ::1] hs = hs_arr
    cdef double[:, ::1] logits = logits_arr
    cdef int t, b, j, k
    cdef double acc
    cdef double one = 1.0
    cdef char trans_t = b'T', trans_n = b'N'

    for b in range(B):
        for j in range(H):
            hs[0, b, j] = init[j]
    for t in range(L):
        for b in range(B):
            k = inp[b, t]
            for j in range(H):
                hs[t + 1, b, j] = Wx_T[k, j] + bh[j]
        if B > 0 and H > 0:
            # Z^T (H x B) += W_hh (H x H) @ Hprev^T (H x B)
            dgemm(&trans_t, &trans_n, &H, &B, &H, &one, &Wh[0, 0], &H,
                  &hs[t, 0, 0], &H, &one, &hs[t + 1, 0, 0], &H)
        # numpy's SIMD tanh is several times faster than a scalar libm loop
        step = hs_arr[t + 1]
        np.tanh(step, out=step)
        for b in range(B):
            k = tgt[b, t]
            acc = by[k]
            for j in range(H):
                acc = acc + Wy[k, j] * hs[t + 1, b, j]
            logits[b, t] = acc
    return hs_arr, logits_arr


def backward(W_hx, W_hh, W_yh, b_h, b_y, h0, inputs, targets, hs_in, dlogits):
    cdef double[:, ::1] Wh = np.ascontiguousarray(W_hh, dtype=np.float64)
    cdef double[:, ::1] Wy = np.ascontiguousarray(W_yh, dtype=np.float64)
    cdef cnp.int64_t[:, ::1] inp = np.ascontiguousarray(inputs, dtype=np.int64)
    cdef cnp.int64_t[:, ::1] tgt = np.ascontiguousarray(targets, dtype=np.int64)
    cdef double[:, :, ::1] hs = np.ascontiguousarray(hs_in, dtype=np.float64)
    cdef double[:, ::1] dl = np.ascontiguousarray(dlogits, dtype=np.float64)
    cdef int B = inp.shape[0], L = inp.shape[1], H = Wh.shape[0]
    cdef int n_in = np.asarray(W_hx).shape[1], n_out = Wy.shape[0]
    cdef int N = L * B

    dzs_arr = np.empty((L, B, H))
    dnext_arr = np.zeros((B, H))
    dWx_T_arr = np.zeros((n_in, H))
    dWh_arr = np.zeros((H, H))
    dWy_arr = np.zeros((n_out, H))
    dbh_arr = np.zeros(H)
    dby_arr = np.zeros(n_out)
    dh0_arr = np.zeros(H)
    cdef double[:, :, ::1] dzs = dzs_arr
    cdef double[:, ::1] dnext = dnext_arr
    cdef double[:, ::1] dWx_T = dWx_T_arr
    cdef double[:, ::1] dWh = dWh_arr
    cdef double[:, ::1] dWy = dWy_arr
    cdef double[::1] dbh = dbh_arr
    cdef double[::1] dby = dby_arr
    cdef double[::1] dh0 = dh0_arr
    cdef int t, b, j, k
    cdef double g, h, dz
    cdef double one = 1.0, zero = 0.0
    cdef char trans_t = b'T', trans_n = b'N'

    for t in range(L - 1, -1, -1):
        for b in range(B):
            k = tgt[b, t]
            g = dl[b, t]
            if g != 0.0:
                dby[k] += g
            for j in range(H):
                h = hs[t + 1, b, j]
                if g != 0.0:
                    dWy[k, j] += g * h
                dz = (g * Wy[k, j] + dnext[b, j]) * (1.0 - h * h)
                dzs[t, b, j] = dz
                dbh[j] += dz
            k = inp[b, t]
            for j in range(H):
                dWx_T[k, j] += dzs[t, b, j]
        if B > 0 and H > 0:
            # dnext^T (H x B) = W_hh^T (H x H) @ dz^T (H x B)
            dgemm(&trans_n, &trans_n, &H, &B, &H, &one, &Wh[0, 0], &H,
                  &dzs[t, 0, 0], &H, &zero, &dnext[0, 0], &H)
    if N > 0 and H > 0:
        # dW_hh^T (H x H) = Hprev^T (H x N) @ dz (N x H)
        dgemm(&trans_n, &trans_t, &H, &H, &N, &one, &hs[0, 0, 0], &H,
              &dzs[0, 0, 0], &H, &zero, &dWh[0, 0], &H)
    for b in range(B):
        for j in range(H):
            dh0[j] += dnext[b, j]
    return dWx_T_arr.T.copy(), dWh_arr, dWy_arr, dbh_arr, dby_arr, dh0_arr
