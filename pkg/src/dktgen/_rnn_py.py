"""Pure-numpy batched RNN recurrence and BPTT. Reference for the compiled ``_rnn`` kernel.

Shapes: ``inputs`` and ``targets`` are ``(B, L)`` int64, hidden states are returned as
``(L + 1, B, H)`` with ``hs[0]`` equal to the initial state. Only the readout logit of
each step's target skill is computed.
"""

import numpy as np


def forward(W_hx, W_hh, W_yh, b_h, b_y, h0, inputs, targets):
    B, L = inputs.shape
    H = W_hh.shape[0]
    Wx_T = np.ascontiguousarray(W_hx.T)
    Wh_T = np.ascontiguousarray(W_hh.T)
    hs = np.empty((L + 1, B, H))
    hs[0] = h0
    for t in range(L):
        z = Wx_T[inputs[:, t]]
        z += hs[t] @ Wh_T
        z += b_h
        np.tanh(z, out=hs[t + 1])
    readout = W_yh[targets]  # (B, L, H)
    logits = np.einsum("lbh,blh->bl", hs[1:], readout) + b_y[targets]
    return hs, logits


def backward(W_hx, W_hh, W_yh, b_h, b_y, h0, inputs, targets, hs, dlogits):
    B, L = inputs.shape
    H = W_hh.shape[0]
    n_in = W_hx.shape[1]
    n_out = W_yh.shape[0]
    dl = np.ascontiguousarray(dlogits, dtype=np.float64)
    dh_out = dl[:, :, None] * W_yh[targets]  # (B, L, H)
    dzs = np.empty((L, B, H))
    dnext = np.zeros((B, H))
    for t in range(L - 1, -1, -1):
        dh = dh_out[:, t] + dnext
        h = hs[t + 1]
        dz = dh * (1.0 - h * h)
        dzs[t] = dz
        dnext = dz @ W_hh
    flat_dz = dzs.reshape(L * B, H)
    dW_hh = flat_dz.T @ hs[:-1].reshape(L * B, H)
    dWx_T = np.zeros((n_in, H))
    np.add.at(dWx_T, inputs.T.reshape(-1), flat_dz)
    hs_bl = hs[1:].transpose(1, 0, 2).reshape(B * L, H)
    dW_yh = np.zeros((n_out, H))
    np.add.at(dW_yh, targets.reshape(-1), dl.reshape(-1, 1) * hs_bl)
    db_y = np.bincount(targets.reshape(-1), weights=dl.reshape(-1), minlength=n_out)
    db_h = flat_dz.sum(axis=0)
    dh0 = dnext.sum(axis=0)
    return dWx_T.T.copy(), dW_hh, dW_yh, db_h, db_y.astype(np.float64), dh0
