"""NumPy implementation of the recurrent sequence kernels.

This is the reference backend: the compiled extension must accept the same
arguments, return the same arrays, and produce caches with this exact
layout. Input projections are hoisted out of the time loop into single
matrix products; only the recurrent coupling runs step by step.

Shapes (all float64, C-contiguous):
    x          [B, T, I]
    w_ih       [G*H, I]   gate blocks stacked: LSTM (i, f, g, o), GRU (r, z, n)
    w_hh       [G*H, H]
    b_ih, b_hh [G*H]
    h_seq      [B, T, H]
    grad_h_seq [B, T, H]  upstream gradient per emitted step (zeros elsewhere)
"""

from __future__ import annotations

import numpy as np


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def lstm_seq_forward(x, w_ih, w_hh, b_ih, b_hh, h0, c0):
    """Runs an LSTM over the full sequence. Returns (h_seq, cache)."""
    B, T, I = x.shape
    H = w_hh.shape[1]
    # Both bias vectors feed one preactivation, so they fold together here.
    xi = x.reshape(B * T, I) @ w_ih.T + (b_ih + b_hh)
    xi = xi.reshape(B, T, 4 * H)

    gates = np.empty((T, B, 4 * H))
    c_seq = np.empty((T, B, H))
    tanh_c = np.empty((T, B, H))
    h_seq = np.empty((B, T, H))

    h, c = h0, c0
    for t in range(T):
        pre = xi[:, t, :] + h @ w_hh.T
        i = _sigmoid(pre[:, :H])
        f = _sigmoid(pre[:, H : 2 * H])
        g = np.tanh(pre[:, 2 * H : 3 * H])
        o = _sigmoid(pre[:, 3 * H :])
        c = f * c + i * g
        tc = np.tanh(c)
        h = o * tc
        gates[t, :, :H] = i
        gates[t, :, H : 2 * H] = f
        gates[t, :, 2 * H : 3 * H] = g
        gates[t, :, 3 * H :] = o
        c_seq[t] = c
        tanh_c[t] = tc
        h_seq[:, t, :] = h
    return h_seq, (gates, c_seq, tanh_c, h0, c0)


def lstm_seq_backward(x, w_ih, w_hh, h_seq, cache, grad_h_seq):
    """Exact BPTT through :func:`lstm_seq_forward`.

    Returns (grad_x, g_wih, g_whh, g_bih, g_bhh).
    """
    gates, c_seq, tanh_c, h0, c0 = cache
    B, T, I = x.shape
    H = w_hh.shape[1]

    d_pre = np.empty((T, B, 4 * H))
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        i = gates[t, :, :H]
        f = gates[t, :, H : 2 * H]
        g = gates[t, :, 2 * H : 3 * H]
        o = gates[t, :, 3 * H :]
        c_prev = c_seq[t - 1] if t > 0 else c0
        tc = tanh_c[t]

        dh = grad_h_seq[:, t, :] + dh_next
        do = dh * tc
        dc = dh * o * (1.0 - tc * tc) + dc_next
        d_pre[t, :, :H] = dc * g * i * (1.0 - i)
        d_pre[t, :, H : 2 * H] = dc * c_prev * f * (1.0 - f)
        d_pre[t, :, 2 * H : 3 * H] = dc * i * (1.0 - g * g)
        d_pre[t, :, 3 * H :] = do * o * (1.0 - o)
        dh_next = d_pre[t] @ w_hh
        dc_next = dc * f

    h_prev = np.empty((T, B, H))
    h_prev[0] = h0
    if T > 1:
        h_prev[1:] = h_seq[:, :-1, :].transpose(1, 0, 2)

    d_pre_bt = d_pre.transpose(1, 0, 2).reshape(B * T, 4 * H)
    g_wih = d_pre_bt.T @ x.reshape(B * T, I)
    g_whh = d_pre.reshape(T * B, 4 * H).T @ h_prev.reshape(T * B, H)
    g_b = d_pre.sum(axis=(0, 1))
    grad_x = (d_pre_bt @ w_ih).reshape(B, T, I)
    return grad_x, g_wih, g_whh, g_b, g_b.copy()


def gru_seq_forward(x, w_ih, w_hh, b_ih, b_hh, h0):
    """Runs a GRU over the full sequence. Returns (h_seq, cache)."""
    B, T, I = x.shape
    H = w_hh.shape[1]
    xi = x.reshape(B * T, I) @ w_ih.T + b_ih
    xi = xi.reshape(B, T, 3 * H)

    gates = np.empty((T, B, 3 * H))
    hn_pre = np.empty((T, B, H))
    h_seq = np.empty((B, T, H))

    h = h0
    for t in range(T):
        hh = h @ w_hh.T + b_hh
        r = _sigmoid(xi[:, t, :H] + hh[:, :H])
        z = _sigmoid(xi[:, t, H : 2 * H] + hh[:, H : 2 * H])
        hn = hh[:, 2 * H :]
        n = np.tanh(xi[:, t, 2 * H :] + r * hn)
        h = (1.0 - z) * n + z * h
        gates[t, :, :H] = r
        gates[t, :, H : 2 * H] = z
        gates[t, :, 2 * H :] = n
        hn_pre[t] = hn
        h_seq[:, t, :] = h
    return h_seq, (gates, hn_pre, h0)


def gru_seq_backward(x, w_ih, w_hh, h_seq, cache, grad_h_seq):
    """Exact BPTT through :func:`gru_seq_forward`.

    Returns (grad_x, g_wih, g_whh, g_bih, g_bhh).
    """
    gates, hn_pre, h0 = cache
    B, T, I = x.shape
    H = w_hh.shape[1]

    d_pre_i = np.empty((T, B, 3 * H))
    d_pre_h = np.empty((T, B, 3 * H))
    dh_next = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        r = gates[t, :, :H]
        z = gates[t, :, H : 2 * H]
        n = gates[t, :, 2 * H :]
        hn = hn_pre[t]
        h_prev = h0 if t == 0 else h_seq[:, t - 1, :]

        dh = grad_h_seq[:, t, :] + dh_next
        dz = dh * (h_prev - n)
        dn_pre = dh * (1.0 - z) * (1.0 - n * n)
        dr_pre = dn_pre * hn * r * (1.0 - r)
        dz_pre = dz * z * (1.0 - z)

        d_pre_i[t, :, :H] = dr_pre
        d_pre_i[t, :, H : 2 * H] = dz_pre
        d_pre_i[t, :, 2 * H :] = dn_pre
        d_pre_h[t, :, :H] = dr_pre
        d_pre_h[t, :, H : 2 * H] = dz_pre
        d_pre_h[t, :, 2 * H :] = dn_pre * r
        dh_next = dh * z + d_pre_h[t] @ w_hh

    h_prev_seq = np.empty((T, B, H))
    h_prev_seq[0] = h0
    if T > 1:
        h_prev_seq[1:] = h_seq[:, :-1, :].transpose(1, 0, 2)

    d_pre_i_bt = d_pre_i.transpose(1, 0, 2).reshape(B * T, 3 * H)
    g_wih = d_pre_i_bt.T @ x.reshape(B * T, I)
    g_whh = d_pre_h.reshape(T * B, 3 * H).T @ h_prev_seq.reshape(T * B, H)
    g_bih = d_pre_i.sum(axis=(0, 1))
    g_bhh = d_pre_h.sum(axis=(0, 1))
    grad_x = (d_pre_i_bt @ w_ih).reshape(B, T, I)
    return grad_x, g_wih, g_whh, g_bih, g_bhh
