# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled recurrent sequence kernels.

Drop-in replacement for ``kernels_py``: same signatures, same return
values, same cache layout. Matrix products go through BLAS dgemm; the gate
arithmetic runs in fused C loops, which is where this backend wins over the
NumPy one.
"""

import numpy as np

from libc.math cimport exp, tanh
from scipy.linalg.cython_blas cimport dgemm


cdef inline double sig(double z) noexcept nogil:
    cdef double e
    if z >= 0.0:
        return 1.0 / (1.0 + exp(-z))
    e = exp(z)
    return e / (1.0 + e)


cdef inline void rm_gemm(bint ta, bint tb, int m, int n, int k, double alpha,
                         double* a, int lda, double* b, int ldb,
                         double beta, double* c, int ldc) noexcept nogil:
    """C[m,n] = alpha*op(A)@op(B) + beta*C for row-major operands.

    Row-major strides map onto column-major BLAS by computing C^T = B^T A^T;
    the ld arguments are the row strides of the row-major storage.
    """
    cdef char fa = b'T' if ta else b'N'
    cdef char fb = b'T' if tb else b'N'
    dgemm(&fb, &fa, &n, &m, &k, &alpha, b, &ldb, a, &lda, &beta, c, &ldc)


def lstm_seq_forward(double[:, :, ::1] x, double[:, ::1] w_ih, double[:, ::1] w_hh,
                     double[::1] b_ih, double[::1] b_hh,
                     double[:, ::1] h0, double[:, ::1] c0):
    cdef int B = x.shape[0], T = x.shape[1], I = x.shape[2]
    cdef int H = w_hh.shape[1], G = 4 * H
    cdef int t, b, j

    xi_arr = np.empty((B, T, G))
    gates_arr = np.empty((T, B, G))
    c_arr = np.empty((T, B, H))
    tc_arr = np.empty((T, B, H))
    h_arr = np.empty((B, T, H))
    cdef double[:, :, ::1] xi = xi_arr
    cdef double[:, :, ::1] gates = gates_arr
    cdef double[:, :, ::1] c_seq = c_arr
    cdef double[:, :, ::1] tanh_c = tc_arr
    cdef double[:, :, ::1] h_seq = h_arr

    cdef double ii, ff, gg, oo, cp, cc, tc
    cdef double* hp
    cdef int ldh
    with nogil:
        rm_gemm(0, 1, B * T, G, I, 1.0, &x[0, 0, 0], I, &w_ih[0, 0], I,
                0.0, &xi[0, 0, 0], G)
        for t in range(T):
            for b in range(B):
                for j in range(G):
                    gates[t, b, j] = xi[b, t, j] + b_ih[j] + b_hh[j]
            if t == 0:
                hp = &h0[0, 0]; ldh = H
            else:
                hp = &h_seq[0, t - 1, 0]; ldh = T * H
            rm_gemm(0, 1, B, G, H, 1.0, hp, ldh, &w_hh[0, 0], H,
                    1.0, &gates[t, 0, 0], G)
            for b in range(B):
                for j in range(H):
                    ii = sig(gates[t, b, j])
                    ff = sig(gates[t, b, H + j])
                    gg = tanh(gates[t, b, 2 * H + j])
                    oo = sig(gates[t, b, 3 * H + j])
                    cp = c0[b, j] if t == 0 else c_seq[t - 1, b, j]
                    cc = ff * cp + ii * gg
                    tc = tanh(cc)
                    gates[t, b, j] = ii
                    gates[t, b, H + j] = ff
                    gates[t, b, 2 * H + j] = gg
                    gates[t, b, 3 * H + j] = oo
                    c_seq[t, b, j] = cc
                    tanh_c[t, b, j] = tc
                    h_seq[b, t, j] = oo * tc
    return h_arr, (gates_arr, c_arr, tc_arr, np.asarray(h0), np.asarray(c0))


def lstm_seq_backward(double[:, :, ::1] x, double[:, ::1] w_ih, double[:, ::1] w_hh,
                      double[:, :, ::1] h_seq, cache, double[:, :, ::1] grad_h_seq):
    gates_arr, c_arr, tc_arr, h0_arr, c0_arr = cache
    cdef double[:, :, ::1] gates = gates_arr
    cdef double[:, :, ::1] c_seq = c_arr
    cdef double[:, :, ::1] tanh_c = tc_arr
    cdef double[:, ::1] h0 = h0_arr
    cdef double[:, ::1] c0 = c0_arr

    cdef int B = x.shape[0], T = x.shape[1], I = x.shape[2]
    cdef int H = w_hh.shape[1], G = 4 * H
    cdef int t, b, j

    dpre_arr = np.empty((T, B, G))
    gx_arr = np.empty((B, T, I))
    gwih_arr = np.zeros((G, I))
    gwhh_arr = np.zeros((G, H))
    gb_arr = np.zeros(G)
    dh_arr = np.zeros((B, H))
    dc_arr = np.zeros((B, H))
    cdef double[:, :, ::1] d_pre = dpre_arr
    cdef double[:, :, ::1] grad_x = gx_arr
    cdef double[:, ::1] g_wih = gwih_arr
    cdef double[:, ::1] g_whh = gwhh_arr
    cdef double[::1] g_b = gb_arr
    cdef double[:, ::1] dh_next = dh_arr
    cdef double[:, ::1] dc_next = dc_arr

    cdef double ii, ff, gg, oo, cp, tc, dh, dc, do_
    cdef double* hp
    cdef int ldh
    with nogil:
        for t in range(T - 1, -1, -1):
            for b in range(B):
                for j in range(H):
                    ii = gates[t, b, j]
                    ff = gates[t, b, H + j]
                    gg = gates[t, b, 2 * H + j]
                    oo = gates[t, b, 3 * H + j]
                    cp = c0[b, j] if t == 0 else c_seq[t - 1, b, j]
                    tc = tanh_c[t, b, j]
                    dh = grad_h_seq[b, t, j] + dh_next[b, j]
                    do_ = dh * tc
                    dc = dh * oo * (1.0 - tc * tc) + dc_next[b, j]
                    d_pre[t, b, j] = dc * gg * ii * (1.0 - ii)
                    d_pre[t, b, H + j] = dc * cp * ff * (1.0 - ff)
                    d_pre[t, b, 2 * H + j] = dc * ii * (1.0 - gg * gg)
                    d_pre[t, b, 3 * H + j] = do_ * oo * (1.0 - oo)
                    dc_next[b, j] = dc * ff
            rm_gemm(0, 0, B, H, G, 1.0, &d_pre[t, 0, 0], G, &w_hh[0, 0], H,
                    0.0, &dh_next[0, 0], H)
        for t in range(T):
            rm_gemm(1, 0, G, I, B, 1.0, &d_pre[t, 0, 0], G, &x[0, t, 0], T * I,
                    1.0, &g_wih[0, 0], I)
            if t == 0:
                hp = &h0[0, 0]; ldh = H
            else:
                hp = &h_seq[0, t - 1, 0]; ldh = T * H
            rm_gemm(1, 0, G, H, B, 1.0, &d_pre[t, 0, 0], G, hp, ldh,
                    1.0, &g_whh[0, 0], H)
            rm_gemm(0, 0, B, I, G, 1.0, &d_pre[t, 0, 0], G, &w_ih[0, 0], I,
                    0.0, &grad_x[0, t, 0], T * I)
            for b in range(B):
                for j in range(G):
                    g_b[j] += d_pre[t, b, j]
    return gx_arr, gwih_arr, gwhh_arr, gb_arr, gb_arr.copy()


def gru_seq_forward(double[:, :, ::1] x, double[:, ::1] w_ih, double[:, ::1] w_hh,
                    double[::1] b_ih, double[::1] b_hh, double[:, ::1] h0):
    cdef int B = x.shape[0], T = x.shape[1], I = x.shape[2]
    cdef int H = w_hh.shape[1], G = 3 * H
    cdef int t, b, j

    xi_arr = np.empty((B, T, G))
    gates_arr = np.empty((T, B, G))
    hn_arr = np.empty((T, B, H))
    h_arr = np.empty((B, T, H))
    hh_arr = np.empty((B, G))
    cdef double[:, :, ::1] xi = xi_arr
    cdef double[:, :, ::1] gates = gates_arr
    cdef double[:, :, ::1] hn_pre = hn_arr
    cdef double[:, :, ::1] h_seq = h_arr
    cdef double[:, ::1] hh = hh_arr

    cdef double rr, zz, nn, hn, hprev
    cdef double* hp
    cdef int ldh
    with nogil:
        rm_gemm(0, 1, B * T, G, I, 1.0, &x[0, 0, 0], I, &w_ih[0, 0], I,
                0.0, &xi[0, 0, 0], G)
        for t in range(T):
            for b in range(B):
                for j in range(G):
                    hh[b, j] = b_hh[j]
            if t == 0:
                hp = &h0[0, 0]; ldh = H
            else:
                hp = &h_seq[0, t - 1, 0]; ldh = T * H
            rm_gemm(0, 1, B, G, H, 1.0, hp, ldh, &w_hh[0, 0], H,
                    1.0, &hh[0, 0], G)
            for b in range(B):
                for j in range(H):
                    rr = sig(xi[b, t, j] + b_ih[j] + hh[b, j])
                    zz = sig(xi[b, t, H + j] + b_ih[H + j] + hh[b, H + j])
                    hn = hh[b, 2 * H + j]
                    nn = tanh(xi[b, t, 2 * H + j] + b_ih[2 * H + j] + rr * hn)
                    hprev = h0[b, j] if t == 0 else h_seq[b, t - 1, j]
                    gates[t, b, j] = rr
                    gates[t, b, H + j] = zz
                    gates[t, b, 2 * H + j] = nn
                    hn_pre[t, b, j] = hn
                    h_seq[b, t, j] = (1.0 - zz) * nn + zz * hprev
    return h_arr, (gates_arr, hn_arr, np.asarray(h0))


def gru_seq_backward(double[:, :, ::1] x, double[:, ::1] w_ih, double[:, ::1] w_hh,
                     double[:, :, ::1] h_seq, cache, double[:, :, ::1] grad_h_seq):
    gates_arr, hn_arr, h0_arr = cache
    cdef double[:, :, ::1] gates = gates_arr
    cdef double[:, :, ::1] hn_pre = hn_arr
    cdef double[:, ::1] h0 = h0_arr

    cdef int B = x.shape[0], T = x.shape[1], I = x.shape[2]
    cdef int H = w_hh.shape[1], G = 3 * H
    cdef int t, b, j

    dpi_arr = np.empty((T, B, G))
    dph_arr = np.empty((T, B, G))
    gx_arr = np.empty((B, T, I))
    gwih_arr = np.zeros((G, I))
    gwhh_arr = np.zeros((G, H))
    gbih_arr = np.zeros(G)
    gbhh_arr = np.zeros(G)
    dh_arr = np.zeros((B, H))
    cdef double[:, :, ::1] d_pre_i = dpi_arr
    cdef double[:, :, ::1] d_pre_h = dph_arr
    cdef double[:, :, ::1] grad_x = gx_arr
    cdef double[:, ::1] g_wih = gwih_arr
    cdef double[:, ::1] g_whh = gwhh_arr
    cdef double[::1] g_bih = gbih_arr
    cdef double[::1] g_bhh = gbhh_arr
    cdef double[:, ::1] dh_next = dh_arr

    cdef double rr, zz, nn, hn, hp_val, dh, dz, dn_pre, dr_pre, dz_pre
    cdef double* hp
    cdef int ldh
    with nogil:
        for t in range(T - 1, -1, -1):
            for b in range(B):
                for j in range(H):
                    rr = gates[t, b, j]
                    zz = gates[t, b, H + j]
                    nn = gates[t, b, 2 * H + j]
                    hn = hn_pre[t, b, j]
                    hp_val = h0[b, j] if t == 0 else h_seq[b, t - 1, j]
                    dh = grad_h_seq[b, t, j] + dh_next[b, j]
                    dz = dh * (hp_val - nn)
                    dn_pre = dh * (1.0 - zz) * (1.0 - nn * nn)
                    dr_pre = dn_pre * hn * rr * (1.0 - rr)
                    dz_pre = dz * zz * (1.0 - zz)
                    d_pre_i[t, b, j] = dr_pre
                    d_pre_i[t, b, H + j] = dz_pre
                    d_pre_i[t, b, 2 * H + j] = dn_pre
                    d_pre_h[t, b, j] = dr_pre
                    d_pre_h[t, b, H + j] = dz_pre
                    d_pre_h[t, b, 2 * H + j] = dn_pre * rr
                    dh_next[b, j] = dh * zz  # direct path; recurrent part added below
            rm_gemm(0, 0, B, H, G, 1.0, &d_pre_h[t, 0, 0], G, &w_hh[0, 0], H,
                    1.0, &dh_next[0, 0], H)
        for t in range(T):
            rm_gemm(1, 0, G, I, B, 1.0, &d_pre_i[t, 0, 0], G, &x[0, t, 0], T * I,
                    1.0, &g_wih[0, 0], I)
            if t == 0:
                hp = &h0[0, 0]; ldh = H
            else:
                hp = &h_seq[0, t - 1, 0]; ldh = T * H
            rm_gemm(1, 0, G, H, B, 1.0, &d_pre_h[t, 0, 0], G, hp, ldh,
                    1.0, &g_whh[0, 0], H)
            rm_gemm(0, 0, B, I, G, 1.0, &d_pre_i[t, 0, 0], G, &w_ih[0, 0], I,
                    0.0, &grad_x[0, t, 0], T * I)
            for b in range(B):
                for j in range(G):
                    g_bih[j] += d_pre_i[t, b, j]
                    g_bhh[j] += d_pre_h[t, b, j]
    return gx_arr, gwih_arr, gwhh_arr, gbih_arr, gbhh_arr
