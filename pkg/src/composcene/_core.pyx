# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled denoiser kernels: BLAS matmuls plus fused elementwise loops.

Implements the same forward/backward contract as composcene._kernels_py
(see that module for the layer equations and the argument layout); the two
backends agree to floating-point roundoff and are selected in _backend.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()


cdef inline double _sig(double z) noexcept nogil:
    cdef double e
    if z >= 0.0:
        e = exp(-z)
        return 1.0 / (1.0 + e)
    e = exp(z)
    return e / (1.0 + e)


# Row-major wrappers around Fortran dgemm (swap operands, compute C^T).

cdef void _gemm_nt(double[:, ::1] A, double[:, ::1] B, double[:, ::1] C,
                   double beta) noexcept nogil:
    """C (m,n) = A (m,k) @ B (n,k)^T + beta * C"""
    cdef int m = A.shape[0], k = A.shape[1], n = B.shape[0]
    cdef double alpha = 1.0
    dgemm("T", "N", &n, &m, &k, &alpha, &B[0, 0], &k, &A[0, 0], &k,
          &beta, &C[0, 0], &n)


cdef void _gemm_nn(double[:, ::1] A, double[:, ::1] B, double[:, ::1] C,
                   double beta) noexcept nogil:
    """C (m,n) = A (m,k) @ B (k,n) + beta * C"""
    cdef int m = A.shape[0], k = A.shape[1], n = B.shape[1]
    cdef double alpha = 1.0
    dgemm("N", "N", &n, &m, &k, &alpha, &B[0, 0], &n, &A[0, 0], &k,
          &beta, &C[0, 0], &n)


cdef void _gemm_tn(double[:, ::1] A, double[:, ::1] B, double[:, ::1] C,
                   double beta) noexcept nogil:
    """C (m,n) = A (k,m)^T @ B (k,n) + beta * C"""
    cdef int k = A.shape[0], m = A.shape[1], n = B.shape[1]
    cdef double alpha = 1.0
    dgemm("N", "T", &n, &m, &k, &alpha, &B[0, 0], &n, &A[0, 0], &m,
          &beta, &C[0, 0], &n)


cdef void _colsum(double[:, ::1] M, double[::1] out) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef Py_ssize_t rows = M.shape[0], cols = M.shape[1]
    for j in range(cols):
        out[j] = 0.0
    for i in range(rows):
        for j in range(cols):
            out[j] += M[i, j]


cdef void _fuse_forward(double[:, ::1] Z, double[::1] b, double[:, ::1] A,
                        double[:, ::1] Gm, double[::1] d, double[:, ::1] Sm,
                        double[::1] e, double[:, ::1] Hn) noexcept nogil:
    """Finish one hidden layer in place:
    Z += b; A = silu(Z); Gm += d; Hn = A * (1 + Gm) + (Sm + e)."""
    cdef Py_ssize_t i, j
    cdef Py_ssize_t rows = Z.shape[0], cols = Z.shape[1]
    cdef double z, a, gm
    for i in range(rows):
        for j in range(cols):
            z = Z[i, j] + b[j]
            Z[i, j] = z
            a = z * _sig(z)
            A[i, j] = a
            gm = Gm[i, j] + d[j]
            Gm[i, j] = gm
            Hn[i, j] = a * (1.0 + gm) + (Sm[i, j] + e[j])


cdef void _add_bias(double[:, ::1] M, double[::1] b) noexcept nogil:
    cdef Py_ssize_t i, j
    for i in range(M.shape[0]):
        for j in range(M.shape[1]):
            M[i, j] += b[j]


cdef void _fuse_backward(double[:, ::1] dH, double[:, ::1] Z,
                         double[:, ::1] A, double[:, ::1] Gm,
                         double[:, ::1] dGm, double[:, ::1] dZ) noexcept nogil:
    """dGm = dH * A; dZ = dH * (1 + Gm) * silu'(Z)."""
    cdef Py_ssize_t i, j
    cdef double s, z, dh
    for i in range(dH.shape[0]):
        for j in range(dH.shape[1]):
            dh = dH[i, j]
            dGm[i, j] = dh * A[i, j]
            z = Z[i, j]
            s = _sig(z)
            dZ[i, j] = dh * (1.0 + Gm[i, j]) * (s * (1.0 + z * (1.0 - s)))


def forward(layers, out, X, Q, want_cache=False):
    """Run the stack over rows of (X, Q); returns EPS or (EPS, cache)."""
    cdef double[:, ::1] H
    cdef double[:, ::1] Qv = np.ascontiguousarray(Q, dtype=np.float64)
    cdef double[:, ::1] Z, A, Gm, Sm, Hn, EPS
    cdef double[:, ::1] Wx, Wq, G, S
    cdef double[::1] b, d, e

    cache = [] if want_cache else None
    H_arr = np.ascontiguousarray(X, dtype=np.float64)
    cdef Py_ssize_t B = H_arr.shape[0]
    for Wx_a, Wq_a, b_a, G_a, d_a, S_a, e_a in layers:
        Wx = Wx_a; Wq = Wq_a; b = b_a; G = G_a; d = d_a; S = S_a; e = e_a
        h = Wx.shape[0]
        Z_arr = np.empty((B, h))
        A_arr = np.empty((B, h))
        Gm_arr = np.empty((B, h))
        Sm_arr = np.empty((B, h))
        Hn_arr = np.empty((B, h))
        Z = Z_arr; A = A_arr; Gm = Gm_arr; Sm = Sm_arr; Hn = Hn_arr
        H = H_arr
        with nogil:
            _gemm_nt(H, Wx, Z, 0.0)
            _gemm_nt(Qv, Wq, Z, 1.0)
            _gemm_nt(Qv, G, Gm, 0.0)
            _gemm_nt(Qv, S, Sm, 0.0)
            _fuse_forward(Z, b, A, Gm, d, Sm, e, Hn)
        if want_cache:
            cache.append((H_arr, Z_arr, A_arr, Gm_arr))
        H_arr = Hn_arr

    Wx_a, Wq_a, b_a, Vs_a, Us_a, cs_a = out
    Wx = Wx_a; Wq = Wq_a; b = b_a
    cdef double[:, ::1] Vs = Vs_a, Us = Us_a
    cdef double[::1] cs = cs_a
    EPS_arr = np.empty((B, Wx.shape[0]))
    gate_arr = np.empty((B, Wx.shape[0]))
    EPS = EPS_arr
    cdef double[:, ::1] gate = gate_arr
    cdef double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    H = H_arr
    cdef Py_ssize_t i, j
    with nogil:
        _gemm_nt(H, Wx, EPS, 0.0)
        _gemm_nt(Qv, Wq, EPS, 1.0)
        _gemm_nt(H, Vs, gate, 0.0)
        _gemm_nt(Qv, Us, gate, 1.0)
        for i in range(B):
            for j in range(EPS.shape[1]):
                EPS[i, j] += b[j] + (gate[i, j] + cs[j]) * Xv[i, j]
    if want_cache:
        return EPS_arr, (cache, H_arr)
    return EPS_arr


def backward(layers, out, X, Q, cache, dEPS,
             need_param_grads=True, need_q_grads=True):
    """Reverse pass; mirrors _kernels_py.backward's return structure."""
    layer_cache, H_last = cache
    cdef double[:, ::1] Qv = np.ascontiguousarray(Q, dtype=np.float64)
    cdef double[:, ::1] dE = np.ascontiguousarray(dEPS, dtype=np.float64)
    cdef double[:, ::1] Hl = np.ascontiguousarray(H_last, dtype=np.float64)
    cdef double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef Py_ssize_t B = dE.shape[0]
    cdef bint want_p = bool(need_param_grads)
    cdef bint want_q = bool(need_q_grads)

    cdef double[:, ::1] Wx, Wq, G, S, Vs, Us
    cdef double[:, ::1] Hin, Z, A, Gm
    cdef double[:, ::1] dH, dHprev, dZ, dGm, dQ, dGate
    cdef double[:, ::1] dWx, dWq, dG, dS
    cdef double[::1] db, dd, de
    cdef Py_ssize_t i, j

    Wx_o, Wq_o, _bo, Vs_o, Us_o, _cso = out
    dGate_arr = np.empty((B, dE.shape[1]))
    dGate = dGate_arr
    with nogil:
        for i in range(B):
            for j in range(dE.shape[1]):
                dGate[i, j] = dE[i, j] * Xv[i, j]

    out_grads = None
    if want_p:
        dWxo_arr = np.empty((dE.shape[1], Hl.shape[1]))
        dWqo_arr = np.empty((dE.shape[1], Qv.shape[1]))
        dbo_arr = np.empty(dE.shape[1])
        dVso_arr = np.empty((dE.shape[1], Hl.shape[1]))
        dUso_arr = np.empty((dE.shape[1], Qv.shape[1]))
        dcso_arr = np.empty(dE.shape[1])
        dWx = dWxo_arr; dWq = dWqo_arr; db = dbo_arr
        dG = dVso_arr; dS = dUso_arr; dd = dcso_arr
        with nogil:
            _gemm_tn(dE, Hl, dWx, 0.0)
            _gemm_tn(dE, Qv, dWq, 0.0)
            _colsum(dE, db)
            _gemm_tn(dGate, Hl, dG, 0.0)
            _gemm_tn(dGate, Qv, dS, 0.0)
            _colsum(dGate, dd)
        out_grads = (dWxo_arr, dWqo_arr, dbo_arr, dVso_arr, dUso_arr, dcso_arr)

    Wx = Wx_o
    Vs = Vs_o
    dH_arr = np.empty((B, Wx.shape[1]))
    dH = dH_arr
    with nogil:
        _gemm_nn(dE, Wx, dH, 0.0)
        _gemm_nn(dGate, Vs, dH, 1.0)
    dQ_arr = None
    if want_q:
        Wq = Wq_o
        Us = Us_o
        dQ_arr = np.empty((B, Qv.shape[1]))
        dQ = dQ_arr
        with nogil:
            _gemm_nn(dE, Wq, dQ, 0.0)
            _gemm_nn(dGate, Us, dQ, 1.0)

    layer_grads = [None] * len(layers) if want_p else None
    cdef Py_ssize_t l
    for l in range(len(layers) - 1, -1, -1):
        Wx_a, Wq_a, _b, G_a, _d, S_a, _e = layers[l]
        Hin_a, Z_a, A_a, Gm_a = layer_cache[l]
        Wx = Wx_a; Wq = Wq_a; G = G_a; S = S_a
        Hin = Hin_a; Z = Z_a; A = A_a; Gm = Gm_a
        h = Z.shape[1]
        dGm_arr = np.empty((B, h))
        dZ_arr = np.empty((B, h))
        dGm = dGm_arr; dZ = dZ_arr
        with nogil:
            _fuse_backward(dH, Z, A, Gm, dGm, dZ)
        if want_p:
            dWx_arr = np.empty((h, Hin.shape[1]))
            dWq_arr = np.empty((h, Qv.shape[1]))
            db_arr = np.empty(h)
            dG_arr = np.empty((h, Qv.shape[1]))
            dd_arr = np.empty(h)
            dS_arr = np.empty((h, Qv.shape[1]))
            de_arr = np.empty(h)
            dWx = dWx_arr; dWq = dWq_arr; db = db_arr
            dG = dG_arr; dd = dd_arr; dS = dS_arr; de = de_arr
            with nogil:
                _gemm_tn(dZ, Hin, dWx, 0.0)
                _gemm_tn(dZ, Qv, dWq, 0.0)
                _colsum(dZ, db)
                _gemm_tn(dGm, Qv, dG, 0.0)
                _colsum(dGm, dd)
                _gemm_tn(dH, Qv, dS, 0.0)
                _colsum(dH, de)
            layer_grads[l] = (dWx_arr, dWq_arr, db_arr, dG_arr, dd_arr,
                              dS_arr, de_arr)
        if want_q:
            with nogil:
                _gemm_nn(dGm, G, dQ, 1.0)
                _gemm_nn(dH, S, dQ, 1.0)
                _gemm_nn(dZ, Wq, dQ, 1.0)
        dHprev_arr = np.empty((B, Wx.shape[1]))
        dHprev = dHprev_arr
        with nogil:
            _gemm_nn(dZ, Wx, dHprev, 0.0)
        dH_arr = dHprev_arr
        dH = dH_arr

    if want_p:
        return (layer_grads, out_grads), dQ_arr
    return None, dQ_arr
