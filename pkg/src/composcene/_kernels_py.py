"""Pure-NumPy denoiser kernels: batched forward and reverse passes.

The compiled twin (composcene._core) implements the same contract with BLAS
calls and fused elementwise loops; composcene._backend picks one at import.

Kernel contract
---------------
A network is a stack of hidden layers followed by a linear read-out.  The
conditioning row q (time embedding + concept vector) enters every layer
twice: concatenated into the affine input, and through a learned per-feature
affine modulation (scale 1 + g, shift s).

    layer l:  z = h @ Wx.T + q @ Wq.T + b
              a = silu(z)
              h' = a * (1 + q @ G.T + d) + (q @ S.T + e)
    out:      eps = h @ Wx.T + q @ Wq.T + b + gate * x
              gate = h @ Vs.T + q @ Us.T + cs

The gated input skip lets the read-out scale the noised image per pixel (the
dominant term of a denoiser), with the gate driven by hidden features so
composed summands can calibrate their share.

Parameters arrive as float64 arrays:
    layers: list of (Wx, Wq, b, G, d, S, e)
    out:    (Wx, Wq, b, Vs, Us, cs)
Inputs X (B, n_pixels) and Q (B, cond_dim) are float64 C-contiguous rows.

forward(...)  -> EPS (B, n_pixels) and, when requested, the cache needed by
                 backward (per-layer inputs and pre/post activations).
backward(...) -> parameter gradients (summed over rows) and/or conditioning
                 gradients dQ (B, cond_dim), given upstream dEPS.  Any
                 row-weighting is folded into dEPS by the caller.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit as _sigmoid


def _silu(z):
    return z * _sigmoid(z)


def forward(layers, out, X, Q, want_cache=False):
    """Run the stack over rows of (X, Q); returns EPS or (EPS, cache)."""
    H = X
    cache = [] if want_cache else None
    for Wx, Wq, b, G, d, S, e in layers:
        Z = H @ Wx.T + Q @ Wq.T + b
        A = _silu(Z)
        Gm = Q @ G.T + d
        Hn = A * (1.0 + Gm) + (Q @ S.T + e)
        if want_cache:
            cache.append((H, Z, A, Gm))
        H = Hn
    Wx, Wq, b, Vs, Us, cs = out
    gate = H @ Vs.T + Q @ Us.T + cs
    EPS = H @ Wx.T + Q @ Wq.T + b + gate * X
    if want_cache:
        return EPS, (cache, H)
    return EPS


def backward(layers, out, X, Q, cache, dEPS,
             need_param_grads=True, need_q_grads=True):
    """Reverse pass. Returns (param_grads, dQ); unrequested slots are None.

    param_grads mirrors (layers, out) as ([(dWx, dWq, db, dG, dd, dS, de)...],
    (dWx, dWq, db, dVs, dUs, dcs)), each entry summed over batch rows.
    """
    layer_cache, H_last = cache
    Wx_o, Wq_o, _, Vs_o, Us_o, _ = out

    dGate = dEPS * X
    out_grads = None
    if need_param_grads:
        out_grads = (
            dEPS.T @ H_last, dEPS.T @ Q, dEPS.sum(axis=0),
            dGate.T @ H_last, dGate.T @ Q, dGate.sum(axis=0),
        )
    dH = dEPS @ Wx_o + dGate @ Vs_o
    dQ = dEPS @ Wq_o + dGate @ Us_o if need_q_grads else None

    layer_grads = [None] * len(layers) if need_param_grads else None
    for l in range(len(layers) - 1, -1, -1):
        Wx, Wq, _, G, _, S, _ = layers[l]
        H_in, Z, A, Gm = layer_cache[l]
        dA = dH * (1.0 + Gm)
        dGm = dH * A
        sig = _sigmoid(Z)
        dZ = dA * (sig * (1.0 + Z * (1.0 - sig)))
        if need_param_grads:
            layer_grads[l] = (
                dZ.T @ H_in, dZ.T @ Q, dZ.sum(axis=0),
                dGm.T @ Q, dGm.sum(axis=0),
                dH.T @ Q, dH.sum(axis=0),
            )
        if need_q_grads:
            dQ += dGm @ G + dH @ S + dZ @ Wq
        dH = dZ @ Wx
    if need_param_grads:
        return (layer_grads, out_grads), dQ
    return None, dQ
