"""Hot numeric kernels with numba-compiled and pure-numpy implementations.

The compiled path is used when numba imports cleanly and the environment
variable ``SPINVMC_PURE_NUMPY`` is unset/empty; setting it to any non-empty
value selects the pure-numpy fallbacks.  Both paths consume identical
pre-drawn random arrays, so sampler output is reproducible within a backend.
``benchmarks/bench_kernels.py`` times the two side by side.
"""

from __future__ import annotations

import cmath
import os

import numpy as np

_FORCE_NUMPY = bool(os.environ.get("SPINVMC_PURE_NUMPY"))

try:  # pragma: no cover - exercised implicitly by backend selection
    if _FORCE_NUMPY:
        raise ImportError("pure-numpy path requested")
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover
    HAS_NUMBA = False

    def njit(*args, **kwargs):  # type: ignore[misc]
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap

USE_NUMBA = HAS_NUMBA and not _FORCE_NUMPY


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# Metropolis walk over a tabulated log-weight (single-site flip proposals).
# ---------------------------------------------------------------------------

def _metropolis_table_walk_seq(log_weights, start, flip_masks, accept_u,
                               burn_in, stride, out):
    """Scalar reference walk; shapes: start (C,), flip_masks/accept_u (C, T),
    out (C, K) with T = burn_in + K * stride.  Returns accepted count."""
    n_chains, n_prop = flip_masks.shape
    n_keep = out.shape[1]
    accepted = 0
    for c in range(n_chains):
        idx = start[c]
        lw = log_weights[idx]
        k = 0
        t = 0
        for t in range(n_prop):
            prop = idx ^ flip_masks[c, t]
            lw_new = log_weights[prop]
            d = lw_new - lw
            if d >= 0.0 or accept_u[c, t] < np.exp(d):
                idx = prop
                lw = lw_new
                accepted += 1
            if t >= burn_in and (t - burn_in + 1) % stride == 0:
                if k < n_keep:
                    out[c, k] = idx
                    k += 1
    return accepted


def _metropolis_table_walk_np(log_weights, start, flip_masks, accept_u,
                              burn_in, stride, out):
    """Chain-vectorized numpy walk, same proposal/acceptance stream layout."""
    n_chains, n_prop = flip_masks.shape
    n_keep = out.shape[1]
    idx = start.copy()
    lw = log_weights[idx]
    accepted = 0
    k = 0
    for t in range(n_prop):
        prop = idx ^ flip_masks[:, t]
        lw_new = log_weights[prop]
        d = lw_new - lw
        acc = (d >= 0.0) | (accept_u[:, t] < np.exp(np.minimum(d, 0.0)))
        idx = np.where(acc, prop, idx)
        lw = np.where(acc, lw_new, lw)
        accepted += int(acc.sum())
        if t >= burn_in and (t - burn_in + 1) % stride == 0 and k < n_keep:
            out[:, k] = idx
            k += 1
    return accepted


if USE_NUMBA:
    _metropolis_table_walk_jit = njit(cache=True)(_metropolis_table_walk_seq)

    def metropolis_table_walk(log_weights, start, flip_masks, accept_u,
                              burn_in, stride, out):
        return _metropolis_table_walk_jit(log_weights, start, flip_masks,
                                          accept_u, burn_in, stride, out)
else:
    metropolis_table_walk = _metropolis_table_walk_np


# ---------------------------------------------------------------------------
# RBM batch log-amplitudes from bit patterns.
# log psi = sum_i a_i s_i + sum_j log(2 cosh(b_j + sum_i W_ji s_i)), s = +-1.
# ---------------------------------------------------------------------------

def _rbm_log_amplitudes_seq(bits, n_sites, a, b, W, out):
    n_hidden = b.shape[0]
    for q in range(bits.shape[0]):
        pattern = bits[q]
        acc = 0.0 + 0.0j
        for i in range(n_sites):
            s = 2.0 * ((pattern >> i) & 1) - 1.0
            acc += a[i] * s
        for j in range(n_hidden):
            theta = b[j]
            for i in range(n_sites):
                s = 2.0 * ((pattern >> i) & 1) - 1.0
                theta += W[j, i] * s
            if theta.real < 0.0:
                theta = -theta
            acc += theta + cmath.log(1.0 + cmath.exp(-2.0 * theta))
        out[q] = acc


def _rbm_log_amplitudes_np(bits, n_sites, a, b, W, out):
    s = 2.0 * (((np.asarray(bits, dtype=np.int64)[:, None] >> np.arange(n_sites)) & 1)) - 1.0
    theta = b[None, :] + s @ W.T
    flip = theta.real < 0.0
    theta = np.where(flip, -theta, theta)
    # log(2 cosh t) = t + log(1 + exp(-2t)) for Re t >= 0 (complex log1p unsupported)
    out[:] = s @ a + np.sum(theta + np.log(1.0 + np.exp(-2.0 * theta)), axis=1)


if USE_NUMBA:
    _rbm_log_amplitudes_jit = njit(cache=True)(_rbm_log_amplitudes_seq)

    def rbm_log_amplitudes(bits, n_sites, a, b, W):
        out = np.empty(len(bits), dtype=np.complex128)
        _rbm_log_amplitudes_jit(np.ascontiguousarray(bits, dtype=np.int64),
                                n_sites,
                                np.ascontiguousarray(a),
                                np.ascontiguousarray(b),
                                np.ascontiguousarray(W), out)
        return out
else:

    def rbm_log_amplitudes(bits, n_sites, a, b, W):
        out = np.empty(len(bits), dtype=np.complex128)
        _rbm_log_amplitudes_np(bits, n_sites, a, b, W, out)
        return out
