"""Both kernel backends must agree; sampling is deterministic per backend."""

import numpy as np
import pytest

from spinvmc import _kernels


def _walk_inputs(rng, n_sites=4, n_chains=3, n_keep=50, stride=4, burn=20):
    dim = 1 << n_sites
    table = rng.normal(size=dim)
    total = burn + n_keep * stride
    starts = rng.integers(0, dim, size=n_chains).astype(np.int64)
    masks = (np.int64(1) << rng.integers(0, n_sites, size=(n_chains, total))).astype(np.int64)
    accept = rng.random((n_chains, total))
    return table, starts, masks, accept, burn, stride, n_keep


def test_metropolis_paths_bit_identical(rng):
    table, starts, masks, accept, burn, stride, keep = _walk_inputs(rng)
    out_a = np.empty((3, keep), dtype=np.int64)
    out_b = np.empty((3, keep), dtype=np.int64)
    acc_a = _kernels._metropolis_table_walk_seq(table, starts, masks, accept,
                                                burn, stride, out_a)
    acc_b = _kernels._metropolis_table_walk_np(table, starts, masks, accept,
                                               burn, stride, out_b)
    assert acc_a == acc_b
    assert np.array_equal(out_a, out_b)


def test_metropolis_dispatch_matches_reference(rng):
    table, starts, masks, accept, burn, stride, keep = _walk_inputs(rng)
    out = np.empty((3, keep), dtype=np.int64)
    ref = np.empty((3, keep), dtype=np.int64)
    acc = _kernels.metropolis_table_walk(table, starts, masks, accept,
                                         burn, stride, out)
    acc_ref = _kernels._metropolis_table_walk_seq(table, starts, masks, accept,
                                                  burn, stride, ref)
    assert acc == acc_ref
    assert np.array_equal(out, ref)


def test_metropolis_never_visits_forbidden(rng):
    # a -1e300 table entry is never accepted once the chain starts elsewhere
    table = np.array([0.0, -1e300, 0.3, 0.1])
    starts = np.zeros(2, dtype=np.int64)
    masks = (np.int64(1) << rng.integers(0, 2, size=(2, 400))).astype(np.int64)
    accept = rng.random((2, 400))
    out = np.empty((2, 80), dtype=np.int64)
    _kernels.metropolis_table_walk(table, starts, masks, accept, 0, 5, out)
    assert not np.any(out == 1)


def test_rbm_kernel_against_direct(rng):
    n, m, batch = 5, 7, 64
    a = rng.normal(size=n) + 1j * rng.normal(size=n)
    b = rng.normal(size=m) + 1j * rng.normal(size=m)
    W = rng.normal(size=(m, n)) + 1j * rng.normal(size=(m, n))
    bits = rng.integers(0, 1 << n, size=batch).astype(np.int64)
    got = _kernels.rbm_log_amplitudes(bits, n, a, b, W)
    s = 2.0 * (((bits[:, None] >> np.arange(n)) & 1)) - 1.0
    theta = b[None, :] + s @ W.T
    want = s @ a + np.sum(np.log(2.0 * np.cosh(theta)), axis=1)
    assert np.allclose(got, want, atol=1e-12)


def test_rbm_kernel_paths_agree(rng):
    n, m, batch = 6, 6, 32
    a = rng.normal(size=n) + 1j * rng.normal(size=n)
    b = rng.normal(size=m) + 1j * rng.normal(size=m)
    W = rng.normal(size=(m, n)) + 1j * rng.normal(size=(m, n))
    bits = rng.integers(0, 1 << n, size=batch).astype(np.int64)
    out_np = np.empty(batch, dtype=complex)
    _kernels._rbm_log_amplitudes_np(bits, n, a, b, W, out_np)
    out_seq = np.empty(batch, dtype=complex)
    _kernels._rbm_log_amplitudes_seq(bits, n, a, b, W, out_seq)
    assert np.allclose(out_np, out_seq, atol=1e-12)


def test_rbm_kernel_large_activation_stable(rng):
    # big |Re theta| must not overflow the cosh
    n, m = 3, 2
    a = np.zeros(n, complex)
    b = np.array([400.0 + 0.3j, -380.0 + 0.1j])
    W = np.zeros((m, n), complex)
    bits = np.arange(1 << n, dtype=np.int64)
    vals = _kernels.rbm_log_amplitudes(bits, n, a, b, W)
    assert np.all(np.isfinite(vals))
    assert np.allclose(vals.real, 400.0 + 380.0, atol=1e-9)


def test_backend_flag_reported():
    assert _kernels.backend_name() in ("numba", "numpy")
