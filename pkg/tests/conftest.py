from __future__ import annotations

import numpy as np
import pytest

from spinvmc.ansatz import (DiagonalExtension, FullAmplitudeAnsatz,
                            MeasurementMask, RbmAnsatz, apply_measurement)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def random_full_amplitude(rng, n_sites, n_zeros=0):
    dim = 1 << n_sites
    v = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    if n_zeros:
        v[rng.choice(dim, size=n_zeros, replace=False)] = 0.0
    return FullAmplitudeAnsatz(v, n_sites)


def random_rbm(rng, n_sites, alpha=1, scale=0.3):
    m = alpha * n_sites

    def g(*shape):
        return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))

    return RbmAnsatz(g(n_sites), g(m), g(m, n_sites))


def random_masked_rbm(rng, n_sites, alpha=1, scale=0.3, measured=((0, "down"),)):
    edges = tuple((i, (i + 1) % n_sites) for i in range(n_sites))
    state = MeasurementMask.wrap(
        DiagonalExtension.wrap(random_rbm(rng, n_sites, alpha, scale), edges))
    for site, outcome in measured:
        state = apply_measurement(state, site, outcome)
    return state


def fd_gradient(fun, theta, h=1e-6):
    """Central-difference holomorphic-conjugate gradient d f / d conj(theta)."""
    g = np.zeros(len(theta), dtype=complex)
    for k in range(len(theta)):
        e = np.zeros(len(theta), dtype=complex)
        e[k] = 1.0
        d_re = (fun(theta + h * e) - fun(theta - h * e)) / (2 * h)
        d_im = (fun(theta + 1j * h * e) - fun(theta - 1j * h * e)) / (2 * h)
        g[k] = (d_re + 1j * d_im) / 2.0
    return g


def fit_slope(x, y):
    return float(np.polyfit(np.log(np.asarray(x)), np.log(np.asarray(y)), 1)[0])
