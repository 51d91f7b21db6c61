"""Exact dense state-vector reference engine (ground truth for tests).

Propagation uses eigendecomposition of the densified Hamiltonian, cached per
Hamiltonian object for time-independent problems.  Infidelity is computed
from the orthogonal projection residual, which stays accurate far below
double-precision cancellation of 1 - |<a|b>|^2.
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass

import numpy as np

from .ansatz import VariationalState
from .errors import CapacityError, DegenerateStateError
from .hilbert import Partition, all_bits, check_dense_capacity
from .operators import Hamiltonian

_eig_cache: "weakref.WeakKeyDictionary[Hamiltonian, tuple]" = weakref.WeakKeyDictionary()


@dataclass(frozen=True)
class DenseState:
    """A full complex amplitude vector over the 2^N basis configurations."""

    amplitudes: np.ndarray
    n_sites: int

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex)
        if amps.shape != (1 << self.n_sites,):
            raise ValueError("amplitude vector length must be 2^n_sites")
        if not np.all(np.isfinite(amps)):
            raise ValueError("amplitudes must be finite")
        object.__setattr__(self, "amplitudes", amps)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def normalized(self) -> "DenseState":
        n = self.norm
        if n == 0.0:
            raise DegenerateStateError("cannot normalize the zero state")
        return DenseState(self.amplitudes / n, self.n_sites)

    def sigma_z_expectation(self, site: int) -> float:
        p = np.abs(self.amplitudes) ** 2
        s = 2.0 * ((all_bits(self.n_sites) >> site) & 1) - 1.0
        return float(np.sum(p * s) / np.sum(p))

    def sigma_zz_expectation(self, site_i: int, site_j: int) -> float:
        bits = all_bits(self.n_sites)
        p = np.abs(self.amplitudes) ** 2
        si = 2.0 * ((bits >> site_i) & 1) - 1.0
        sj = 2.0 * ((bits >> site_j) & 1) - 1.0
        return float(np.sum(p * si * sj) / np.sum(p))


def _eigendecomposition(h: Hamiltonian, time: float | None):
    if not h.is_time_dependent():
        cached = _eig_cache.get(h)
        if cached is None:
            m = h.dense()
            cached = np.linalg.eigh(m)
            _eig_cache[h] = cached
        return cached
    return np.linalg.eigh(h.dense(time))


def evolve(state: DenseState, hamiltonian: Hamiltonian, dt: float,
           time: float | None = None) -> DenseState:
    """exp(-i H dt)|psi>; time-dependent H is frozen at the midpoint
    time + dt/2 (second-order accurate per step)."""
    if hamiltonian.n_sites != state.n_sites:
        raise CapacityError("Hamiltonian size does not match the state")
    check_dense_capacity(state.n_sites)
    t_eval = None
    if hamiltonian.is_time_dependent():
        t_eval = (time if time is not None else 0.0) + 0.5 * dt
    evals, evecs = _eigendecomposition(hamiltonian, t_eval)
    coeff = evecs.conj().T @ state.amplitudes
    return DenseState(evecs @ (np.exp(-1j * evals * dt) * coeff), state.n_sites)


def project_and_normalize(state: DenseState, site: int, outcome: str):
    """Apply (1 +- sigma_z)/2 on one site; returns the normalized
    post-measurement state and the pre-measurement outcome probability."""
    if outcome not in ("up", "down"):
        raise ValueError("outcome must be 'up' or 'down'")
    bits = all_bits(state.n_sites)
    keep = ((bits >> site) & 1) == (1 if outcome == "up" else 0)
    p_tot = np.sum(np.abs(state.amplitudes) ** 2)
    prob = float(np.sum(np.abs(state.amplitudes[keep]) ** 2) / p_tot)
    if prob == 0.0:
        raise DegenerateStateError(
            f"outcome {outcome!r} on site {site} has zero probability")
    post = np.where(keep, state.amplitudes, 0.0)
    return DenseState(post / np.linalg.norm(post), state.n_sites), prob


def infidelity(state_a: DenseState, state_b: DenseState) -> float:
    """1 - |<a|b>|^2 / (<a|a><b|b>), via the projection residual of b on a."""
    a, b = state_a.amplitudes, state_b.amplitudes
    na = np.vdot(a, a).real
    nb = np.vdot(b, b).real
    if na == 0.0 or nb == 0.0:
        raise DegenerateStateError("infidelity undefined for a zero state")
    r = b - a * (np.vdot(a, b) / na)
    return float(np.vdot(r, r).real / nb)


def renyi2_exact(state: DenseState, partition: Partition) -> float:
    """-log2 Tr rho_A^2 from the reshaped amplitude matrix."""
    if partition.n_sites != state.n_sites:
        raise ValueError("partition does not match the state")
    psi = state.normalized().amplitudes
    bits = all_bits(state.n_sites)
    ka = len(partition.subsystem_a)
    kb = len(partition.complement_b)
    a_idx = np.zeros_like(bits)
    for k, s in enumerate(partition.subsystem_a):
        a_idx |= ((bits >> s) & 1) << k
    b_idx = np.zeros_like(bits)
    for k, s in enumerate(partition.complement_b):
        b_idx |= ((bits >> s) & 1) << k
    m = np.zeros((1 << kb, 1 << ka), dtype=complex)
    m[b_idx, a_idx] = psi
    rho_a = m.conj().T @ m
    purity = float(np.trace(rho_a @ rho_a).real)
    return -np.log2(purity)


def densify(state: VariationalState) -> DenseState:
    """Evaluate a variational state's amplitudes on the full basis.

    The returned vector carries an arbitrary overall scale (amplitudes are
    exponent-shifted for stability); all oracle functionals are scale-free.
    """
    check_dense_capacity(state.n_sites)
    psi, zero, _ = state.scaled_amplitudes(all_bits(state.n_sites))
    if bool(zero.all()):
        raise DegenerateStateError("variational state is identically zero")
    return DenseState(psi, state.n_sites)


def apply_unitary_dense(state: DenseState, unitary, n_sites: int | None = None) -> DenseState:
    """Apply a LocalOperator / UnitaryProduct exactly to a dense state."""
    from .operators import as_unitary_product

    n = state.n_sites if n_sites is None else n_sites
    u = as_unitary_product(unitary)
    return DenseState(u.apply_to_dense(state.amplitudes, n), n)
