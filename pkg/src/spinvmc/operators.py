"""Sparse local operators and Hamiltonians defined by connected elements.

A :class:`LocalOperator` acts on K listed sites and stores its dense local
matrix M with M[out, in] = <out|op|in>, where a local index packs the bits of
the acting sites in listed order.  ``connected_elements`` enumerates, for an
input configuration sigma, all sigma' with <sigma|op|sigma'> != 0 together
with those amplitudes, matching the local-energy convention
E_loc(sigma) = sum_sigma' H_{sigma,sigma'} Psi(sigma') / Psi(sigma).

Pauli matrices follow the standard convention with sigma_z|up> = +|up>,
sigma_y|up> = i|down>.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ScheduleError
from .hilbert import Configuration, Lattice, neighbor_pairs

MAX_LOCALITY = 10

# local 2x2 matrices in index order (down, up): M[out, in]
PAULI_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
PAULI_Y = np.array([[0.0, 1.0j], [-1.0j, 0.0]], dtype=complex)
PAULI_Z = np.array([[-1.0, 0.0], [0.0, 1.0]], dtype=complex)
IDENTITY_2 = np.eye(2, dtype=complex)


@dataclass(frozen=True)
class LocalOperator:
    """A K-local operator given by its dense matrix on the acting sites."""

    sites: tuple[int, ...]
    matrix: np.ndarray
    hermitian: bool = False

    def __post_init__(self):
        sites = tuple(self.sites)
        object.__setattr__(self, "sites", sites)
        if len(set(sites)) != len(sites):
            raise ValueError("acting sites must be distinct")
        k = len(sites)
        if not 1 <= k <= MAX_LOCALITY:
            raise ValueError(f"locality must be in [1, {MAX_LOCALITY}], got {k}")
        m = np.asarray(self.matrix, dtype=complex)
        if m.shape != (1 << k, 1 << k):
            raise ValueError(f"matrix shape {m.shape} does not match {k} sites")
        m = m.copy()
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        if self.hermitian and not np.allclose(m, m.conj().T, atol=1e-12):
            raise ValueError("operator flagged hermitian but matrix is not")

    @property
    def locality(self) -> int:
        return len(self.sites)

    def local_index(self, bits: int) -> int:
        loc = 0
        for k, s in enumerate(self.sites):
            loc |= ((bits >> s) & 1) << k
        return loc

    def local_index_array(self, bits: np.ndarray) -> np.ndarray:
        bits = np.asarray(bits, dtype=np.int64)
        loc = np.zeros_like(bits)
        for k, s in enumerate(self.sites):
            loc |= ((bits >> s) & 1) << k
        return loc

    def embed_local(self, bits: int, local: int) -> int:
        out = bits
        for k, s in enumerate(self.sites):
            out &= ~(1 << s)
            out |= ((local >> k) & 1) << s
        return out

    def is_diagonal(self) -> bool:
        return bool(np.all(self.matrix == np.diag(np.diagonal(self.matrix))))

    def adjoint(self) -> "LocalOperator":
        return LocalOperator(self.sites, self.matrix.conj().T, hermitian=self.hermitian)

    def connected_from(self, bits: int) -> list[tuple[int, complex]]:
        """Pairs (bits', <sigma|op|sigma'>) over the nonzero row entries."""
        lin = self.local_index(bits)
        row = self.matrix[lin, :]
        out = []
        for lcol in np.nonzero(row)[0]:
            out.append((self.embed_local(bits, int(lcol)), complex(row[lcol])))
        return out

    def apply_to_dense(self, psi: np.ndarray, n_sites: int) -> np.ndarray:
        """(op psi)_sigma = sum_sigma' M_{sigma,sigma'} psi_sigma' over the full basis."""
        dim = 1 << n_sites
        if psi.shape != (dim,):
            raise ValueError("dense vector has wrong dimension")
        bits = np.arange(dim, dtype=np.int64)
        loc = self.local_index_array(bits)
        out = np.zeros(dim, dtype=complex)
        for lo in range(1 << self.locality):
            rows = bits[loc == lo]
            if rows.size == 0:
                continue
            for li in np.nonzero(self.matrix[lo, :])[0]:
                cols = rows
                for k, s in enumerate(self.sites):
                    cols = (cols & ~(1 << s)) | (((int(li) >> k) & 1) << s)
                out[rows] += self.matrix[lo, li] * psi[cols]
        return out

    def dense(self, n_sites: int) -> np.ndarray:
        dim = 1 << n_sites
        out = np.zeros((dim, dim), dtype=complex)
        for col in range(dim):
            e = np.zeros(dim, dtype=complex)
            e[col] = 1.0
            out[:, col] = self.apply_to_dense(e, n_sites)
        return out


def sigma_x(site: int) -> LocalOperator:
    return LocalOperator((site,), PAULI_X, hermitian=True)


def sigma_y(site: int) -> LocalOperator:
    return LocalOperator((site,), PAULI_Y, hermitian=True)


def sigma_z(site: int) -> LocalOperator:
    return LocalOperator((site,), PAULI_Z, hermitian=True)


def sigma_zz(site_i: int, site_j: int) -> LocalOperator:
    m = np.diag([1.0, -1.0, -1.0, 1.0]).astype(complex)  # s_i * s_j on (down,down)..(up,up)
    return LocalOperator((site_i, site_j), m, hermitian=True)


def scaled(op: LocalOperator, factor: complex) -> LocalOperator:
    herm = op.hermitian and abs(complex(factor).imag) == 0.0
    return LocalOperator(op.sites, factor * op.matrix, hermitian=herm)


def build_projector(site: int, outcome: str) -> LocalOperator:
    """P = (1 + s sigma_z)/2 with s = +1 for 'up', -1 for 'down'."""
    if outcome not in ("up", "down"):
        raise ValueError("outcome must be 'up' or 'down'")
    m = np.diag([0.0, 1.0]) if outcome == "up" else np.diag([1.0, 0.0])
    return LocalOperator((site,), m.astype(complex), hermitian=True)


class TermGroup:
    """Operators sharing one scalar time-dependent coefficient."""

    def __init__(self, terms: Sequence[LocalOperator],
                 schedule: Callable[[float], float] | None = None):
        self.terms = tuple(terms)
        self.schedule = schedule

    def coefficient(self, time: float | None) -> float:
        if self.schedule is None:
            return 1.0
        if time is None:
            raise ScheduleError("time-dependent Hamiltonian requires a time argument")
        return float(self.schedule(time))


class Hamiltonian:
    """A sum of local terms, optionally grouped under scalar schedules.

    Identity-hashable so oracle eigendecompositions can be cached per object.
    """

    def __init__(self, n_sites: int, groups: Sequence[TermGroup],
                 info: dict | None = None):
        self.n_sites = int(n_sites)
        self.groups = tuple(groups)
        self.info = dict(info or {})
        for g in self.groups:
            for t in g.terms:
                if max(t.sites) >= self.n_sites:
                    raise ValueError("term acts outside the lattice")

    @property
    def terms(self) -> tuple[LocalOperator, ...]:
        return tuple(t for g in self.groups for t in g.terms)

    def is_time_dependent(self) -> bool:
        return any(g.schedule is not None for g in self.groups)

    def connected_elements_bits(self, bits: int, time: float | None = None):
        acc: dict[int, complex] = {}
        for g in self.groups:
            c = g.coefficient(time)
            if c == 0.0:
                continue
            for term in g.terms:
                for b, amp in term.connected_from(bits):
                    acc[b] = acc.get(b, 0.0) + c * amp
        items = [(b, a) for b, a in sorted(acc.items()) if a != 0.0]
        return items

    def apply_to_dense(self, psi: np.ndarray, time: float | None = None) -> np.ndarray:
        out = np.zeros_like(psi, dtype=complex)
        for g in self.groups:
            c = g.coefficient(time)
            if c == 0.0:
                continue
            for term in g.terms:
                out += c * term.apply_to_dense(psi, self.n_sites)
        return out

    def dense(self, time: float | None = None) -> np.ndarray:
        dim = 1 << self.n_sites
        out = np.zeros((dim, dim), dtype=complex)
        for col in range(dim):
            e = np.zeros(dim, dtype=complex)
            e[col] = 1.0
            out[:, col] = self.apply_to_dense(e, time)
        return out


def connected_elements(op, config: Configuration, time: float | None = None):
    """All (sigma', <sigma|op|sigma'>) with nonzero amplitude, duplicates merged."""
    n = config.n_sites
    if isinstance(op, LocalOperator):
        items = {}
        for b, amp in op.connected_from(config.bits):
            items[b] = items.get(b, 0.0) + amp
        pairs = sorted((b, a) for b, a in items.items() if a != 0.0)
    elif isinstance(op, Hamiltonian):
        if op.n_sites != n:
            raise ValueError("configuration size does not match the Hamiltonian")
        pairs = op.connected_elements_bits(config.bits, time)
    else:
        raise TypeError(f"unsupported operator type {type(op).__name__}")
    return [(Configuration(b, n), a) for b, a in pairs]


def build_tfi(lattice: Lattice, J: float, h: float) -> Hamiltonian:
    """Transverse-field Ising model H = -J sum_<ij> sz_i sz_j - h sum_i sx_i."""
    edges = neighbor_pairs(lattice)
    terms: list[LocalOperator] = [scaled(sigma_zz(i, j), -J) for i, j in edges]
    terms += [scaled(sigma_x(i), -h) for i in range(lattice.n_sites)]
    info = {"family": "tfi", "lattice": lattice, "J": float(J), "h": float(h),
            "edges": tuple(edges)}
    return Hamiltonian(lattice.n_sites, [TermGroup(terms)], info=info)


def triangular_profile(period: float) -> Callable[[float], float]:
    """Rises 0 -> 1 on [0, T], falls back to 0 on [T, 2T], then repeats."""
    T = float(period)

    def gamma(t: float) -> float:
        if t < 0:
            raise ScheduleError(f"schedule undefined for t < 0 (got {t})")
        tau = t % (2 * T)
        return tau / T if tau <= T else 2.0 - tau / T

    return gamma


def build_adiabatic(n_sites: int, period: float) -> Hamiltonian:
    """H(t) = gamma(t) sum_i sz_i + (gamma(t) - 1) sum_i sx_i, triangular gamma."""
    if period <= 0:
        raise ValueError("period must be positive")
    gamma = triangular_profile(period)
    z_group = TermGroup([sigma_z(i) for i in range(n_sites)], schedule=gamma)
    x_group = TermGroup([sigma_x(i) for i in range(n_sites)],
                        schedule=lambda t: gamma(t) - 1.0)
    info = {"family": "adiabatic", "period": float(period), "n_sites": n_sites}
    return Hamiltonian(n_sites, [z_group, x_group], info=info)


def build_single_spin_y() -> Hamiltonian:
    """The one-spin rotation generator H = sigma_y."""
    return Hamiltonian(1, [TermGroup([sigma_y(0)])], info={"family": "single_spin_y"})


class UnitaryProduct:
    """An ordered product U = F_1 F_2 ... F_m of K-local factors.

    Row access <sigma|U|.> expands factors left to right, merging branches.
    """

    def __init__(self, factors: Sequence[LocalOperator]):
        self.factors = tuple(factors)
        if not self.factors:
            raise ValueError("a unitary product needs at least one factor")

    @property
    def sites(self) -> tuple[int, ...]:
        out: set[int] = set()
        for f in self.factors:
            out.update(f.sites)
        return tuple(sorted(out))

    def adjoint(self) -> "UnitaryProduct":
        return UnitaryProduct([f.adjoint() for f in reversed(self.factors)])

    def connected_from(self, bits: int) -> list[tuple[int, complex]]:
        branches = {int(bits): 1.0 + 0.0j}
        for f in self.factors:
            nxt: dict[int, complex] = {}
            for b, coeff in branches.items():
                for b2, amp in f.connected_from(b):
                    nxt[b2] = nxt.get(b2, 0.0) + coeff * amp
            branches = {b: a for b, a in nxt.items() if a != 0.0}
        return sorted(branches.items())

    def apply_to_dense(self, psi: np.ndarray, n_sites: int) -> np.ndarray:
        # right-to-left application: U psi = F_1 (F_2 (... psi))
        out = psi
        for f in reversed(self.factors):
            out = f.apply_to_dense(out, n_sites)
        return out

    def dense(self, n_sites: int) -> np.ndarray:
        out = np.eye(1 << n_sites, dtype=complex)
        for f in reversed(self.factors):
            out = f.dense(n_sites) @ out
        return out


def as_unitary_product(u) -> UnitaryProduct:
    if isinstance(u, UnitaryProduct):
        return u
    if isinstance(u, LocalOperator):
        return UnitaryProduct([u])
    if isinstance(u, (list, tuple)):
        return UnitaryProduct(list(u))
    raise TypeError(f"cannot interpret {type(u).__name__} as a unitary product")
