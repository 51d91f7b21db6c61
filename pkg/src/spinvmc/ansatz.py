"""Holomorphic variational wave functions with exact-zero support.

Every ansatz exposes log-amplitudes over batches of bit-encoded
configurations together with an exact-zero mask: a masked entry means the
amplitude is identically zero, which is distinct from a merely small value
(estimator bias lives exactly on that distinction).  Parameters are a single
complex vector; wrappers append their own parameters after the inner
ansatz's.  All states are immutable; parameter updates return new instances.
"""

from __future__ import annotations

import json
from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import UnsupportedRotationError, ZeroAmplitudeError
from .hilbert import Configuration, check_dense_capacity, occupations, spin_values

NEG_INF = float("-inf")


@dataclass(frozen=True)
class LogAmplitude:
    """log Psi(sigma), or the exact-zero sentinel when Psi(sigma) == 0."""

    value: complex
    is_zero: bool = False

    @classmethod
    def zero(cls) -> "LogAmplitude":
        return cls(complex(NEG_INF, 0.0), True)

    def amplitude(self) -> complex:
        return 0.0 if self.is_zero else np.exp(self.value)


class VariationalState(ABC):
    """Base class: batch log-amplitudes, log-derivatives, amplitude derivatives."""

    n_sites: int

    # -- parameters ---------------------------------------------------------
    @property
    @abstractmethod
    def n_params(self) -> int: ...

    @abstractmethod
    def parameters(self) -> np.ndarray:
        """The parameter vector theta (complex), length n_params."""

    @abstractmethod
    def with_parameters(self, theta: np.ndarray) -> "VariationalState": ...

    # -- amplitudes ---------------------------------------------------------
    @abstractmethod
    def log_amplitudes(self, bits: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(log Psi values, exact-zero mask) for a batch of bit patterns."""

    @abstractmethod
    def log_derivative_rows(self, bits: np.ndarray) -> np.ndarray:
        """O_k(sigma) = d log Psi / d theta_k, shape (B, P).

        Rows where the amplitude vanishes exactly are unspecified; callers
        must restrict to the nonzero support.
        """

    @abstractmethod
    def _amp_derivatives_all(self, bits: np.ndarray, log_shift: float) -> np.ndarray:
        """d Psi(sigma)/d theta_k scaled by exp(-log_shift), valid on every
        row including exact zeros."""

    def frozen_flip_sites(self) -> tuple[int, ...]:
        """Sites single-flip samplers must not propose (masked-out outcomes)."""
        return ()

    # -- derived ------------------------------------------------------------
    def log_amplitude(self, config: Configuration) -> LogAmplitude:
        vals, zero = self.log_amplitudes(np.array([config.bits], dtype=np.int64))
        if zero[0]:
            return LogAmplitude.zero()
        return LogAmplitude(complex(vals[0]))

    def log_derivatives(self, config: Configuration) -> np.ndarray:
        vals, zero = self.log_amplitudes(np.array([config.bits], dtype=np.int64))
        if zero[0]:
            raise ZeroAmplitudeError(
                f"log-derivatives undefined at {config}: amplitude is exactly zero")
        return self.log_derivative_rows(np.array([config.bits], dtype=np.int64))[0]

    def amplitudes_and_derivatives(self, bits: np.ndarray):
        """(psi, dpsi, zero_mask, log_shift) with psi and dpsi jointly scaled
        by exp(-log_shift); the shift cancels in every estimator."""
        bits = np.asarray(bits, dtype=np.int64)
        vals, zero = self.log_amplitudes(bits)
        finite = vals.real[~zero]
        shift = float(np.max(finite)) if finite.size else 0.0
        psi = np.zeros(len(bits), dtype=complex)
        psi[~zero] = np.exp(vals[~zero] - shift)
        dpsi = self._amp_derivatives_all(bits, shift)
        return psi, dpsi, zero, shift

    def scaled_amplitudes(self, bits: np.ndarray):
        """(psi * exp(-shift), zero_mask, shift) without derivatives."""
        bits = np.asarray(bits, dtype=np.int64)
        vals, zero = self.log_amplitudes(bits)
        finite = vals.real[~zero]
        shift = float(np.max(finite)) if finite.size else 0.0
        psi = np.zeros(len(bits), dtype=complex)
        psi[~zero] = np.exp(vals[~zero] - shift)
        return psi, zero, shift

    # -- serialization ------------------------------------------------------
    @abstractmethod
    def to_payload(self) -> dict: ...

    def to_json(self) -> str:
        return json.dumps(self.to_payload())


def _split_complex(arr: np.ndarray) -> dict:
    arr = np.asarray(arr, dtype=complex)
    return {"shape": list(arr.shape),
            "re": arr.real.ravel().tolist(),
            "im": arr.imag.ravel().tolist()}


def _join_complex(doc: dict) -> np.ndarray:
    re = np.asarray(doc["re"], dtype=float)
    im = np.asarray(doc["im"], dtype=float)
    return (re + 1j * im).reshape(doc["shape"])


class FullAmplitudeAnsatz(VariationalState):
    """One complex parameter per basis state: Psi(sigma) = theta_sigma."""

    def __init__(self, amplitudes: np.ndarray, n_sites: int):
        check_dense_capacity(n_sites)
        amplitudes = np.asarray(amplitudes, dtype=complex)
        if amplitudes.shape != (1 << n_sites,):
            raise ValueError("amplitude vector length must be 2^n_sites")
        self.n_sites = int(n_sites)
        self._amps = amplitudes.copy()
        self._amps.setflags(write=False)

    @classmethod
    def uniform(cls, n_sites: int) -> "FullAmplitudeAnsatz":
        return cls(np.full(1 << n_sites, 1.0, dtype=complex), n_sites)

    @classmethod
    def ghz(cls, n_sites: int) -> "FullAmplitudeAnsatz":
        v = np.zeros(1 << n_sites, dtype=complex)
        v[0] = v[-1] = 1.0 / np.sqrt(2.0)
        return cls(v, n_sites)

    @classmethod
    def basis_state(cls, config: Configuration) -> "FullAmplitudeAnsatz":
        v = np.zeros(1 << config.n_sites, dtype=complex)
        v[config.bits] = 1.0
        return cls(v, config.n_sites)

    @property
    def n_params(self) -> int:
        return self._amps.size

    def parameters(self) -> np.ndarray:
        return self._amps.copy()

    def with_parameters(self, theta: np.ndarray) -> "FullAmplitudeAnsatz":
        return FullAmplitudeAnsatz(theta, self.n_sites)

    def log_amplitudes(self, bits):
        bits = np.asarray(bits, dtype=np.int64)
        amp = self._amps[bits]
        zero = amp == 0.0
        vals = np.full(len(bits), complex(NEG_INF, 0.0))
        vals[~zero] = np.log(amp[~zero])
        return vals, zero

    def log_derivative_rows(self, bits):
        bits = np.asarray(bits, dtype=np.int64)
        out = np.zeros((len(bits), self.n_params), dtype=complex)
        amp = self._amps[bits]
        ok = amp != 0.0
        out[np.nonzero(ok)[0], bits[ok]] = 1.0 / amp[ok]
        return out

    def _amp_derivatives_all(self, bits, log_shift):
        bits = np.asarray(bits, dtype=np.int64)
        out = np.zeros((len(bits), self.n_params), dtype=complex)
        out[np.arange(len(bits)), bits] = np.exp(-log_shift)
        return out

    def to_payload(self) -> dict:
        return {"ansatz_kind": "full_amplitude", "n_sites": self.n_sites,
                "amplitudes": _split_complex(self._amps)}


class PeakedStateAnsatz(VariationalState):
    """sqrt(eps) everywhere except a peak configuration carrying the rest of
    the norm; a single holomorphic parameter eps."""

    def __init__(self, epsilon: complex, peak: Configuration):
        self.n_sites = peak.n_sites
        self.peak = peak
        eps = complex(epsilon)
        hi = 1.0 / ((1 << self.n_sites) - 1)
        if eps.imag == 0.0 and not 0.0 < eps.real < hi:
            raise ValueError(f"epsilon must lie in (0, {hi:.3e})")
        self._eps = eps

    @property
    def epsilon(self) -> complex:
        return self._eps

    @property
    def peak_weight(self) -> complex:
        """1 - (2^N - 1) eps, the squared peak amplitude."""
        return 1.0 - ((1 << self.n_sites) - 1) * self._eps

    @property
    def n_params(self) -> int:
        return 1

    def parameters(self) -> np.ndarray:
        return np.array([self._eps], dtype=complex)

    def with_parameters(self, theta) -> "PeakedStateAnsatz":
        return PeakedStateAnsatz(complex(theta[0]), self.peak)

    def log_amplitudes(self, bits):
        bits = np.asarray(bits, dtype=np.int64)
        vals = np.full(len(bits), 0.5 * np.log(self._eps), dtype=complex)
        vals[bits == self.peak.bits] = 0.5 * np.log(self.peak_weight)
        return vals, np.zeros(len(bits), dtype=bool)

    def log_derivative_rows(self, bits):
        bits = np.asarray(bits, dtype=np.int64)
        d = 1 << self.n_sites
        out = np.full((len(bits), 1), 1.0 / (2.0 * self._eps), dtype=complex)
        out[bits == self.peak.bits, 0] = -(d - 1) / (2.0 * self.peak_weight)
        return out

    def _amp_derivatives_all(self, bits, log_shift):
        vals, _ = self.log_amplitudes(bits)
        psi = np.exp(vals - log_shift)
        return self.log_derivative_rows(bits) * psi[:, None]

    def to_payload(self) -> dict:
        return {"ansatz_kind": "peaked", "n_sites": self.n_sites,
                "peak_bits": self.peak.bits,
                "epsilon": {"re": self._eps.real, "im": self._eps.imag}}


class RbmAnsatz(VariationalState):
    """Restricted Boltzmann machine wave function.

    log Psi(sigma) = sum_i a_i s_i + sum_j log(2 cosh(b_j + sum_i W_ji s_i))
    with s_i = +-1; finite for finite parameters (no exact zeros).
    Parameter order: [a, b, W rows].
    """

    def __init__(self, a: np.ndarray, b: np.ndarray, W: np.ndarray):
        a = np.asarray(a, dtype=complex)
        b = np.asarray(b, dtype=complex)
        W = np.asarray(W, dtype=complex)
        if W.shape != (b.size, a.size):
            raise ValueError("W must have shape (n_hidden, n_sites)")
        self.n_sites = a.size
        self.a, self.b, self.W = a.copy(), b.copy(), W.copy()
        for arr in (self.a, self.b, self.W):
            arr.setflags(write=False)

    @classmethod
    def zeros(cls, n_sites: int, alpha: int) -> "RbmAnsatz":
        m = alpha * n_sites
        return cls(np.zeros(n_sites, complex), np.zeros(m, complex),
                   np.zeros((m, n_sites), complex))

    @classmethod
    def random(cls, n_sites: int, alpha: int, seed: int, scale: float = 0.01) -> "RbmAnsatz":
        rng = np.random.default_rng(seed)
        m = alpha * n_sites

        def g(*shape):
            return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))

        return cls(g(n_sites), g(m), g(m, n_sites))

    @property
    def n_hidden(self) -> int:
        return self.b.size

    @property
    def density(self) -> float:
        return self.n_hidden / self.n_sites

    @property
    def n_params(self) -> int:
        return self.n_sites + self.n_hidden + self.W.size

    def parameters(self) -> np.ndarray:
        return np.concatenate([self.a, self.b, self.W.ravel()])

    def with_parameters(self, theta) -> "RbmAnsatz":
        n, m = self.n_sites, self.n_hidden
        return RbmAnsatz(theta[:n], theta[n:n + m],
                         np.asarray(theta[n + m:]).reshape(m, n))

    def log_amplitudes(self, bits):
        bits = np.asarray(bits, dtype=np.int64)
        vals = _kernels.rbm_log_amplitudes(bits, self.n_sites, self.a, self.b, self.W)
        return vals, np.zeros(len(bits), dtype=bool)

    def _hidden_activations(self, bits):
        s = spin_values(bits, self.n_sites)
        return s, self.b[None, :] + s @ self.W.T

    def log_derivative_rows(self, bits):
        s, theta = self._hidden_activations(bits)
        t = np.tanh(theta)
        return np.concatenate(
            [s, t, (t[:, :, None] * s[:, None, :]).reshape(len(s), -1)], axis=1)

    def _amp_derivatives_all(self, bits, log_shift):
        vals, _ = self.log_amplitudes(bits)
        psi = np.exp(vals - log_shift)
        return self.log_derivative_rows(bits) * psi[:, None]

    def to_payload(self) -> dict:
        return {"ansatz_kind": "rbm", "n_sites": self.n_sites,
                "a": _split_complex(self.a), "b": _split_complex(self.b),
                "W": _split_complex(self.W)}


class DiagonalExtension(VariationalState):
    """Wrapper adding exact diagonal-phase parameters to any ansatz.

    log Psi(sigma) = log Psi_inner(sigma) - i sum_i J1_i s_i
                     - i sum_(ij) J2_ij s_i s_j.
    Parameter order: [inner, J1, J2].
    """

    def __init__(self, inner: VariationalState, j1: np.ndarray, j2: np.ndarray,
                 edges: tuple[tuple[int, int], ...]):
        self.inner = inner
        self.n_sites = inner.n_sites
        self.j1 = np.asarray(j1, dtype=complex).copy()
        self.j2 = np.asarray(j2, dtype=complex).copy()
        self.edges = tuple((int(i), int(j)) for i, j in edges)
        if self.j1.shape != (self.n_sites,):
            raise ValueError("J1 must have one entry per site")
        if self.j2.shape != (len(self.edges),):
            raise ValueError("J2 must have one entry per edge")
        for arr in (self.j1, self.j2):
            arr.setflags(write=False)

    @classmethod
    def wrap(cls, inner: VariationalState, edges) -> "DiagonalExtension":
        edges = tuple(edges)
        return cls(inner, np.zeros(inner.n_sites, complex),
                   np.zeros(len(edges), complex), edges)

    @property
    def n_params(self) -> int:
        return self.inner.n_params + self.n_sites + len(self.edges)

    def parameters(self) -> np.ndarray:
        return np.concatenate([self.inner.parameters(), self.j1, self.j2])

    def with_parameters(self, theta) -> "DiagonalExtension":
        p = self.inner.n_params
        n = self.n_sites
        return DiagonalExtension(self.inner.with_parameters(theta[:p]),
                                 theta[p:p + n], theta[p + n:], self.edges)

    def shifted(self, dj1=None, dj2=None) -> "DiagonalExtension":
        j1 = self.j1 + (0 if dj1 is None else dj1)
        j2 = self.j2 + (0 if dj2 is None else dj2)
        return DiagonalExtension(self.inner, j1, j2, self.edges)

    def _phase_exponent(self, bits):
        s = spin_values(bits, self.n_sites)
        exponent = -1j * (s @ self.j1)
        if self.edges:
            zz = np.stack([s[:, i] * s[:, j] for i, j in self.edges], axis=1)
            exponent = exponent - 1j * (zz @ self.j2)
        else:
            zz = np.zeros((len(s), 0))
        return s, zz, exponent

    def log_amplitudes(self, bits):
        bits = np.asarray(bits, dtype=np.int64)
        vals, zero = self.inner.log_amplitudes(bits)
        _, _, exponent = self._phase_exponent(bits)
        out = vals.copy()
        out[~zero] = vals[~zero] + exponent[~zero]
        return out, zero

    def log_derivative_rows(self, bits):
        bits = np.asarray(bits, dtype=np.int64)
        s, zz, _ = self._phase_exponent(bits)
        return np.concatenate(
            [self.inner.log_derivative_rows(bits), -1j * s, -1j * zz], axis=1)

    def _amp_derivatives_all(self, bits, log_shift):
        bits = np.asarray(bits, dtype=np.int64)
        s, zz, exponent = self._phase_exponent(bits)
        phase = np.exp(exponent)
        d_inner = self.inner._amp_derivatives_all(bits, log_shift) * phase[:, None]
        vals, zero = self.log_amplitudes(bits)
        psi = np.zeros(len(bits), dtype=complex)
        psi[~zero] = np.exp(vals[~zero] - log_shift)
        return np.concatenate(
            [d_inner, (-1j * s) * psi[:, None], (-1j * zz) * psi[:, None]], axis=1)

    def frozen_flip_sites(self) -> tuple[int, ...]:
        return self.inner.frozen_flip_sites()

    def to_payload(self) -> dict:
        return {"ansatz_kind": "diagonal_extension",
                "inner": self.inner.to_payload(),
                "j1": _split_complex(self.j1), "j2": _split_complex(self.j2),
                "edges": [list(e) for e in self.edges]}


class MeasurementMask(VariationalState):
    """Per-site multiplicative factors (phi_down, phi_up); an exactly zero
    factor realizes a projective measurement and yields exact-zero amplitudes
    on contradicted configurations.  Parameter order: [inner, phi rows]."""

    def __init__(self, inner: VariationalState, phi: np.ndarray):
        self.inner = inner
        self.n_sites = inner.n_sites
        phi = np.asarray(phi, dtype=complex)
        if phi.shape != (self.n_sites, 2):
            raise ValueError("phi must have shape (n_sites, 2)")
        self.phi = phi.copy()
        self.phi.setflags(write=False)

    @classmethod
    def wrap(cls, inner: VariationalState) -> "MeasurementMask":
        return cls(inner, np.ones((inner.n_sites, 2), dtype=complex))

    @property
    def n_params(self) -> int:
        return self.inner.n_params + 2 * self.n_sites

    def parameters(self) -> np.ndarray:
        return np.concatenate([self.inner.parameters(), self.phi.ravel()])

    def with_parameters(self, theta) -> "MeasurementMask":
        p = self.inner.n_params
        return MeasurementMask(self.inner.with_parameters(theta[:p]),
                               np.asarray(theta[p:]).reshape(self.n_sites, 2))

    def with_phi(self, phi: np.ndarray) -> "MeasurementMask":
        return MeasurementMask(self.inner, phi)

    def chosen_factors(self, bits) -> np.ndarray:
        """C[q, i] = phi_i^{sigma_i} for each configuration row q."""
        occ = occupations(bits, self.n_sites)
        return np.where(occ == 1, self.phi[None, :, 1], self.phi[None, :, 0])

    def log_amplitudes(self, bits):
        bits = np.asarray(bits, dtype=np.int64)
        vals, zero = self.inner.log_amplitudes(bits)
        C = self.chosen_factors(bits)
        czero = C == 0.0
        zero = zero | czero.any(axis=1)
        logC = np.zeros_like(C)
        np.log(C, out=logC, where=~czero)
        out = np.full(len(bits), complex(NEG_INF, 0.0))
        out[~zero] = vals[~zero] + logC[~zero].sum(axis=1)
        return out, zero

    def log_derivative_rows(self, bits):
        bits = np.asarray(bits, dtype=np.int64)
        occ = occupations(bits, self.n_sites)
        C = self.chosen_factors(bits)
        inv = np.zeros_like(C)
        ok = C != 0.0
        np.divide(1.0, C, out=inv, where=ok)
        own = np.zeros((len(bits), self.n_sites, 2), dtype=complex)
        own[..., 0] = np.where(occ == 0, inv, 0.0)
        own[..., 1] = np.where(occ == 1, inv, 0.0)
        return np.concatenate(
            [self.inner.log_derivative_rows(bits), own.reshape(len(bits), -1)], axis=1)

    def _amp_derivatives_all(self, bits, log_shift):
        bits = np.asarray(bits, dtype=np.int64)
        occ = occupations(bits, self.n_sites)
        C = self.chosen_factors(bits)
        czero = C == 0.0
        nzero = czero.sum(axis=1)
        logC = np.zeros_like(C)
        np.log(C, out=logC, where=~czero)
        log_mask_nonzero = logC.sum(axis=1)  # sum over nonzero factors only

        mask_full = np.where(nzero == 0, np.exp(log_mask_nonzero), 0.0)
        d_inner = self.inner._amp_derivatives_all(bits, log_shift) * mask_full[:, None]

        vals_inner, zero_inner = self.inner.log_amplitudes(bits)
        own = np.zeros((len(bits), self.n_sites, 2), dtype=complex)
        rows = ~zero_inner
        for i in range(self.n_sites):
            # derivative of the i-th factor: product of the other factors times Psi_inner
            drop = np.where(czero[:, i], 0.0, logC[:, i])
            contributes = rows & ((nzero == 0) | ((nzero == 1) & czero[:, i]))
            val = np.zeros(len(bits), dtype=complex)
            val[contributes] = np.exp(
                vals_inner[contributes] + log_mask_nonzero[contributes]
                - drop[contributes] - log_shift)
            own[occ[:, i] == 0, i, 0] = val[occ[:, i] == 0]
            own[occ[:, i] == 1, i, 1] = val[occ[:, i] == 1]
        return np.concatenate([d_inner, own.reshape(len(bits), -1)], axis=1)

    def frozen_flip_sites(self) -> tuple[int, ...]:
        own = tuple(i for i in range(self.n_sites)
                    if self.phi[i, 0] == 0.0 or self.phi[i, 1] == 0.0)
        return tuple(sorted(set(own) | set(self.inner.frozen_flip_sites())))

    def measured_zero_sites(self) -> tuple[int, ...]:
        return tuple(i for i in range(self.n_sites)
                     if self.phi[i, 0] == 0.0 or self.phi[i, 1] == 0.0)

    def to_payload(self) -> dict:
        return {"ansatz_kind": "measurement_mask",
                "inner": self.inner.to_payload(),
                "phi": _split_complex(self.phi)}


# ---------------------------------------------------------------------------
# structural updates
# ---------------------------------------------------------------------------

def apply_diagonal_rotation(state: VariationalState, sites, angle: float):
    """Apply exp(-i angle sz...) exactly by shifting the matching J slot.

    One site shifts J1, a site pair shifts the first matching J2 edge slot.
    """
    sites = tuple(sites)
    if isinstance(state, MeasurementMask):
        return state.__class__(apply_diagonal_rotation(state.inner, sites, angle),
                               state.phi)
    if not isinstance(state, DiagonalExtension):
        raise UnsupportedRotationError(
            f"{type(state).__name__} carries no diagonal phase parameters")
    if len(sites) == 1:
        dj1 = np.zeros_like(state.j1)
        dj1[sites[0]] += angle
        return state.shifted(dj1=dj1)
    if len(sites) == 2:
        pair = frozenset(sites)
        for k, (i, j) in enumerate(state.edges):
            if frozenset((i, j)) == pair:
                dj2 = np.zeros_like(state.j2)
                dj2[k] += angle
                return state.shifted(dj2=dj2)
        raise UnsupportedRotationError(f"no J2 slot for edge {sites}")
    raise UnsupportedRotationError("diagonal rotations act on 1 or 2 sites")


def apply_measurement(state: VariationalState, site: int, outcome: str):
    """Collapse a site: the kept-outcome factor becomes 1, the other 0."""
    if outcome not in ("up", "down"):
        raise ValueError("outcome must be 'up' or 'down'")
    if isinstance(state, MeasurementMask):
        phi = np.array(state.phi)
        phi[site] = (0.0, 1.0) if outcome == "up" else (1.0, 0.0)
        return state.with_phi(phi)
    if isinstance(state, DiagonalExtension):
        return DiagonalExtension(apply_measurement(state.inner, site, outcome),
                                 state.j1, state.j2, state.edges)
    raise UnsupportedRotationError(
        f"{type(state).__name__} carries no measurement-mask parameters")


# ---------------------------------------------------------------------------
# serialization registry
# ---------------------------------------------------------------------------

def from_payload(doc: dict) -> VariationalState:
    kind = doc.get("ansatz_kind")
    if kind == "full_amplitude":
        return FullAmplitudeAnsatz(_join_complex(doc["amplitudes"]), doc["n_sites"])
    if kind == "peaked":
        eps = complex(doc["epsilon"]["re"], doc["epsilon"]["im"])
        return PeakedStateAnsatz(eps, Configuration(doc["peak_bits"], doc["n_sites"]))
    if kind == "rbm":
        return RbmAnsatz(_join_complex(doc["a"]), _join_complex(doc["b"]),
                         _join_complex(doc["W"]))
    if kind == "diagonal_extension":
        return DiagonalExtension(from_payload(doc["inner"]),
                                 _join_complex(doc["j1"]), _join_complex(doc["j2"]),
                                 tuple(tuple(e) for e in doc["edges"]))
    if kind == "measurement_mask":
        return MeasurementMask(from_payload(doc["inner"]), _join_complex(doc["phi"]))
    raise ValueError(f"unknown ansatz kind {kind!r}")


def from_json(text: str) -> VariationalState:
    return from_payload(json.loads(text))
