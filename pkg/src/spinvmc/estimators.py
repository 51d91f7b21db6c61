"""Exact and stochastic estimators: forces, quantum geometric tensor, bias
terms, the covariance-free force estimator, SNR, infidelity (bare / control
variates / importance-sampled), its gradient, and the Renyi-2 swap estimator.

Conventions
-----------
* Expectations over a :class:`~spinvmc.sampling.SampleSet` are
  ``sum(weights * f)``; full-sum sets make every identity exact.
* Variances of complex quantities are E[|x - mean|^2].
* Full-sum covariance estimators are evaluated in amplitude-product form
  (never through per-configuration ratios), so tiny amplitudes cannot
  overflow; genuinely divergent variances near zeros stay faithfully large.
"""

from __future__ import annotations

import math
import weakref
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .ansatz import VariationalState
from .errors import DegenerateStateError, ZeroAmplitudeError
from .hilbert import Partition, all_bits, check_dense_capacity, swap_subsystem_bits
from .operators import Hamiltonian, LocalOperator, UnitaryProduct, as_unitary_product
from .sampling import SampleSet, full_sum_sample_set

CV_ASYMPTOTIC = -0.5


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ForcesReport:
    values: np.ndarray
    variance: np.ndarray            # per-component Var of the per-sample estimator
    estimator_kind: str             # exact_sum | mc_standard | mc_unbiased
    n_samples: Optional[int]


@dataclass(frozen=True)
class QgtReport:
    values: np.ndarray
    estimator_kind: str             # exact_sum | mc_standard
    variance: Optional[np.ndarray] = None
    n_samples: Optional[int] = None


@dataclass(frozen=True)
class EstimateReport:
    mean: complex
    variance: float
    snr: float                      # math.inf when the variance vanishes
    n_samples: Optional[int]

    def to_record(self, kind: str, seed=None) -> dict:
        return {"kind": kind, "mean_re": float(np.real(self.mean)),
                "mean_im": float(np.imag(self.mean)),
                "variance": float(self.variance),
                "snr": (None if math.isinf(self.snr) else float(self.snr)),
                "n_samples": self.n_samples, "seed": seed}


@dataclass(frozen=True)
class InfidelityReport:
    mean: float
    variance: float
    snr: float
    estimator_kind: str             # exact | bare | cv | cv_is
    c_used: Optional[float]
    n_samples: Optional[int]
    outlier_fraction: float = 0.0


@dataclass(frozen=True)
class Renyi2Report:
    entropy: float
    purity: float
    purity_variance: float
    entropy_error: float
    n_samples: Optional[int]


def snr_value(mean, variance, n_samples) -> float:
    if variance <= 0.0 or n_samples is None:
        return math.inf
    return math.sqrt(n_samples * abs(mean) ** 2 / variance)


def snr_report(values: np.ndarray, weights: Optional[np.ndarray] = None,
               n_samples: Optional[int] = None) -> EstimateReport:
    """Mean/variance/SNR of a scalar per-sample estimator.

    Unweighted values use the unbiased (n-1) variance estimator; weighted
    values use the weighted population variance with an n/(n-1) correction
    from the nominal sample count.
    """
    values = np.asarray(values)
    if weights is None:
        n = len(values)
        if n < 2:
            raise ValueError("need at least 2 samples")
        mean = values.mean()
        var = float(np.sum(np.abs(values - mean) ** 2) / (n - 1))
        ns = n_samples if n_samples is not None else n
    else:
        weights = np.asarray(weights, dtype=float)
        mean = np.sum(weights * values)
        var = float(np.sum(weights * np.abs(values - mean) ** 2))
        ns = n_samples
        if ns is not None and ns > 1:
            var *= ns / (ns - 1)
    return EstimateReport(mean=complex(mean), variance=var,
                          snr=snr_value(mean, var, ns), n_samples=ns)


# ---------------------------------------------------------------------------
# connected-element batch machinery
# ---------------------------------------------------------------------------

def _term_rows(term: LocalOperator, bits: np.ndarray, coeff: complex):
    """(row_index, out_bits, amplitude) triples of <sigma|term|.> rows."""
    lin = term.local_index_array(bits)
    union_clear = ~np.int64(0)
    for s in term.sites:
        union_clear &= ~(np.int64(1) << s)
    spread = np.zeros(1 << term.locality, dtype=np.int64)
    for li in range(1 << term.locality):
        v = 0
        for k, s in enumerate(term.sites):
            v |= ((li >> k) & 1) << s
        spread[li] = v
    rows_out, bits_out, amps_out = [], [], []
    for lo in range(1 << term.locality):
        rows = np.nonzero(lin == lo)[0]
        if rows.size == 0:
            continue
        for li in np.nonzero(term.matrix[lo, :])[0]:
            rows_out.append(rows)
            bits_out.append((bits[rows] & union_clear) | spread[li])
            amps_out.append(np.full(rows.size, coeff * term.matrix[lo, li]))
    if not rows_out:
        return (np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0, complex))
    return (np.concatenate(rows_out), np.concatenate(bits_out),
            np.concatenate(amps_out))


def _hamiltonian_rows(h: Hamiltonian, bits: np.ndarray, time):
    rows, outs, amps = [], [], []
    for g in h.groups:
        c = g.coefficient(time)
        if c == 0.0:
            continue
        for term in g.terms:
            r, o, a = _term_rows(term, bits, c)
            rows.append(r); outs.append(o); amps.append(a)
    return np.concatenate(rows), np.concatenate(outs), np.concatenate(amps)


def local_energies(state: VariationalState, hamiltonian: Hamiltonian,
                   bits: np.ndarray, time: float | None = None) -> np.ndarray:
    """E_loc(sigma) = sum_sigma' H_{sigma sigma'} Psi(sigma')/Psi(sigma) for a
    batch; requires nonzero amplitude on every row."""
    bits = np.asarray(bits, dtype=np.int64)
    vals, zero = state.log_amplitudes(bits)
    if zero.any():
        raise ZeroAmplitudeError(
            "local energy undefined on a zero-amplitude configuration")
    rows, outs, amps = _hamiltonian_rows(hamiltonian, bits, time)
    uniq, inv = np.unique(outs, return_inverse=True)
    uvals, uzero = state.log_amplitudes(uniq)
    ratios = np.zeros(len(outs), dtype=complex)
    ok = ~uzero[inv]
    ratios[ok] = np.exp(uvals[inv][ok] - vals[rows][ok])
    out = np.zeros(len(bits), dtype=complex)
    np.add.at(out, rows, amps * ratios)
    return out


def local_energy(state, hamiltonian, config, time=None) -> complex:
    return complex(local_energies(
        state, hamiltonian, np.array([config.bits], dtype=np.int64), time)[0])


# ---------------------------------------------------------------------------
# dense full-basis quantities
# ---------------------------------------------------------------------------

def _dense_arrays(state: VariationalState):
    check_dense_capacity(state.n_sites)
    bits = all_bits(state.n_sites)
    psi, dpsi, zero, _ = state.amplitudes_and_derivatives(bits)
    if bool(zero.all()):
        raise DegenerateStateError("state is identically zero")
    return bits, psi, dpsi, zero


def forces_exact(state: VariationalState, hamiltonian: Hamiltonian,
                 time: float | None = None) -> ForcesReport:
    """F_k = <dPsi_k|H|Psi>/<Psi|Psi> - <dPsi_k|Psi><Psi|H|Psi>/<Psi|Psi>^2,
    summed over the whole basis (zero-amplitude rows included)."""
    _, psi, dpsi, _ = _dense_arrays(state)
    hpsi = hamiltonian.apply_to_dense(psi, time)
    n2 = np.vdot(psi, psi).real
    energy = np.vdot(psi, hpsi) / n2
    f = dpsi.conj().T @ hpsi / n2 - (dpsi.conj().T @ psi) * energy / n2
    return ForcesReport(values=f, variance=np.zeros(len(f)),
                        estimator_kind="exact_sum", n_samples=None)


def qgt_exact(state: VariationalState) -> QgtReport:
    """S_kk' = <dPsi_k|dPsi_k'>/<Psi|Psi> - <dPsi_k|Psi><Psi|dPsi_k'>/<Psi|Psi>^2."""
    _, psi, dpsi, _ = _dense_arrays(state)
    n2 = np.vdot(psi, psi).real
    v = dpsi.conj().T @ psi / n2
    return QgtReport(values=dpsi.conj().T @ dpsi / n2 - np.outer(v, v.conj()),
                     estimator_kind="exact_sum")


def bias_forces(state: VariationalState, hamiltonian: Hamiltonian,
                time: float | None = None) -> np.ndarray:
    """Force bias b_F: the exact-sum contribution from configurations where
    the amplitude vanishes exactly (empty zero set gives 0)."""
    _, psi, dpsi, zero = _dense_arrays(state)
    hpsi = hamiltonian.apply_to_dense(psi, time)
    n2 = np.vdot(psi, psi).real
    return dpsi[zero].conj().T @ hpsi[zero] / n2


def bias_qgt(state: VariationalState) -> np.ndarray:
    _, psi, dpsi, zero = _dense_arrays(state)
    n2 = np.vdot(psi, psi).real
    return dpsi[zero].conj().T @ dpsi[zero] / n2


# ---------------------------------------------------------------------------
# covariance-form Monte Carlo estimators
# ---------------------------------------------------------------------------

def forces_mc(samples: SampleSet, state: VariationalState,
              hamiltonian: Hamiltonian, time: float | None = None) -> ForcesReport:
    """Covariance form E_Pi[conj(O_k - mean)(E_loc - mean)].

    Full-sum sets evaluate the expectation exactly over the Born support in
    amplitude-product form, attaching the exact per-sample variance.
    """
    if samples.is_full_sum:
        _, psi, dpsi, zero = _dense_arrays(state)
        hpsi = hamiltonian.apply_to_dense(psi, time)
        sup = ~zero
        psi_s, dpsi_s, hpsi_s = psi[sup], dpsi[sup], hpsi[sup]
        n2 = np.vdot(psi_s, psi_s).real
        obar = dpsi_s.conj().T @ psi_s / n2
        ebar = np.vdot(psi_s, hpsi_s) / n2
        f = dpsi_s.conj().T @ hpsi_s / n2 - obar * ebar
        du = dpsi_s - np.outer(psi_s, obar.conj())      # psi * (O_k - mean)
        eu = hpsi_s - ebar * psi_s                      # psi * (E_loc - mean)
        inv_p = (np.abs(eu) ** 2) / (np.abs(psi_s) ** 2)
        var = (np.abs(du) ** 2).T @ inv_p / n2 - np.abs(f) ** 2
        return ForcesReport(values=f, variance=np.maximum(var.real, 0.0),
                            estimator_kind="mc_standard", n_samples=samples.n_nominal)
    w = samples.weights
    o = state.log_derivative_rows(samples.bits)
    eloc = local_energies(state, hamiltonian, samples.bits, time)
    obar = w @ o.conj()
    ebar = np.sum(w * eloc)
    fvals = (o.conj() - obar) * (eloc - ebar)[:, None]
    f = w @ fvals
    var = w @ (np.abs(fvals - f) ** 2)
    return ForcesReport(values=f, variance=var, estimator_kind="mc_standard",
                        n_samples=samples.n_nominal)


def qgt_mc(samples: SampleSet, state: VariationalState) -> QgtReport:
    """Covariance form E_Pi[conj(O_k - mean)(O_k' - mean)]."""
    if samples.is_full_sum:
        _, psi, dpsi, zero = _dense_arrays(state)
        sup = ~zero
        psi_s, dpsi_s = psi[sup], dpsi[sup]
        n2 = np.vdot(psi_s, psi_s).real
        obar = dpsi_s.conj().T @ psi_s / n2
        s = dpsi_s.conj().T @ dpsi_s / n2 - np.outer(obar, obar.conj())
        du2 = np.abs(dpsi_s - np.outer(psi_s, obar.conj())) ** 2
        inv_p = 1.0 / np.abs(psi_s) ** 2
        var = (du2 * inv_p[:, None]).T @ du2 / n2 - np.abs(s) ** 2
        return QgtReport(values=s, estimator_kind="mc_standard",
                         variance=np.maximum(var.real, 0.0),
                         n_samples=samples.n_nominal)
    w = samples.weights
    o = state.log_derivative_rows(samples.bits)
    obar = w @ o
    oc = o - obar
    s = (oc.conj() * w[:, None]).T @ oc
    oc2 = np.abs(oc) ** 2
    var = (oc2 * w[:, None]).T @ oc2 - np.abs(s) ** 2
    return QgtReport(values=s, estimator_kind="mc_standard",
                     variance=np.maximum(var, 0.0), n_samples=samples.n_nominal)


def forces_unbiased(samples: SampleSet, state: VariationalState,
                    hamiltonian: Hamiltonian, time: float | None = None) -> ForcesReport:
    """Covariance-free force estimator
    F_k = E_Pi[<dPsi_k|H|sigma>/<Psi|sigma>] - E_Pi[O*_k] E_Pi[E_loc].

    The attached variance is that of the first (covariance-free) term, whose
    statistics are what distinguish this estimator.  Requires Hermitian
    Hamiltonian terms (column access goes through conjugated rows).
    """
    if samples.is_full_sum:
        _, psi, dpsi, zero = _dense_arrays(state)
        sup = ~zero
        psi_s, dpsi_s = psi[sup], dpsi[sup]
        n2 = np.vdot(psi_s, psi_s).real
        # <dPsi_k|H|sigma> = conj((H dPsi_k)(sigma)) for Hermitian H
        hd = np.stack([hamiltonian.apply_to_dense(dpsi[:, k], time)
                       for k in range(dpsi.shape[1])], axis=1)
        num = hd[sup].conj()
        term1 = (num * psi_s[:, None]).sum(axis=0) / n2
        var1 = (np.abs(num) ** 2).sum(axis=0) / n2 - np.abs(term1) ** 2
        hpsi_s = hamiltonian.apply_to_dense(psi, time)[sup]
        obar = dpsi_s.conj().T @ psi_s / n2
        ebar = np.vdot(psi_s, hpsi_s) / n2
        f = term1 - obar * ebar
        return ForcesReport(values=f, variance=np.maximum(var1.real, 0.0),
                            estimator_kind="mc_unbiased", n_samples=samples.n_nominal)
    bits = samples.bits
    w = samples.weights
    vals, zero = state.log_amplitudes(bits)
    if zero.any():
        raise ZeroAmplitudeError("sampled configuration with zero amplitude")
    rows, outs, amps = _hamiltonian_rows(hamiltonian, bits, time)
    uniq, inv = np.unique(outs, return_inverse=True)
    _, d_uniq, _, shift = state.amplitudes_and_derivatives(uniq)
    psi_scaled = np.exp(vals - shift)
    contrib = d_uniq[inv].conj() * amps.conj()[:, None]
    num = np.zeros((len(bits), d_uniq.shape[1]), dtype=complex)
    np.add.at(num, rows, contrib)
    t1 = num / psi_scaled.conj()[:, None]
    term1 = w @ t1
    var1 = w @ (np.abs(t1 - term1) ** 2)
    o = state.log_derivative_rows(bits)
    obar = w @ o.conj()
    eloc = local_energies(state, hamiltonian, bits, time)
    ebar = np.sum(w * eloc)
    return ForcesReport(values=term1 - obar * ebar, variance=var1,
                        estimator_kind="mc_unbiased", n_samples=samples.n_nominal)


# ---------------------------------------------------------------------------
# infidelity estimators
# ---------------------------------------------------------------------------

def infidelity_exact(state_new: VariationalState, state_old: VariationalState,
                     unitary=None) -> float:
    """I(Psi_new, U Psi_old) by dense evaluation (projection-residual form)."""
    from . import oracle

    a = oracle.densify(state_new)
    b = oracle.densify(state_old)
    if unitary is not None:
        b = oracle.apply_unitary_dense(b, unitary)
    return oracle.infidelity(a, b)


_local_cache: "weakref.WeakKeyDictionary" = weakref.WeakKeyDictionary()


def _as_local(unitary) -> LocalOperator:
    """Collapse a product of K-local factors into one local operator on the
    union of the acting sites (cached per product object)."""
    u = as_unitary_product(unitary)
    cached = _local_cache.get(u)
    if cached is not None:
        return cached
    sites = u.sites
    remap = {s: k for k, s in enumerate(sites)}
    factors = [LocalOperator(tuple(remap[s] for s in f.sites), f.matrix)
               for f in u.factors]
    mat = UnitaryProduct(factors).dense(len(sites))
    out = LocalOperator(sites, mat)
    try:
        _local_cache[u] = out
    except TypeError:
        pass
    return out


def _u_amplitude_values(state_src: VariationalState, bits: np.ndarray,
                        u_local: LocalOperator):
    """(vals, logshift): vals = sum_sigma' <sigma|U|sigma'> Psi_src(sigma'),
    scaled by exp(-logshift)."""
    rows, outs, amps = _term_rows(u_local, bits, 1.0)
    uniq, inv = np.unique(outs, return_inverse=True)
    uvals, uzero = state_src.log_amplitudes(uniq)
    finite = uvals.real[~uzero]
    shift = float(finite.max()) if finite.size else 0.0
    contrib = np.zeros(len(outs), dtype=complex)
    ok = ~uzero[inv]
    contrib[ok] = amps[ok] * np.exp(uvals[inv][ok] - shift)
    out = np.zeros(len(bits), dtype=complex)
    np.add.at(out, rows, contrib)
    return out, shift


def _connected_ratio(den_state: VariationalState, src_state: VariationalState,
                     u_local: LocalOperator, bits: np.ndarray) -> np.ndarray:
    """<sigma|U|Psi_src> / <sigma|Psi_den> on rows with nonzero denominator."""
    nume, shift_u = _u_amplitude_values(src_state, bits, u_local)
    dvals, dzero = den_state.log_amplitudes(bits)
    if dzero.any():
        raise ZeroAmplitudeError("ratio undefined: denominator amplitude is zero")
    out = np.zeros(len(bits), dtype=complex)
    nz = nume != 0.0
    out[nz] = np.exp(np.log(nume[nz]) + shift_u - dvals[nz])
    return out


def infidelity_local_values(samples: SampleSet, state_new: VariationalState,
                            state_old: VariationalState, unitary) -> np.ndarray:
    """I_loc(sigma, eta) = 1 - A(sigma) B(eta) over a joint sample set, with
    A = <sigma|U Psi_old>/<sigma|Psi_new>, B = <eta|U^dag Psi_new>/<eta|Psi_old>."""
    if not samples.is_joint:
        raise ValueError("infidelity estimators need joint (sigma, eta) samples")
    u = as_unitary_product(unitary)
    a = _connected_ratio(state_new, state_old, _as_local(u), samples.bits[:, 0])
    b = _connected_ratio(state_old, state_new, _as_local(u.adjoint()),
                         samples.bits[:, 1])
    return 1.0 - a * b


def infidelity_local(pair, state_new, state_old, unitary) -> complex:
    """Single-pair I_loc; raises ZeroAmplitudeError on a zero denominator
    (callers route such outliers to the importance-sampled estimator)."""
    sigma, eta = pair
    ss = SampleSet(bits=np.array([[sigma.bits, eta.bits]], dtype=np.int64),
                   weights=np.array([1.0]), kind="probe")
    return complex(infidelity_local_values(ss, state_new, state_old, unitary)[0])


def cv_combine(values: np.ndarray, c: float) -> np.ndarray:
    """Control-variates combination Re I_loc - c (|1 - I_loc|^2 - 1)."""
    return values.real - c * (np.abs(1.0 - values) ** 2 - 1.0)


def infidelity_cv(pair, state_new, state_old, unitary, c: float) -> float:
    v = infidelity_local(pair, state_new, state_old, unitary)
    return float(cv_combine(np.array([v]), c)[0])


def _chi_marginal_moments(state_new, state_old, unitary) -> dict:
    """Full-sum moments of A over Pi_new and of B over Pi_old; every joint
    moment of F_loc = A(sigma) B(eta) factorizes into these."""
    u = as_unitary_product(unitary)
    plan = {"A": (state_new, state_old, _as_local(u)),
            "B": (state_old, state_new, _as_local(u.adjoint()))}
    out = {}
    for tag, (den, src, op) in plan.items():
        sup = full_sum_sample_set(den)
        vals = _connected_ratio(den, src, op, sup.bits)
        w = sup.weights
        # weight-first products: w ~ |psi|^2 tames the |vals| powers, which
        # can individually overflow on states with near-zero amplitudes
        wv = w * vals
        a2v = np.abs(vals) ** 2
        wa2 = w * a2v
        out[tag] = {"m1": np.sum(wv), "m2": np.sum(wv * vals),
                    "a2": float(np.sum(wa2).real),
                    "m1a2": np.sum(wv * a2v),
                    "a4": float(np.sum(wa2 * a2v).real)}
    return out


def infidelity_variance_complex(state_new, state_old, unitary) -> float:
    """Full-sum Var_chi[I_loc] = E|I_loc - I|^2 of the complex estimator."""
    mom = _chi_marginal_moments(state_new, state_old, unitary)
    f1 = mom["A"]["m1"] * mom["B"]["m1"]
    fa2 = mom["A"]["a2"] * mom["B"]["a2"]
    mean = 1.0 - f1
    e_abs2 = 1.0 - 2.0 * f1.real + fa2
    return float(e_abs2 - abs(mean) ** 2)


def _cv_moments(mom: dict, c: float):
    """Full-sum mean and variance of the CV estimator
    Icv = 1 + c - (F + conj F)/2 - c |F|^2."""
    f1 = mom["A"]["m1"] * mom["B"]["m1"]
    f2 = mom["A"]["m2"] * mom["B"]["m2"]
    fa2 = mom["A"]["a2"] * mom["B"]["a2"]
    f_fa2 = mom["A"]["m1a2"] * mom["B"]["m1a2"]
    fa4 = mom["A"]["a4"] * mom["B"]["a4"]
    mean = 1.0 + c - f1.real - c * fa2
    e2 = ((1 + c) ** 2 - 2 * (1 + c) * f1.real - 2 * (1 + c) * c * fa2
          + 0.5 * (f2.real + fa2) + 2 * c * f_fa2.real + c ** 2 * fa4)
    return float(mean), float(e2 - mean ** 2)


def optimal_cv_coefficient(state_new, state_old, unitary,
                           samples: Optional[SampleSet] = None) -> float:
    """c* = -Cov[Re F_loc, |F_loc|^2] / Var[|F_loc|^2] (full-sum or sampled)."""
    if samples is None or samples.is_full_sum:
        mom = _chi_marginal_moments(state_new, state_old, unitary)
        re_f = (mom["A"]["m1"] * mom["B"]["m1"]).real
        fa2 = mom["A"]["a2"] * mom["B"]["a2"]
        f_fa2 = (mom["A"]["m1a2"] * mom["B"]["m1a2"]).real
        fa4 = mom["A"]["a4"] * mom["B"]["a4"]
        cov = f_fa2 - re_f * fa2
        var = fa4 - fa2 ** 2
    else:
        v = 1.0 - infidelity_local_values(samples, state_new, state_old, unitary)
        w = samples.weights
        a2v = np.abs(v) ** 2
        wa2 = w * a2v
        re_f = np.sum(w * v.real)
        fa2 = np.sum(wa2)
        cov = np.sum((w * v.real) * a2v) - re_f * fa2
        var = np.sum(wa2 * a2v) - fa2 ** 2
    if var <= 0.0:
        raise DegenerateStateError(
            "Var[|F_loc|^2] vanishes; c* undefined (fall back to -1/2)")
    return float(-cov / var)


def infidelity_report(samples: Optional[SampleSet], state_new, state_old, unitary,
                      estimator_kind: str = "bare", c: Optional[float] = None,
                      outlier_threshold: float = 1e3) -> InfidelityReport:
    """Estimate I with the chosen estimator.

    ``samples=None`` (or a full-sum set) evaluates the estimator's mean and
    variance as exact sums.  ``cv_is`` expects an importance-weighted set
    from :func:`~spinvmc.sampling.sample_importance`.
    """
    if estimator_kind not in ("exact", "bare", "cv", "cv_is"):
        raise ValueError(f"unknown estimator kind {estimator_kind!r}")
    if estimator_kind == "exact":
        val = infidelity_exact(state_new, state_old, unitary)
        return InfidelityReport(mean=val, variance=0.0, snr=math.inf,
                                estimator_kind="exact", c_used=None, n_samples=None)
    c_used = CV_ASYMPTOTIC if c is None else float(c)
    if samples is None or samples.is_full_sum:
        mom = _chi_marginal_moments(state_new, state_old, unitary)
        if estimator_kind in ("cv", "cv_is"):
            mean, var = _cv_moments(mom, c_used)
            used = c_used
        else:
            f1 = mom["A"]["m1"] * mom["B"]["m1"]
            f2 = mom["A"]["m2"] * mom["B"]["m2"]
            fa2 = mom["A"]["a2"] * mom["B"]["a2"]
            mean = float(1.0 - f1.real)
            e2 = 1.0 - 2.0 * f1.real + 0.5 * (f2.real + fa2)
            var = float(e2 - mean ** 2)
            used = None
        ns = samples.n_nominal if samples is not None else None
        return InfidelityReport(mean=mean, variance=max(var, 0.0),
                                snr=snr_value(mean, max(var, 0.0), ns),
                                estimator_kind=estimator_kind, c_used=used,
                                n_samples=ns)
    vals = infidelity_local_values(samples, state_new, state_old, unitary)
    outliers = float(np.mean(np.abs(vals) > outlier_threshold))
    if estimator_kind == "bare":
        per, used = vals.real, None
    else:
        per, used = cv_combine(vals, c_used), c_used
    rep = snr_report(per, weights=samples.weights, n_samples=samples.n_nominal)
    return InfidelityReport(mean=float(np.real(rep.mean)), variance=rep.variance,
                            snr=rep.snr, estimator_kind=estimator_kind,
                            c_used=used, n_samples=rep.n_samples,
                            outlier_fraction=outliers)


def infidelity_gradient(samples: Optional[SampleSet], state_new, state_old,
                        unitary, variant: str = "bare",
                        c: float = CV_ASYMPTOTIC) -> np.ndarray:
    """Covariance-form gradient d I / d conj(theta_new_k):
    E_chi[conj(O_k)(ell - mean)] with ell = I_loc (bare) or its
    control-variates combination (variant='cv').

    The bare variant's full-sum value is the exact holomorphic gradient; the
    cv variant trades an O(c Cov[O*, |F_loc|^2]) mean shift for reduced
    sampling noise and coincides with the exact gradient at the optimum.
    """
    if variant not in ("bare", "cv"):
        raise ValueError(f"unknown gradient variant {variant!r}")
    u = as_unitary_product(unitary)
    if samples is None or samples.is_full_sum:
        sup_new = full_sum_sample_set(state_new)
        sup_old = full_sum_sample_set(state_old)
        a = _connected_ratio(state_new, state_old, _as_local(u), sup_new.bits)
        b = _connected_ratio(state_old, state_new, _as_local(u.adjoint()),
                             sup_old.bits)
        wn, wo = sup_new.weights, sup_old.weights
        o = state_new.log_derivative_rows(sup_new.bits)
        e_oc = wn @ o.conj()
        e_oca = wn @ (o.conj() * a[:, None])
        e_a = np.sum(wn * a)
        e_b = np.sum(wo * b)
        if variant == "bare":
            return -(e_oca - e_oc * e_a) * e_b
        e_ocac = wn @ (o.conj() * a.conj()[:, None])
        e_oca2 = wn @ (o.conj() * (np.abs(a) ** 2)[:, None])
        e_a2 = np.sum(wn * np.abs(a) ** 2)
        e_b2 = np.sum(wo * np.abs(b) ** 2)
        cov_f = (e_oca - e_oc * e_a) * e_b
        cov_fc = (e_ocac - e_oc * np.conj(e_a)) * np.conj(e_b)
        cov_abs = (e_oca2 - e_oc * e_a2) * e_b2
        return -0.5 * (cov_f + cov_fc) - c * cov_abs
    vals = infidelity_local_values(samples, state_new, state_old, u)
    ell = vals if variant == "bare" else cv_combine(vals, c)
    o = state_new.log_derivative_rows(samples.bits[:, 0])
    w = samples.weights
    e_o = w @ o.conj()
    e_l = np.sum(w * ell)
    return w @ (o.conj() * ell[:, None]) - e_o * e_l


# ---------------------------------------------------------------------------
# Renyi-2 swap estimator
# ---------------------------------------------------------------------------

_CROSS_PAIR_LIMIT = 4_000_000


def _swap_amplitude_lookup(state, xs, ys, shift):
    uniq = np.unique(np.concatenate([xs.ravel(), ys.ravel()]))
    uvals, uzero = state.log_amplitudes(uniq)
    uamp = np.zeros(len(uniq), dtype=complex)
    uamp[~uzero] = np.exp(uvals[~uzero] - shift)
    ixs = np.searchsorted(uniq, xs)
    iys = np.searchsorted(uniq, ys)
    return uamp[ixs], uamp[iys]


def renyi2(samples_a: Optional[SampleSet], samples_b: Optional[SampleSet],
           state: VariationalState, partition: Partition) -> Renyi2Report:
    """Two-replica swap estimator of S2 = -log2 Tr rho_A^2.

    Pass two independent Born sample sets of full configurations; the pair
    (x, y) contributes Psi(x~) Psi(y~) / (Psi(x) Psi(y)) with the A-parts of
    x and y exchanged.  ``samples_a = samples_b = None`` evaluates the exact
    full double sum (equal to the reduced-state purity).
    """
    mask_a = partition.mask_a()
    if (samples_a is None) != (samples_b is None):
        raise ValueError("provide both sample sets, or neither for the full sum")
    if samples_a is None:
        sup = full_sum_sample_set(state)
        vals, _ = state.log_amplitudes(sup.bits)
        shift = float(vals.real.max())
        psi = np.exp(vals - shift)
        n2 = float(np.sum(np.abs(psi) ** 2))
        xs, ys = swap_subsystem_bits(sup.bits[:, None], sup.bits[None, :], mask_a)
        amp_xs, amp_ys = _swap_amplitude_lookup(state, xs, ys, shift)
        purity = float(np.real(
            np.sum(psi.conj()[:, None] * psi.conj()[None, :] * amp_xs * amp_ys))
            / n2 ** 2)
        return Renyi2Report(entropy=-math.log2(purity), purity=purity,
                            purity_variance=0.0, entropy_error=0.0, n_samples=None)
    if samples_a.is_joint or samples_b.is_joint:
        raise ValueError("renyi2 expects full-configuration (non-pair) sample sets")
    xa, wa = samples_a.bits, samples_a.weights
    xb, wb = samples_b.bits, samples_b.weights
    la, _ = state.log_amplitudes(xa)
    lb, _ = state.log_amplitudes(xb)
    if len(xa) * len(xb) <= _CROSS_PAIR_LIMIT:
        xs, ys = swap_subsystem_bits(xa[:, None], xb[None, :], mask_a)
        uniq = np.unique(np.concatenate([xs.ravel(), ys.ravel()]))
        uvals, uzero = state.log_amplitudes(uniq)
        ixs = np.searchsorted(uniq, xs)
        iys = np.searchsorted(uniq, ys)
        logratio = uvals[ixs] + uvals[iys] - la[:, None] - lb[None, :]
        ratio = np.where(uzero[ixs] | uzero[iys], 0.0, np.exp(logratio)).real
        purity = float(wa @ ratio @ wb)
        row_means = ratio @ wb
        col_means = wa @ ratio
        var = float(np.sum(wa * (row_means - purity) ** 2)
                    + np.sum(wb * (col_means - purity) ** 2))
        ns = samples_a.n_nominal or len(xa)
    else:
        m = min(len(xa), len(xb))
        xs, ys = swap_subsystem_bits(xa[:m], xb[:m], mask_a)
        va, za = state.log_amplitudes(xs)
        vb, zb = state.log_amplitudes(ys)
        ratio = np.where(za | zb, 0.0, np.exp(va + vb - la[:m] - lb[:m])).real
        purity = float(np.mean(ratio))
        var = float(np.var(ratio, ddof=1))
        ns = m
    if purity <= 0.0:
        return Renyi2Report(entropy=math.nan, purity=purity, purity_variance=var,
                            entropy_error=math.inf, n_samples=ns)
    err = math.sqrt(max(var, 0.0) / max(ns or 1, 1)) / (purity * math.log(2.0))
    return Renyi2Report(entropy=-math.log2(purity), purity=purity,
                        purity_variance=var, entropy_error=err, n_samples=ns)
