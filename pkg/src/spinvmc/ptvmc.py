"""Projected time evolution: factorize the short-time propagator, apply
diagonal factors exactly through the phase-extension parameters, and fit the
remaining factors by minimizing the infidelity to the exactly rotated state.

Splitting: exp(-i H dt) ~ exp(-i H_diag dt/2) exp(-i H_x dt) exp(-i H_diag
dt/2) with O(dt^3) per-step error.  The non-diagonal part must be a sum of
single-site terms (mutually commuting), which covers the transverse-field
Ising and field-sweep Hamiltonians built in :mod:`spinvmc.operators`; the
single-site rotations are grouped into blocks and each block is fitted by
one optimization.

Projections warm-start from the current parameters.  When the state carries
measurement-mask zeros on sites a block rotates, the affected mask pairs are
pre-rotated by the exact single-site unitary: this both supplies the best
product-level initialization and lifts the exact zeros so that the
covariance-form gradient (which never sees zero-amplitude configurations)
can keep optimizing them.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import estimators, oracle, sampling
from .ansatz import DiagonalExtension, MeasurementMask, VariationalState
from .errors import ConfigError, UnsupportedSplitError, UnsupportedRotationError
from .hilbert import MAX_DENSE_SITES
from .operators import Hamiltonian, LocalOperator, UnitaryProduct
from .sampling import SamplerConfig
from .tvmc import Regularization, TrajectoryRecord, regularized_solve

logger = logging.getLogger(__name__)

OPTIMIZERS = ("sgd", "adam", "natural_gradient")
PROJECTION_ESTIMATORS = ("bare", "cv", "cv_is")


# ---------------------------------------------------------------------------
# Trotter plan
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrotterFactor:
    kind: str                               # exact_diagonal | optimized
    unitary: UnitaryProduct
    j1_shifts: dict = field(default_factory=dict)       # site -> angle
    j2_shifts: dict = field(default_factory=dict)       # sorted pair -> angle
    site_rotations: dict = field(default_factory=dict)  # site -> 2x2 unitary


@dataclass(frozen=True)
class TrotterPlan:
    factors: tuple
    dt: float
    n_sites: int

    def as_unitary(self) -> UnitaryProduct:
        """The full product, first-applied factor rightmost."""
        ops = []
        for f in reversed(self.factors):
            ops.extend(f.unitary.factors)
        return UnitaryProduct(ops)

    def reversed_plan(self) -> "TrotterPlan":
        out = []
        for f in reversed(self.factors):
            if f.kind == "exact_diagonal":
                out.append(TrotterFactor(
                    kind="exact_diagonal", unitary=f.unitary.adjoint(),
                    j1_shifts={s: -a for s, a in f.j1_shifts.items()},
                    j2_shifts={p: -a for p, a in f.j2_shifts.items()}))
            else:
                out.append(TrotterFactor(
                    kind="optimized", unitary=f.unitary.adjoint(),
                    site_rotations={s: m.conj().T
                                    for s, m in f.site_rotations.items()}))
        return TrotterPlan(tuple(out), -self.dt, self.n_sites)


def _diag_decompose(term: LocalOperator):
    """Diagonal 1- or 2-site term -> (identity, sz, sz, szsz) coefficients."""
    d = np.diagonal(term.matrix)
    if term.locality == 1:
        alpha = (d[0] + d[1]) / 2
        beta = (d[1] - d[0]) / 2          # coefficient of s (s=+1 for up)
        return alpha, (beta,), None
    s = np.array([-1.0, 1.0])
    si = np.array([s[(k >> 0) & 1] for k in range(4)])
    sj = np.array([s[(k >> 1) & 1] for k in range(4)])
    alpha = d.sum() / 4
    beta_i = (d * si).sum() / 4
    beta_j = (d * sj).sum() / 4
    delta = (d * si * sj).sum() / 4
    return alpha, (beta_i, beta_j), delta


def _diag_factor_unitary(term: LocalOperator, scale: complex) -> LocalOperator:
    return LocalOperator(term.sites,
                         np.diag(np.exp(-1j * scale * np.diagonal(term.matrix))))


def build_trotter_plan(h: Hamiltonian, dt: float, time: float | None = None,
                       block_size: int = 2) -> TrotterPlan:
    """Second-order split at time + dt/2 (midpoint) for scheduled Hamiltonians."""
    t_mid = None
    if h.is_time_dependent():
        t_mid = (time if time is not None else 0.0) + 0.5 * dt
    j1: dict[int, float] = {}
    j2: dict[tuple, float] = {}
    diag_ops_half: list[LocalOperator] = []
    gens: dict[int, np.ndarray] = {}
    for g in h.groups:
        c = g.coefficient(t_mid)
        if c == 0.0:
            continue
        for term in g.terms:
            if not term.matrix.any():
                continue
            if term.is_diagonal() and term.locality <= 2:
                _, betas, delta = _diag_decompose(term)
                tau = c * dt / 2.0
                for s, beta in zip(term.sites, betas):
                    if beta != 0.0:
                        j1[s] = j1.get(s, 0.0) + float((beta * tau).real)
                if delta is not None and delta != 0.0:
                    pair = tuple(sorted(term.sites))
                    j2[pair] = j2.get(pair, 0.0) + float((delta * tau).real)
                diag_ops_half.append(_diag_factor_unitary(term, c * dt / 2.0))
            elif term.locality == 1:
                s = term.sites[0]
                gens[s] = gens.get(s, np.zeros((2, 2), complex)) + c * term.matrix
            else:
                raise UnsupportedSplitError(
                    "splitting needs diagonal (<= 2-site) plus single-site terms; "
                    f"got a non-diagonal {term.locality}-site term")
    factors = []
    diag_factor = None
    if diag_ops_half:
        diag_factor = TrotterFactor(kind="exact_diagonal",
                                    unitary=UnitaryProduct(diag_ops_half),
                                    j1_shifts=dict(j1), j2_shifts=dict(j2))
        factors.append(diag_factor)
    if gens:
        sites = sorted(gens)
        for k in range(0, len(sites), block_size):
            block = sites[k:k + block_size]
            rots = {}
            ops = []
            for s in block:
                w, v = np.linalg.eigh(gens[s])
                u = v @ np.diag(np.exp(-1j * w * dt)) @ v.conj().T
                rots[s] = u
                ops.append(LocalOperator((s,), u))
            factors.append(TrotterFactor(kind="optimized",
                                         unitary=UnitaryProduct(ops),
                                         site_rotations=rots))
    if diag_factor is not None:
        factors.append(diag_factor)
    if not factors:
        raise UnsupportedSplitError("Hamiltonian has no terms to split")
    return TrotterPlan(tuple(factors), dt, h.n_sites)


def trotter_tfi(h: Hamiltonian, dt: float, block_size: int = 2) -> TrotterPlan:
    """The transverse-field Ising split zz/2 . x . zz/2."""
    if h.info.get("family") != "tfi":
        raise UnsupportedSplitError("trotter_tfi needs a Hamiltonian from build_tfi")
    return build_trotter_plan(h, dt, block_size=block_size)


# ---------------------------------------------------------------------------
# exact diagonal application
# ---------------------------------------------------------------------------

def _shift_diagonal(state: VariationalState, j1_shifts: dict, j2_shifts: dict):
    if isinstance(state, MeasurementMask):
        return MeasurementMask(_shift_diagonal(state.inner, j1_shifts, j2_shifts),
                               state.phi)
    if not isinstance(state, DiagonalExtension):
        raise UnsupportedRotationError(
            f"{type(state).__name__} has no diagonal phase parameters")
    dj1 = np.zeros_like(state.j1)
    for s, a in j1_shifts.items():
        dj1[s] += a
    dj2 = np.zeros_like(state.j2)
    for pair, a in j2_shifts.items():
        key = frozenset(pair)
        slot = next((k for k, e in enumerate(state.edges)
                     if frozenset(e) == key), None)
        if slot is None:
            raise UnsupportedRotationError(f"no J2 slot for edge {pair}")
        dj2[slot] += a
    return state.shifted(dj1=dj1, dj2=dj2)


def apply_exact_diagonal(state: VariationalState, factor: TrotterFactor):
    """Advance the phase-extension parameters by the factor's shifts; exact
    up to a global phase."""
    if factor.kind != "exact_diagonal":
        raise ValueError("factor is not an exact-diagonal factor")
    return _shift_diagonal(state, factor.j1_shifts, factor.j2_shifts)


def _refloat_masks(state: VariationalState, site_rotations: dict):
    """Pre-rotate measurement-mask pairs carrying an exact zero by the
    block's single-site unitaries (lifts the zeros so gradients can act)."""
    if isinstance(state, MeasurementMask):
        phi = np.array(state.phi)
        changed = False
        for s, u in site_rotations.items():
            if phi[s, 0] == 0.0 or phi[s, 1] == 0.0:
                phi[s] = u @ phi[s]
                changed = True
        inner = _refloat_masks(state.inner, site_rotations)
        if changed or inner is not state.inner:
            return MeasurementMask(inner, phi)
        return state
    if isinstance(state, DiagonalExtension):
        inner = _refloat_masks(state.inner, site_rotations)
        if inner is not state.inner:
            return DiagonalExtension(inner, state.j1, state.j2, state.edges)
        return state
    return state


# ---------------------------------------------------------------------------
# infidelity projection
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProjectionConfig:
    optimizer: str = "adam"
    learning_rate: float = 1e-2
    max_iters: int = 500
    target_infidelity: float = 1e-8
    estimator: str = "cv"
    c_policy: object = "auto"         # "auto" (c* until I < auto_threshold) or float
    auto_threshold: float = 1e-2
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    gradient_variant: str = "bare"
    regularization: Regularization = field(
        default_factory=lambda: Regularization(diag_shift=1e-9))
    lr_backtracks: int = 12

    def __post_init__(self):
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZERS}")
        if self.estimator not in PROJECTION_ESTIMATORS:
            raise ConfigError(f"estimator must be one of {PROJECTION_ESTIMATORS}")
        if self.target_infidelity <= 0:
            raise ConfigError("target_infidelity must be positive")
        if self.max_iters < 1:
            raise ConfigError("max_iters must be >= 1")


@dataclass
class ProjectionResult:
    parameters: np.ndarray
    achieved_infidelity: float
    infidelity_sigma: float
    iterations_used: int
    learning_curve: list
    converged: bool
    advise_importance_sampling: bool = False


class _Adam:
    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = None
        self.v = None
        self.t = 0

    def step(self, grad):
        if self.m is None:
            self.m = np.zeros_like(grad)
            self.v = np.zeros(len(grad))
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * np.abs(grad) ** 2
        mh = self.m / (1 - self.b1 ** self.t)
        vh = self.v / (1 - self.b2 ** self.t)
        return self.lr * mh / (np.sqrt(vh) + self.eps)


def _pick_c(cfg: ProjectionConfig, running_i, state, state_old, u, samples):
    if isinstance(cfg.c_policy, (int, float)):
        return float(cfg.c_policy)
    if samples is None:
        # full-sum estimates are exact for any c; skip the c* solve
        return estimators.CV_ASYMPTOTIC
    if running_i is not None and running_i < cfg.auto_threshold:
        return estimators.CV_ASYMPTOTIC
    try:
        return estimators.optimal_cv_coefficient(state, state_old, u, samples)
    except Exception:
        return estimators.CV_ASYMPTOTIC


def project(state_old: VariationalState, unitary, cfg: ProjectionConfig,
            init: Optional[VariationalState] = None,
            seed_seq: Optional[np.random.SeedSequence] = None) -> ProjectionResult:
    """Minimize I(Psi_theta, U Psi_old) over theta by gradient iteration.

    Warm-starts from ``init`` (default: the old parameters).  Full-sum
    sampling makes every evaluation exact and enables a backtracking line
    search (the learning curve is then non-increasing for sgd and
    natural_gradient); sampled modes step on noisy estimates.
    """
    state = init if init is not None else state_old
    full_sum = cfg.sampler.mode == "exact_full_sum"
    if seed_seq is None:
        seed_seq = np.random.SeedSequence(cfg.sampler.seed)
    adam = _Adam(cfg.learning_rate) if cfg.optimizer == "adam" else None
    lr = cfg.learning_rate
    curve: list[float] = []
    best_i = math.inf
    best_params = state.parameters()
    best_sigma = 0.0
    outlier_hits = 0
    running_i = None
    exact_eval = full_sum and state.n_sites <= MAX_DENSE_SITES

    def exact_i(st):
        try:
            return estimators.infidelity_exact(st, state_old, unitary)
        except FloatingPointError:
            return math.nan

    it = 0
    while it < cfg.max_iters:
        if full_sum:
            samples = None
        else:
            sub = sampling._seed_int(seed_seq.spawn(1)[0])
            draw_cfg = cfg.sampler.replace(seed=sub)
            if cfg.estimator == "cv_is":
                samples = sampling.sample_importance(state, state_old, unitary,
                                                     draw_cfg)
            else:
                samples = sampling.sample_joint(state, state_old, draw_cfg)
        c = _pick_c(cfg, running_i, state, state_old, unitary, samples)
        if exact_eval:
            i_est, sigma = exact_i(state), 0.0
        else:
            rep = estimators.infidelity_report(samples, state, state_old, unitary,
                                               estimator_kind=cfg.estimator, c=c)
            i_est = rep.mean
            sigma = (math.sqrt(rep.variance / rep.n_samples)
                     if rep.n_samples else 0.0)
            if rep.outlier_fraction > 0.01:
                outlier_hits += 1
        running_i = i_est
        if i_est < best_i:
            best_i, best_params, best_sigma = i_est, state.parameters(), sigma
        if i_est <= cfg.target_infidelity:
            return ProjectionResult(state.parameters(), i_est, sigma, it, curve,
                                    True, outlier_hits > 0)
        grad = estimators.infidelity_gradient(samples, state, state_old, unitary,
                                              variant=cfg.gradient_variant, c=c)
        if cfg.optimizer == "adam":
            update = adam.step(grad)
        elif cfg.optimizer == "sgd":
            update = lr * grad
        else:
            s_now = estimators.qgt_mc(sampling.full_sum_sample_set(state), state) \
                if full_sum else estimators.qgt_mc(_marginal_set(samples), state)
            update = lr * regularized_solve(s_now.values, grad, cfg.regularization)
        curve.append(i_est)
        it += 1
        candidate = state.with_parameters(state.parameters() - update)
        if exact_eval and cfg.optimizer in ("sgd", "natural_gradient"):
            # backtracking line search; a nan evaluation counts as "worse"
            i_new = exact_i(candidate)
            bt = 0
            while not (i_new <= i_est) and bt < cfg.lr_backtracks:
                lr *= 0.5
                bt += 1
                update = update * 0.5
                candidate = state.with_parameters(state.parameters() - update)
                i_new = exact_i(candidate)
            if not (i_new <= i_est):
                # no acceptable step along this direction; stop at the best
                break
            if bt == 0:
                lr = min(lr * 1.5, cfg.learning_rate)
        state = candidate
    # iterations exhausted (or search direction failed): best parameters seen
    return ProjectionResult(best_params, best_i, best_sigma, it, curve, False,
                            outlier_hits > 0)


def _marginal_set(samples: sampling.SampleSet) -> sampling.SampleSet:
    """Sigma-marginal of a joint sample set (for the natural-gradient QGT)."""
    return sampling.SampleSet(bits=samples.bits[:, 0], weights=samples.weights,
                              kind=samples.kind, n_nominal=samples.n_nominal)


# ---------------------------------------------------------------------------
# stepping
# ---------------------------------------------------------------------------

@dataclass
class StepDiagnostics:
    infidelities: list
    iterations: list
    converged: bool


def step(state: VariationalState, plan: TrotterPlan, cfg: ProjectionConfig,
         seed_seq: Optional[np.random.SeedSequence] = None,
         lr_retries: int = 3):
    """Apply one Trotter step: exact diagonal factors by parameter shift,
    optimized factors by warm-started projection with the learning rate
    halved on non-convergence (up to ``lr_retries`` times)."""
    if seed_seq is None:
        seed_seq = np.random.SeedSequence(cfg.sampler.seed)
    infids, iters = [], []
    ok = True
    for factor in plan.factors:
        if factor.kind == "exact_diagonal":
            state = apply_exact_diagonal(state, factor)
            continue
        init = _refloat_masks(state, factor.site_rotations)
        attempt_cfg = cfg
        result = None
        for attempt in range(lr_retries + 1):
            result = project(state, factor.unitary, attempt_cfg, init=init,
                             seed_seq=seed_seq.spawn(1)[0])
            if result.converged:
                break
            attempt_cfg = replace(attempt_cfg,
                                  learning_rate=attempt_cfg.learning_rate / 2)
            logger.warning("projection retry %d (I=%.3e)", attempt + 1,
                           result.achieved_infidelity)
        state = state.with_parameters(result.parameters)
        infids.append(result.achieved_infidelity)
        iters.append(result.iterations_used)
        ok = ok and result.converged
    return state, StepDiagnostics(infids, iters, ok)


def run(initial: VariationalState, h: Hamiltonian, dt: float, t_final: float,
        cfg: ProjectionConfig, seed: int = 0, block_size: int = 2,
        track_oracle: bool = True) -> TrajectoryRecord:
    """Trotterized projected evolution from t=0 to t_final."""
    state = initial
    record = TrajectoryRecord()
    record.extra = {"proj_infidelity_max": [], "proj_iterations_max": []}
    n_steps = int(round(t_final / dt))
    track = track_oracle and h.n_sites <= MAX_DENSE_SITES
    ref = oracle.densify(initial).normalized() if track else None
    master = np.random.SeedSequence([seed, 0x97C])
    plan = None if h.is_time_dependent() else build_trotter_plan(
        h, dt, block_size=block_size)
    t = 0.0
    for k in range(n_steps):
        step_plan = plan if plan is not None else build_trotter_plan(
            h, dt, time=t, block_size=block_size)
        sz, zz = _record_observables(state, cfg, master)
        infid = oracle.infidelity(oracle.densify(state), ref) if track else None
        state, diag = step(state, step_plan, cfg, master.spawn(1)[0])
        record.append(t, sz, zz, infid, not diag.converged, None, None)
        record.extra["proj_infidelity_max"].append(
            max(diag.infidelities) if diag.infidelities else 0.0)
        record.extra["proj_iterations_max"].append(
            max(diag.iterations) if diag.iterations else 0)
        if track:
            ref = oracle.evolve(ref, h, dt, time=t)
        t += dt
    sz, zz = _record_observables(state, cfg, master)
    infid = oracle.infidelity(oracle.densify(state), ref) if track else None
    record.append(t_final, sz, zz, infid, False, None, None)
    record.extra["proj_infidelity_max"].append(0.0)
    record.extra["proj_iterations_max"].append(0)
    record.final_state = state
    return record


def _record_observables(state, cfg, master):
    from .tvmc import _observables

    if cfg.sampler.mode == "exact_full_sum":
        return _observables(state, None)
    samples = sampling.sample_born(
        state, cfg.sampler.replace(seed=sampling._seed_int(master.spawn(1)[0])))
    return _observables(state, samples)
