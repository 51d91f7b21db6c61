"""Explicit time integration of the variational equations of motion:
solve S theta_dot = -i F each step and advance with Euler or RK4.

The linear solve goes through a regularized pseudo-inverse shared with the
natural-gradient optimizer in :mod:`spinvmc.ptvmc`.  A vanishing S (the
covariance estimators on a state whose support has collapsed to the sampled
configurations) raises the stall flag and freezes the parameters, which is
the diagnostic signature this scheme is expected to show on states with
exact zeros.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import estimators, oracle, sampling
from .ansatz import VariationalState
from .errors import ConfigError
from .hilbert import MAX_DENSE_SITES
from .operators import Hamiltonian
from .sampling import SamplerConfig

logger = logging.getLogger(__name__)

ESTIMATOR_KINDS = ("exact_sum", "mc_standard", "mc_unbiased_F")
INTEGRATORS = ("euler", "rk4")


@dataclass(frozen=True)
class Regularization:
    diag_shift: float = 1e-6
    svd_cutoff: float = 1e-10
    stall_tol: float = 1e-12

    def __post_init__(self):
        if self.diag_shift < 0:
            raise ConfigError("diag_shift must be >= 0")
        if not 0 <= self.svd_cutoff < 1:
            raise ConfigError("svd_cutoff must be in [0, 1)")


def regularized_solve(s_matrix: np.ndarray, rhs: np.ndarray,
                      reg: Regularization) -> np.ndarray:
    """pinv(S + diag_shift I; svd_cutoff) @ rhs for Hermitian S."""
    a = s_matrix + reg.diag_shift * np.eye(len(s_matrix))
    return np.linalg.pinv(a, rcond=reg.svd_cutoff, hermitian=True) @ rhs


def solve_update(s_report: estimators.QgtReport, f_report: estimators.ForcesReport,
                 reg: Regularization):
    """theta_dot = -i pinv(S + lambda I; tau) F; returns (theta_dot, stalled).

    A numerically zero S yields theta_dot = 0 with the stall flag set rather
    than an error: the trajectory keeps recording the frozen state.
    """
    s = np.asarray(s_report.values)
    f = np.asarray(f_report.values)
    if s.shape != (len(f), len(f)):
        raise ValueError("S and F dimensions do not match")
    smax = float(np.linalg.norm(s, 2)) if len(f) else 0.0
    if smax < reg.stall_tol:
        return np.zeros(len(f), dtype=complex), True
    return -1j * regularized_solve(s, f, reg), False


@dataclass(frozen=True)
class TvmcConfig:
    dt: float = 1e-3
    t_final: float = 1.0
    integrator: str = "rk4"
    estimator_kind: str = "exact_sum"
    regularization: Regularization = field(default_factory=Regularization)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    track_oracle: bool = True
    record_parameters: bool = False

    def __post_init__(self):
        if self.dt <= 0 or self.t_final < 0:
            raise ConfigError("dt must be > 0 and t_final >= 0")
        if self.integrator not in INTEGRATORS:
            raise ConfigError(f"integrator must be one of {INTEGRATORS}")
        if self.estimator_kind not in ESTIMATOR_KINDS:
            raise ConfigError(f"estimator_kind must be one of {ESTIMATOR_KINDS}")


@dataclass
class TrajectoryRecord:
    """Per-step observables of one dynamics run, appended in time order."""

    times: list = field(default_factory=list)
    sigma_z: list = field(default_factory=list)          # per-site list each step
    zz_01: list = field(default_factory=list)            # <sz_0 sz_1> or nan
    infidelity_vs_oracle: list = field(default_factory=list)
    stall_flags: list = field(default_factory=list)
    snr_f_min: list = field(default_factory=list)
    snr_s_min: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)            # engine-specific columns
    parameters: list = field(default_factory=list)
    final_state: object = None

    def append(self, t, sz, zz, infid, stalled, snr_f, snr_s):
        self.times.append(float(t))
        self.sigma_z.append([float(x) for x in sz])
        self.zz_01.append(float(zz))
        self.infidelity_vs_oracle.append(
            float(infid) if infid is not None else math.nan)
        self.stall_flags.append(bool(stalled))
        self.snr_f_min.append(float(snr_f) if snr_f is not None else math.inf)
        self.snr_s_min.append(float(snr_s) if snr_s is not None else math.inf)

    def csv_header(self) -> list[str]:
        n = len(self.sigma_z[0]) if self.sigma_z else 0
        cols = ["t"] + [f"sz_{i}" for i in range(n)] + ["zz_01",
                "infidelity_vs_oracle", "stall_flag", "snr_F_min", "snr_S_min"]
        cols += sorted(self.extra.keys())
        return cols

    def csv_rows(self):
        for i, t in enumerate(self.times):
            row = [t, *self.sigma_z[i], self.zz_01[i], self.infidelity_vs_oracle[i],
                   int(self.stall_flags[i]), self.snr_f_min[i], self.snr_s_min[i]]
            row += [self.extra[k][i] for k in sorted(self.extra.keys())]
            yield row


def _min_snr(values: np.ndarray, variance: np.ndarray, n_samples) -> float:
    best = math.inf
    for v, var in zip(values, variance):
        best = min(best, estimators.snr_value(v, var, n_samples))
    return best


def _estimates(state: VariationalState, h: Hamiltonian, cfg: TvmcConfig,
               t: float, seed: int):
    """(theta_dot, stalled, samples, snr_f, snr_s) at one integrator stage."""
    tt = t if h.is_time_dependent() else None
    if cfg.estimator_kind == "exact_sum":
        f = estimators.forces_exact(state, h, tt)
        s = estimators.qgt_exact(state)
        dot, stalled = solve_update(s, f, cfg.regularization)
        return dot, stalled, None, None, None
    samples = sampling.sample_born(state, cfg.sampler.replace(seed=seed))
    if cfg.estimator_kind == "mc_unbiased_F":
        f = estimators.forces_unbiased(samples, state, h, tt)
    else:
        f = estimators.forces_mc(samples, state, h, tt)
    s = estimators.qgt_mc(samples, state)
    dot, stalled = solve_update(s, f, cfg.regularization)
    snr_f = _min_snr(f.values, f.variance, samples.n_nominal)
    snr_s = _min_snr(s.values.ravel(), s.variance.ravel(), samples.n_nominal)
    return dot, stalled, samples, snr_f, snr_s


def step(state: VariationalState, h: Hamiltonian, cfg: TvmcConfig, t: float,
         seed_seq: np.random.SeedSequence):
    """One Euler or RK4 step; MC estimators redraw fresh samples per stage.

    Returns (new_state, stage-0 diagnostics)."""
    seeds = [sampling._seed_int(s) for s in seed_seq.spawn(4)]
    theta = state.parameters()
    k1, stalled, samples, snr_f, snr_s = _estimates(state, h, cfg, t, seeds[0])
    diag = (stalled, samples, snr_f, snr_s)
    if cfg.integrator == "euler" or stalled:
        return state.with_parameters(theta + cfg.dt * k1), diag
    dt = cfg.dt
    k2 = _estimates(state.with_parameters(theta + 0.5 * dt * k1), h, cfg,
                    t + 0.5 * dt, seeds[1])[0]
    k3 = _estimates(state.with_parameters(theta + 0.5 * dt * k2), h, cfg,
                    t + 0.5 * dt, seeds[2])[0]
    k4 = _estimates(state.with_parameters(theta + dt * k3), h, cfg,
                    t + dt, seeds[3])[0]
    new = theta + dt * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0
    return state.with_parameters(new), diag


def _observables(state, samples) -> tuple[np.ndarray, float]:
    """Per-site <sigma_z> and <sz_0 sz_1>, from the step's samples when
    present (estimator-consistent), else from the exact distribution."""
    n = state.n_sites
    if samples is not None:
        from .hilbert import spin_values

        s = spin_values(samples.bits, n)
        w = samples.weights
        sz = w @ s
        zz = float(np.sum(w * s[:, 0] * s[:, 1])) if n >= 2 else math.nan
        return sz, zz
    probs = sampling.exact_distribution(state)
    from .hilbert import all_bits, spin_values

    s = spin_values(all_bits(n), n)
    sz = probs @ s
    zz = float(np.sum(probs * s[:, 0] * s[:, 1])) if n >= 2 else math.nan
    return sz, zz


def run(initial: VariationalState, h: Hamiltonian, cfg: TvmcConfig,
        seed: int = 0) -> TrajectoryRecord:
    """Integrate from t=0 to t_final, recording observables each step."""
    state = initial
    record = TrajectoryRecord()
    n_steps = int(round(cfg.t_final / cfg.dt))
    track = cfg.track_oracle and h.n_sites <= MAX_DENSE_SITES
    ref = oracle.densify(initial).normalized() if track else None
    master = np.random.SeedSequence([seed, 0x7C4C])
    step_seqs = master.spawn(n_steps)
    t = 0.0
    for k in range(n_steps):
        new_state, (stalled, samples, snr_f, snr_s) = step(
            state, h, cfg, t, step_seqs[k])
        sz, zz = _observables(state, samples)
        infid = oracle.infidelity(oracle.densify(state), ref) if track else None
        record.append(t, sz, zz, infid, stalled, snr_f, snr_s)
        if cfg.record_parameters:
            record.parameters.append(state.parameters())
        state = new_state
        if track:
            ref = oracle.evolve(ref, h, cfg.dt, time=t)
        t += cfg.dt
        if k % 200 == 0:
            logger.debug("tvmc t=%.4f stalled=%s", t, stalled)
    # final point
    sz, zz = _observables(state, None if cfg.estimator_kind == "exact_sum" else
                          sampling.sample_born(
                              state, cfg.sampler.replace(
                                  seed=sampling._seed_int(master.spawn(1)[0]))))
    infid = oracle.infidelity(oracle.densify(state), ref) if track else None
    record.append(cfg.t_final, sz, zz, infid, False, None, None)
    if cfg.record_parameters:
        record.parameters.append(state.parameters())
    record.final_state = state
    return record
