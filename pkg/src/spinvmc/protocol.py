"""Trotterized transverse-field Ising evolution interspersed with random
single-site projective measurements, with Renyi-2 entropy tracking and
trajectory averaging.

Two engines consume an identical stream of uniform draws per trajectory: the
variational engine (projected evolution on a masked, phase-extended RBM) and
the dense oracle engine (exact propagation and projection).  With matching
outcome probabilities the engines reproduce identical measurement logs, so
their entropy curves can be compared step by step.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import estimators, oracle, ptvmc, sampling
from .ansatz import (DiagonalExtension, MeasurementMask, RbmAnsatz,
                     VariationalState, apply_measurement)
from .errors import ConfigError
from .hilbert import MAX_DENSE_SITES, Lattice, Partition, all_bits, occupations
from .operators import Hamiltonian, build_tfi
from .sampling import SamplerConfig

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ProtocolConfig:
    lattice: Lattice = field(default_factory=lambda: Lattice("square", 2, True))
    J: float = 0.5
    h: float = 0.5 * 3.044 / 4.0       # h_c/4 with h_c/J ~ 3.044
    measurement_rate: float = 0.01
    dt: float = 0.1
    t_final: float = 1.0
    n_trajectories: int = 5
    partition_sizes: Optional[tuple] = None   # default 1..floor(N/2)
    rbm_alpha: int = 4
    ptvmc: ptvmc.ProjectionConfig = field(default_factory=lambda: ptvmc.ProjectionConfig(
        optimizer="natural_gradient", learning_rate=1.0, max_iters=400,
        target_infidelity=1e-10, estimator="cv",
        sampler=SamplerConfig(mode="exact_full_sum")))
    block_size: int = 2
    s2_samples: Optional[int] = None   # None -> full-sum Renyi-2 estimates
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.measurement_rate <= 1.0:
            raise ConfigError("measurement_rate must be in [0, 1]")
        if self.n_trajectories < 1:
            raise ConfigError("n_trajectories must be >= 1")

    def partitions(self) -> list[Partition]:
        n = self.lattice.n_sites
        sizes = self.partition_sizes or tuple(range(1, n // 2 + 1))
        return [Partition.first_k(n, k) for k in sizes]


@dataclass
class TrajectoryEntropyRecord:
    """Per-time, per-partition entropy estimates of one trajectory."""

    trajectory_index: int
    engine: str
    times: list = field(default_factory=list)
    partition_sizes: list = field(default_factory=list)
    boundary_lengths: list = field(default_factory=list)
    s2: list = field(default_factory=list)        # rows: per time, per partition
    s2_err: list = field(default_factory=list)
    measurement_log: list = field(default_factory=list)   # dicts: t, site, outcome, p_up
    flagged: bool = False

    def csv_rows(self):
        for i, t in enumerate(self.times):
            for j, size in enumerate(self.partition_sizes):
                yield [t, size, self.boundary_lengths[j],
                       self.s2[i][j], self.s2_err[i][j]]


def measurement_probability(state: VariationalState, site: int,
                            sampler: Optional[SamplerConfig] = None) -> float:
    """p(up) = E_Pi[occupation of the site]; exact for dense-capacity
    systems, otherwise a Born-sample estimate."""
    if state.n_sites <= MAX_DENSE_SITES and (
            sampler is None or sampler.mode != "metropolis"):
        probs = sampling.exact_distribution(state)
        occ = ((all_bits(state.n_sites) >> site) & 1).astype(float)
        return float(np.sum(probs * occ))
    samples = sampling.sample_born(state, sampler or SamplerConfig())
    occ = occupations(samples.bits, state.n_sites)[:, site].astype(float)
    return float(np.sum(samples.weights * occ))


def measurement_sweep(state: VariationalState, rate: float, rng,
                      sampler: Optional[SamplerConfig] = None, time: float = 0.0):
    """Visit sites in ascending order; measure each with the configured rate
    and collapse by the drawn outcome.  Returns (state, log entries)."""
    log = []
    for site in range(state.n_sites):
        if rng.random() >= rate:
            continue
        p_up = measurement_probability(state, site, sampler)
        outcome = "up" if rng.random() < p_up else "down"
        state = apply_measurement(state, site, outcome)
        log.append({"t": float(time), "site": site, "outcome": outcome,
                    "p_up": p_up})
    return state, log


class _OracleEngine:
    """Dense twin consuming the same measurement draws."""

    def __init__(self, cfg: ProtocolConfig, h: Hamiltonian):
        n = cfg.lattice.n_sites
        self.h = h
        self.dt = cfg.dt
        self.state = oracle.DenseState(
            np.full(1 << n, 1.0 / math.sqrt(1 << n), dtype=complex), n)

    def unitary_step(self, time: float):
        self.state = oracle.evolve(self.state, self.h, self.dt, time=time)

    def measure_sweep(self, rate, rng, time):
        log = []
        n = self.state.n_sites
        for site in range(n):
            if rng.random() >= rate:
                continue
            bits = all_bits(n)
            occ = ((bits >> site) & 1).astype(float)
            p = np.abs(self.state.amplitudes) ** 2
            p_up = float(np.sum(p * occ) / np.sum(p))
            outcome = "up" if rng.random() < p_up else "down"
            self.state, _ = oracle.project_and_normalize(self.state, site, outcome)
            log.append({"t": float(time), "site": site, "outcome": outcome,
                        "p_up": p_up})
        return log

    def renyi2(self, partition):
        return oracle.renyi2_exact(self.state, partition), 0.0


def _initial_variational_state(cfg: ProtocolConfig, h: Hamiltonian) -> VariationalState:
    # RBM at zero parameters is exactly the uniform product state |+>^N
    rbm = RbmAnsatz.zeros(cfg.lattice.n_sites, cfg.rbm_alpha)
    ext = DiagonalExtension.wrap(rbm, edges=tuple(h.info["edges"]))
    return MeasurementMask.wrap(ext)


def _s2_estimate(state, partition, cfg: ProtocolConfig, seed_seq):
    if cfg.s2_samples is None:
        rep = estimators.renyi2(None, None, state, partition)
        return rep.entropy, 0.0
    s0, s1 = seed_seq.spawn(2)
    sampler = SamplerConfig(mode="exact_multinomial", n_samples=cfg.s2_samples,
                            seed=sampling._seed_int(s0))
    set_a = sampling.sample_born(state, sampler)
    set_b = sampling.sample_born(state, sampler.replace(
        seed=sampling._seed_int(s1)))
    rep = estimators.renyi2(set_a, set_b, state, partition)
    return rep.entropy, rep.entropy_error


def run_trajectory(cfg: ProtocolConfig, trajectory_index: int,
                   engine: str = "variational") -> TrajectoryEntropyRecord:
    """One stochastic trajectory: alternate a Trotterized unitary step and a
    measurement sweep, recording Renyi-2 entropies for every partition."""
    if engine not in ("variational", "oracle"):
        raise ValueError("engine must be 'variational' or 'oracle'")
    h = build_tfi(cfg.lattice, cfg.J, cfg.h)
    partitions = cfg.partitions()
    record = TrajectoryEntropyRecord(
        trajectory_index=trajectory_index, engine=engine,
        partition_sizes=[len(p.subsystem_a) for p in partitions],
        boundary_lengths=[p.boundary_length(cfg.lattice) for p in partitions])
    draw_rng = np.random.default_rng(
        np.random.SeedSequence([cfg.seed, trajectory_index, 0xD1CE]))
    s2_master = np.random.SeedSequence([cfg.seed, trajectory_index, 0x52])
    proj_master = np.random.SeedSequence([cfg.seed, trajectory_index, 0xF1])

    n_steps = int(round(cfg.t_final / cfg.dt))
    if engine == "oracle":
        eng = _OracleEngine(cfg, h)
        state = None
    else:
        state = _initial_variational_state(cfg, h)
        plan = ptvmc.build_trotter_plan(h, cfg.dt, block_size=cfg.block_size)

    def record_row(t):
        s2_row, err_row = [], []
        for part in partitions:
            if engine == "oracle":
                s2, err = eng.renyi2(part)
            else:
                s2, err = _s2_estimate(state, part, cfg, s2_master.spawn(1)[0])
            s2_row.append(float(s2))
            err_row.append(float(err))
        record.times.append(float(t))
        record.s2.append(s2_row)
        record.s2_err.append(err_row)

    record_row(0.0)
    t = 0.0
    for _ in range(n_steps):
        if engine == "oracle":
            eng.unitary_step(t)
            log = eng.measure_sweep(cfg.measurement_rate, draw_rng, t + cfg.dt)
        else:
            state, diag = ptvmc.step(state, plan, cfg.ptvmc,
                                     proj_master.spawn(1)[0])
            if not diag.converged:
                record.flagged = True
            state, log = measurement_sweep(state, cfg.measurement_rate, draw_rng,
                                           cfg.ptvmc.sampler, time=t + cfg.dt)
        record.measurement_log.extend(log)
        t += cfg.dt
        record_row(t)
    return record


def average(records: list[TrajectoryEntropyRecord]):
    """Per-(time, partition) mean and standard error over non-flagged
    trajectories; returns (times, sizes, boundaries, mean, sem, n_used,
    n_excluded)."""
    used = [r for r in records if not r.flagged]
    if not used:
        raise ConfigError("all trajectories were flagged; nothing to average")
    times = used[0].times
    sizes = used[0].partition_sizes
    bounds = used[0].boundary_lengths
    data = np.array([r.s2 for r in used])       # (R, T, K)
    mean = data.mean(axis=0)
    if len(used) > 1:
        sem = data.std(axis=0, ddof=1) / math.sqrt(len(used))
    else:
        sem = np.zeros_like(mean)
    return times, sizes, bounds, mean, sem, len(used), len(records) - len(used)


def steady_state_summary(times, sizes, bounds, mean, window: float = 0.2):
    """Late-time averages grouped by (partition size, boundary length); the
    window is the trailing fraction of recorded times."""
    t = np.asarray(times)
    cut = t[-1] - window * (t[-1] - t[0])
    sel = t >= cut
    rows = []
    for j, (size, b) in enumerate(zip(sizes, bounds)):
        rows.append([size, b, float(mean[sel, j].mean())])
    return rows
