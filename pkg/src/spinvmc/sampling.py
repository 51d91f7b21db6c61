"""Samplers for Born distributions, joint distributions, and the
importance-sampled variant used by the infidelity estimator.

Three modes:

* ``exact_full_sum``   - deterministic enumeration; weights are exact Born
  probabilities, so every "expectation" becomes an exact sum.
* ``exact_multinomial`` - i.i.d. draws from the enumerated Born distribution,
  returned grouped (unique configurations with count weights).
* ``metropolis``        - single-site-flip Metropolis chains.  For dense-
  capacity systems the target is tabulated once and the walk runs in a
  compiled kernel; larger systems use a chain-vectorized generic walk.

Samplers are deterministic given ``SamplerConfig.seed``; each chain draws
from a private stream derived from (seed, chain index).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels
from .ansatz import VariationalState
from .errors import DegenerateStateError
from .hilbert import MAX_DENSE_SITES, all_bits
from .operators import as_unitary_product

SAMPLER_MODES = ("exact_full_sum", "exact_multinomial", "metropolis")


@dataclass(frozen=True)
class SamplerConfig:
    mode: str = "exact_full_sum"
    n_samples: int = 1024
    n_chains: int = 8
    burn_in_sweeps: Optional[int] = None   # default 10 * n_sites
    sweep_length: Optional[int] = None     # proposals per sweep, default n_sites
    seed: int = 0
    pilot_fraction: float = 0.1            # importance-sampling normalizer sample

    def __post_init__(self):
        if self.mode not in SAMPLER_MODES:
            raise ValueError(f"mode must be one of {SAMPLER_MODES}, got {self.mode!r}")
        if self.n_samples < 1:
            raise ValueError("n_samples must be positive")
        if self.mode == "metropolis" and self.n_samples % self.n_chains != 0:
            raise ValueError("n_samples must be divisible by n_chains")

    def replace(self, **kw) -> "SamplerConfig":
        d = self.__dict__ | kw
        return SamplerConfig(**d)


@dataclass(frozen=True)
class ChainMeta:
    n_chains: int
    burn_in_sweeps: int
    sweep_length: int
    acceptance_rate: float


@dataclass(frozen=True)
class SampleSet:
    """Configurations with expectation weights.

    ``bits`` has shape (B,) for single-state sets or (B, 2) for joint pairs
    (sigma, eta).  ``weights`` are chosen so that an expectation estimate is
    ``sum(weights * f(bits))``; for probability-weighted sets they sum to 1.
    ``n_nominal`` is the statistical sample count behind the set (None for
    exact full sums).
    """

    bits: np.ndarray
    weights: np.ndarray
    kind: str
    seed: Optional[int] = None
    n_nominal: Optional[int] = None
    chain_meta: Optional[ChainMeta] = None

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if np.any(w <= 0):
            raise ValueError("sample weights must be positive")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bits", np.asarray(self.bits, dtype=np.int64))

    @property
    def is_full_sum(self) -> bool:
        return self.kind == "exact_full_sum"

    @property
    def is_joint(self) -> bool:
        return self.bits.ndim == 2

    def __len__(self) -> int:
        return len(self.bits)


def exact_distribution(state: VariationalState) -> np.ndarray:
    """The normalized Born distribution over the full basis (exact zeros map
    to probability 0)."""
    psi, zero, _ = state.scaled_amplitudes(all_bits(state.n_sites))
    p = np.abs(psi) ** 2
    total = p.sum()
    if total == 0.0:
        raise DegenerateStateError("state is identically zero")
    return p / total


def full_sum_sample_set(state: VariationalState) -> SampleSet:
    probs = exact_distribution(state)
    sup = np.nonzero(probs > 0.0)[0]
    return SampleSet(bits=sup.astype(np.int64), weights=probs[sup],
                     kind="exact_full_sum")


def _multinomial_set(state, cfg, rng) -> SampleSet:
    probs = exact_distribution(state)
    counts = rng.multinomial(cfg.n_samples, probs)
    sup = np.nonzero(counts)[0]
    return SampleSet(bits=sup.astype(np.int64), weights=counts[sup] / cfg.n_samples,
                     kind="exact_multinomial", seed=cfg.seed, n_nominal=cfg.n_samples)


def _chain_starts(state, n_chains, rng) -> np.ndarray:
    if state.n_sites <= MAX_DENSE_SITES:
        probs = exact_distribution(state)
        return rng.choice(len(probs), size=n_chains, p=probs).astype(np.int64)
    # greedy amplitude ascent from random configurations
    starts = np.empty(n_chains, dtype=np.int64)
    frozen = set(state.frozen_flip_sites())
    sites = [i for i in range(state.n_sites) if i not in frozen]
    for c in range(n_chains):
        bits = int(rng.integers(0, 1 << state.n_sites))
        val, zero = state.log_amplitudes(np.array([bits]))
        best = -np.inf if zero[0] else val[0].real
        for _ in range(10 * state.n_sites):
            cand = np.array([bits ^ (1 << s) for s in sites], dtype=np.int64)
            vals, zeros = state.log_amplitudes(cand)
            re = np.where(zeros, -np.inf, vals.real)
            k = int(np.argmax(re))
            if re[k] <= best:
                break
            bits, best = int(cand[k]), float(re[k])
        starts[c] = bits
    return starts


def _metropolis_set(state, cfg, rng) -> SampleSet:
    n = state.n_sites
    n_chains = cfg.n_chains
    burn_sweeps = cfg.burn_in_sweeps if cfg.burn_in_sweeps is not None else 10 * n
    sweep = cfg.sweep_length if cfg.sweep_length is not None else n
    keep = cfg.n_samples // n_chains
    frozen = set(state.frozen_flip_sites())
    allowed = np.array([i for i in range(n) if i not in frozen], dtype=np.int64)
    if allowed.size == 0:
        raise DegenerateStateError("every site is frozen; nothing to sample")

    burn_props = burn_sweeps * sweep
    total_props = burn_props + keep * sweep
    chain_rngs = [np.random.default_rng(s)
                  for s in np.random.SeedSequence(cfg.seed).spawn(n_chains + 1)]
    start_rng = chain_rngs[-1]
    starts = _chain_starts(state, n_chains, start_rng)

    masks = np.empty((n_chains, total_props), dtype=np.int64)
    accept_u = np.empty((n_chains, total_props), dtype=np.float64)
    flip_lut = (np.int64(1) << allowed)
    for c in range(n_chains):
        r = chain_rngs[c]
        masks[c] = flip_lut[r.integers(0, allowed.size, size=total_props)]
        accept_u[c] = r.random(total_props)

    out = np.empty((n_chains, keep), dtype=np.int64)
    if n <= MAX_DENSE_SITES:
        vals, zero = state.log_amplitudes(all_bits(n))
        table = np.where(zero, -1e300, 2.0 * vals.real)
        accepted = _kernels.metropolis_table_walk(
            table, starts, masks, accept_u, burn_props, sweep, out)
    else:
        accepted = _generic_walk(state, starts, masks, accept_u, burn_props, sweep, out)

    rate = accepted / (n_chains * total_props)
    meta = ChainMeta(n_chains, burn_sweeps, sweep, float(rate))
    bits = out.reshape(-1)
    return SampleSet(bits=bits, weights=np.full(bits.size, 1.0 / bits.size),
                     kind="metropolis", seed=cfg.seed, n_nominal=bits.size,
                     chain_meta=meta)


def _generic_walk(state, starts, masks, accept_u, burn_props, stride, out):
    """Chain-vectorized Metropolis using batched log-amplitude queries."""
    idx = starts.copy()
    vals, zero = state.log_amplitudes(idx)
    lw = np.where(zero, -1e300, 2.0 * vals.real)
    accepted = 0
    k = 0
    for t in range(masks.shape[1]):
        prop = idx ^ masks[:, t]
        vals, zero = state.log_amplitudes(prop)
        lw_new = np.where(zero, -1e300, 2.0 * vals.real)
        d = lw_new - lw
        acc = (d >= 0.0) | (accept_u[:, t] < np.exp(np.minimum(d, 0.0)))
        idx = np.where(acc, prop, idx)
        lw = np.where(acc, lw_new, lw)
        accepted += int(acc.sum())
        if t >= burn_props and (t - burn_props + 1) % stride == 0 and k < out.shape[1]:
            out[:, k] = idx
            k += 1
    return accepted


def sample_born(state: VariationalState, cfg: SamplerConfig) -> SampleSet:
    """Samples from the Born distribution Pi ~ |Psi|^2 in the configured mode."""
    if cfg.mode == "exact_full_sum":
        return full_sum_sample_set(state)
    rng = np.random.default_rng(cfg.seed)
    if cfg.mode == "exact_multinomial":
        return _multinomial_set(state, cfg, rng)
    return _metropolis_set(state, cfg, rng)


def sample_joint(state_new: VariationalState, state_old: VariationalState,
                 cfg: SamplerConfig) -> SampleSet:
    """Pairs (sigma, eta) from the product chi of the two Born distributions.

    In full-sum mode returns the complete weighted product support.
    """
    if cfg.mode == "exact_full_sum":
        a = full_sum_sample_set(state_new)
        b = full_sum_sample_set(state_old)
        pairs = np.stack(np.meshgrid(a.bits, b.bits, indexing="ij"), axis=-1).reshape(-1, 2)
        w = np.outer(a.weights, b.weights).reshape(-1)
        return SampleSet(bits=pairs, weights=w, kind="exact_full_sum")
    s0, s1 = np.random.SeedSequence(cfg.seed).spawn(2)
    set_a = sample_born(state_new, cfg.replace(seed=_seed_int(s0)))
    set_b = sample_born(state_old, cfg.replace(seed=_seed_int(s1)))
    if cfg.mode == "exact_multinomial":
        # expand grouped draws into ordered streams before pairing
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xC0FFEE]))
        ba = _expand(set_a, cfg.n_samples, rng)
        bb = _expand(set_b, cfg.n_samples, rng)
    else:
        ba, bb = set_a.bits, set_b.bits
    pairs = np.stack([ba, bb], axis=1)
    return SampleSet(bits=pairs, weights=np.full(len(pairs), 1.0 / len(pairs)),
                     kind=cfg.mode, seed=cfg.seed, n_nominal=len(pairs),
                     chain_meta=set_a.chain_meta)


def _expand(sample_set: SampleSet, n: int, rng) -> np.ndarray:
    reps = np.repeat(sample_set.bits, np.round(sample_set.weights * n).astype(int))
    return rng.permutation(reps)


def _seed_int(seq: np.random.SeedSequence) -> int:
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def sample_importance(state_new: VariationalState, state_old: VariationalState,
                      unitary, cfg: SamplerConfig) -> SampleSet:
    """Pairs from chi' ~ |I_loc| chi with unbiasing weights
    w = E_chi[|I_loc|] / |I_loc| folded into the set's expectation weights."""
    from .estimators import infidelity_local_values  # local import; no cycle at runtime

    u = as_unitary_product(unitary)
    if cfg.mode == "exact_full_sum":
        joint = sample_joint(state_new, state_old, cfg)
        vals = infidelity_local_values(joint, state_new, state_old, u)
        mag = np.abs(vals)
        norm = float(np.sum(joint.weights * mag))
        if norm == 0.0:
            raise DegenerateStateError(
                "|I_loc| vanishes everywhere; the states already coincide")
        keep = mag > 0.0
        chi_p = joint.weights[keep] * mag[keep] / norm        # chi'
        w_is = norm / mag[keep]                               # unbiasing weights
        return SampleSet(bits=joint.bits[keep], weights=chi_p * w_is,
                         kind="exact_full_sum")

    # sampled: Metropolis on the joint (2n)-bit space with target |I_loc| chi
    n = state_new.n_sites
    if 2 * n > MAX_DENSE_SITES + 6:
        raise DegenerateStateError(
            "sampled importance path tabulates the pair space; needs 2n <= "
            f"{MAX_DENSE_SITES + 6} sites")
    rng = np.random.default_rng(cfg.seed)

    # pilot chi-sample for the normalizer E_chi[|I_loc|]
    pilot_n = max(int(cfg.n_samples * cfg.pilot_fraction), 64)
    pilot_cfg = cfg.replace(mode="exact_multinomial", n_samples=pilot_n,
                            seed=_seed_int(np.random.SeedSequence([cfg.seed, 1])))
    pilot = sample_joint(state_new, state_old, pilot_cfg)
    pilot_vals = np.abs(infidelity_local_values(pilot, state_new, state_old, u))
    norm_est = float(np.sum(pilot.weights * pilot_vals))
    if norm_est == 0.0:
        raise DegenerateStateError("pilot sample saw |I_loc| = 0 everywhere")

    # tabulated joint target
    pn = exact_distribution(state_new)
    po = exact_distribution(state_old)
    dim = 1 << n
    pair_bits = np.stack(np.meshgrid(np.arange(dim, dtype=np.int64),
                                     np.arange(dim, dtype=np.int64),
                                     indexing="ij"), axis=-1).reshape(-1, 2)
    sup = (pn[pair_bits[:, 0]] > 0) & (po[pair_bits[:, 1]] > 0)
    vals_all = np.zeros(len(pair_bits))
    probe = SampleSet(bits=pair_bits[sup], weights=np.full(int(sup.sum()), 1.0),
                      kind="probe")
    vals_all[sup] = np.abs(infidelity_local_values(probe, state_new, state_old, u))
    chi = pn[pair_bits[:, 0]] * po[pair_bits[:, 1]]
    target = vals_all * chi
    if target.max() == 0.0:
        raise DegenerateStateError(
            "|I_loc| vanishes everywhere; the states already coincide")
    with np.errstate(divide="ignore"):
        table = np.where(target > 0, np.log(target), -1e300)

    frozen_new = set(state_new.frozen_flip_sites())
    frozen_old = set(state_old.frozen_flip_sites())
    allowed = [i + n for i in range(n) if i not in frozen_new]
    allowed += [i for i in range(n) if i not in frozen_old]
    # joint index = sigma * 2^n + eta: sigma occupies the high bits
    allowed = np.array(sorted(allowed), dtype=np.int64)

    n_chains = cfg.n_chains
    keep = cfg.n_samples // n_chains
    sweep = cfg.sweep_length if cfg.sweep_length is not None else 2 * n
    burn = (cfg.burn_in_sweeps if cfg.burn_in_sweeps is not None else 10 * 2 * n) * sweep
    total = burn + keep * sweep
    probs_joint = target / target.sum()
    starts = rng.choice(len(probs_joint), size=n_chains, p=probs_joint).astype(np.int64)
    chain_rngs = [np.random.default_rng(s)
                  for s in np.random.SeedSequence([cfg.seed, 2]).spawn(n_chains)]
    masks = np.empty((n_chains, total), dtype=np.int64)
    accept_u = np.empty((n_chains, total), dtype=np.float64)
    flip_lut = (np.int64(1) << allowed)
    for c in range(n_chains):
        r = chain_rngs[c]
        masks[c] = flip_lut[r.integers(0, allowed.size, size=total)]
        accept_u[c] = r.random(total)
    out = np.empty((n_chains, keep), dtype=np.int64)
    _kernels.metropolis_table_walk(table, starts, masks, accept_u, burn, sweep, out)

    joint_idx = out.reshape(-1)
    sig = joint_idx >> n
    eta = joint_idx & ((1 << n) - 1)
    pairs = np.stack([sig, eta], axis=1)
    v = np.abs(infidelity_local_values(
        SampleSet(bits=pairs, weights=np.full(len(pairs), 1.0), kind="probe"),
        state_new, state_old, u))
    w = (norm_est / v) / len(pairs)
    return SampleSet(bits=pairs, weights=w, kind="importance", seed=cfg.seed,
                     n_nominal=len(pairs))
