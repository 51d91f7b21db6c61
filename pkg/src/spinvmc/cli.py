"""Configuration-driven command line: run an experiment family from a JSON
config, write CSV/JSON-lines artifacts plus a manifest.

Exit codes: 0 success, 2 configuration error, 3 numerical failure
(non-convergence beyond the retry policy, or a failed identity check).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import estimators, operators, oracle, protocol, ptvmc, runio, sampling, tvmc
from .ansatz import (DiagonalExtension, FullAmplitudeAnsatz, MeasurementMask,
                     PeakedStateAnsatz, RbmAnsatz, apply_measurement)
from .errors import ConfigError, SpinVmcError
from .hilbert import Configuration, Lattice
from .sampling import SamplerConfig

EXPERIMENTS = ("tvmc", "ptvmc", "protocol", "estimator_lab")

_SCHEMA = {
    "experiment": None,
    "seed": None,
    "output_dir": None,
    "system": {"hamiltonian": None, "lattice": {"kind": None, "side": None,
                                                "periodic": None},
               "J": None, "h": None, "n_sites": None, "period": None},
    "ansatz": {"kind": None, "alpha": None, "scale": None, "initial": None,
               "epsilon": None, "peak_bits": None, "basis_bits": None,
               "diagonal_extension": None, "measurement_mask": None},
    "sampler": {"mode": None, "n_samples": None, "n_chains": None,
                "burn_in_sweeps": None, "sweep_length": None, "seed": None,
                "pilot_fraction": None},
    "tvmc": {"dt": None, "t_final": None, "integrator": None,
             "estimator_kind": None, "track_oracle": None,
             "regularization": {"diag_shift": None, "svd_cutoff": None,
                                "stall_tol": None}},
    "ptvmc": {"dt": None, "t_final": None, "block_size": None,
              "projection": {"optimizer": None, "learning_rate": None,
                             "max_iters": None, "target_infidelity": None,
                             "estimator": None, "c_policy": None,
                             "auto_threshold": None, "gradient_variant": None}},
    "protocol": {"lattice": {"kind": None, "side": None, "periodic": None},
                 "J": None, "h": None, "measurement_rate": None, "dt": None,
                 "t_final": None, "n_trajectories": None,
                 "partition_sizes": None, "rbm_alpha": None, "block_size": None,
                 "s2_samples": None,
                 "projection": {"optimizer": None, "learning_rate": None,
                                "max_iters": None, "target_infidelity": None,
                                "estimator": None, "c_policy": None,
                                "auto_threshold": None, "gradient_variant": None}},
    "estimator_lab": {"mode": None, "n_sites": None, "n_states": None,
                      "epsilons": None, "n_samples_reference": None},
}


def _check_schema(doc, schema, path=""):
    if not isinstance(doc, dict):
        raise ConfigError(f"expected a table at {path or 'top level'}")
    for key, val in doc.items():
        if key not in schema:
            raise ConfigError(f"unknown config field {path + key!r}")
        sub = schema[key]
        if isinstance(sub, dict) and isinstance(val, dict):
            _check_schema(val, sub, path + key + ".")


def load_config(path: str, overrides: list[str]) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError as e:
        raise ConfigError(f"config file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from e
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, _, raw = item.partition("=")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = doc
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"--set path {key!r} crosses a non-table value")
        node[parts[-1]] = value
    _check_schema(doc, _SCHEMA)
    if "experiment" not in doc:
        raise ConfigError("missing mandatory field 'experiment'")
    if doc["experiment"] not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {EXPERIMENTS}")
    if "seed" not in doc:
        raise ConfigError("missing mandatory field 'seed'")
    return doc


def _build_lattice(doc: dict) -> Lattice:
    return Lattice(doc.get("kind", "chain"), doc.get("side", 2),
                   doc.get("periodic", True))


def _build_hamiltonian(doc: dict):
    family = doc.get("hamiltonian", "tfi")
    if family == "tfi":
        lat = _build_lattice(doc.get("lattice", {}))
        return operators.build_tfi(lat, doc.get("J", 1.0), doc.get("h", 1.0))
    if family == "adiabatic":
        return operators.build_adiabatic(doc.get("n_sites", 6),
                                         doc.get("period", 8.0))
    if family == "single_spin_y":
        return operators.build_single_spin_y()
    raise ConfigError(f"unknown hamiltonian family {family!r}")


def _build_state(doc: dict, h, seed: int):
    n = h.n_sites
    kind = doc.get("kind", "rbm")
    if kind == "full_amplitude":
        initial = doc.get("initial", "plus")
        if initial == "plus":
            st = FullAmplitudeAnsatz.uniform(n)
        elif initial == "ghz":
            st = FullAmplitudeAnsatz.ghz(n)
        elif initial == "peaked":
            eps = doc.get("epsilon", 1e-3)
            peaked = PeakedStateAnsatz(eps, Configuration(doc.get("peak_bits", 0), n))
            psi, _, _ = peaked.scaled_amplitudes(np.arange(1 << n))
            st = FullAmplitudeAnsatz(psi, n)
        elif initial == "basis":
            st = FullAmplitudeAnsatz.basis_state(
                Configuration(doc.get("basis_bits", 0), n))
        else:
            raise ConfigError(f"unknown initial state {initial!r}")
    elif kind == "rbm":
        alpha = doc.get("alpha", 1)
        scale = doc.get("scale", 0.0)
        st = (RbmAnsatz.random(n, alpha, seed=seed, scale=scale) if scale
              else RbmAnsatz.zeros(n, alpha))
    elif kind == "peaked":
        st = PeakedStateAnsatz(doc.get("epsilon", 1e-3),
                               Configuration(doc.get("peak_bits", 0), n))
    else:
        raise ConfigError(f"unknown ansatz kind {kind!r}")
    if doc.get("diagonal_extension", False):
        edges = h.info.get("edges") or tuple(
            (i, (i + 1) % n) for i in range(n if n > 2 else n - 1))
        st = DiagonalExtension.wrap(st, edges=tuple(edges))
    if doc.get("measurement_mask", False):
        st = MeasurementMask.wrap(st)
    return st


def _sampler_config(doc: dict, seed: int) -> SamplerConfig:
    doc = dict(doc or {})
    doc.setdefault("seed", seed)
    return SamplerConfig(**doc)


def _projection_config(doc: dict, sampler: SamplerConfig) -> ptvmc.ProjectionConfig:
    doc = dict(doc or {})
    doc["sampler"] = sampler
    return ptvmc.ProjectionConfig(**doc)


def _run_tvmc(cfg: dict, outdir: str) -> list[str]:
    h = _build_hamiltonian(cfg.get("system", {}))
    state = _build_state(cfg.get("ansatz", {}), h, cfg["seed"])
    sampler = _sampler_config(cfg.get("sampler", {}), cfg["seed"])
    tdoc = dict(cfg.get("tvmc", {}))
    reg = tvmc.Regularization(**tdoc.pop("regularization", {}))
    run_cfg = tvmc.TvmcConfig(sampler=sampler, regularization=reg, **tdoc)
    record = tvmc.run(state, h, run_cfg, seed=cfg["seed"])
    path = os.path.join(outdir, "trajectory.csv")
    runio.write_csv(path, record.csv_header(), record.csv_rows())
    return [path]


def _run_ptvmc(cfg: dict, outdir: str) -> list[str]:
    h = _build_hamiltonian(cfg.get("system", {}))
    state = _build_state(cfg.get("ansatz", {}), h, cfg["seed"])
    sampler = _sampler_config(cfg.get("sampler", {}), cfg["seed"])
    pdoc = dict(cfg.get("ptvmc", {}))
    proj = _projection_config(pdoc.pop("projection", {}), sampler)
    record = ptvmc.run(state, h, pdoc.get("dt", 1e-2), pdoc.get("t_final", 1.0),
                       proj, seed=cfg["seed"],
                       block_size=pdoc.get("block_size", 2))
    if any(record.stall_flags):
        raise SpinVmcError("projection failed to converge beyond the retry policy")
    path = os.path.join(outdir, "trajectory.csv")
    runio.write_csv(path, record.csv_header(), record.csv_rows())
    return [path]


def _run_protocol(cfg: dict, outdir: str, threads: int) -> list[str]:
    pdoc = dict(cfg.get("protocol", {}))
    lat = _build_lattice(pdoc.pop("lattice", {}))
    sizes = pdoc.pop("partition_sizes", None)
    kwargs = {}
    if "projection" in pdoc or "sampler" in cfg:
        sampler = _sampler_config(cfg.get("sampler", {}), cfg["seed"])
        kwargs["ptvmc"] = _projection_config(pdoc.pop("projection", {}), sampler)
    else:
        pdoc.pop("projection", None)
    pcfg = protocol.ProtocolConfig(
        lattice=lat, seed=cfg["seed"],
        partition_sizes=tuple(sizes) if sizes else None, **pdoc, **kwargs)
    idxs = list(range(pcfg.n_trajectories))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(
                lambda i: protocol.run_trajectory(pcfg, i), idxs))
    else:
        records = [protocol.run_trajectory(pcfg, i) for i in idxs]
    outputs = []
    for rec in records:
        p = os.path.join(outdir, f"trajectory_{rec.trajectory_index}.csv")
        runio.write_csv(p, ["t", "partition_size", "boundary_length", "S2", "S2_err"],
                        rec.csv_rows())
        outputs.append(p)
        p = os.path.join(outdir, f"measurements_{rec.trajectory_index}.jsonl")
        runio.write_jsonl(p, rec.measurement_log)
        outputs.append(p)
    times, sizes_, bounds, mean, sem, n_used, n_excl = protocol.average(records)
    rows = []
    for i, t in enumerate(times):
        for j, size in enumerate(sizes_):
            rows.append([t, size, bounds[j], mean[i][j], sem[i][j]])
    p = os.path.join(outdir, "averaged.csv")
    runio.write_csv(p, ["t", "partition_size", "boundary_length", "S2_mean",
                        "S2_err"], rows)
    outputs.append(p)
    p = os.path.join(outdir, "steady_state.csv")
    runio.write_csv(p, ["partition_size", "boundary_length", "S2_steady"],
                    protocol.steady_state_summary(times, sizes_, bounds, mean))
    outputs.append(p)
    extra = {"trajectories_used": n_used, "trajectories_excluded": n_excl}
    return outputs, extra


def validate_estimators(cfg: dict, perturb: bool = False):
    """Run the full-sum identity suite; returns (ok, report rows).

    With ``perturb`` set, a deliberate defect is injected (the bias term is
    dropped from the decomposition identity) so the harness must fail.
    """
    lab = cfg.get("estimator_lab", {})
    n = int(lab.get("n_sites", 4))
    n_states = int(lab.get("n_states", 10))
    seed = cfg["seed"]
    rng = np.random.default_rng(seed)
    lat = Lattice("chain", n, True)
    h = operators.build_tfi(lat, 1.0, 1.0)
    rows = []
    ok = True

    def _rand_full(zeros=0):
        v = rng.normal(size=1 << n) + 1j * rng.normal(size=1 << n)
        if zeros:
            v[rng.choice(1 << n, size=zeros, replace=False)] = 0.0
        return FullAmplitudeAnsatz(v, n)

    # bias decomposition
    worst = 0.0
    for k in range(n_states):
        st = _rand_full(zeros=(k % 3))
        if k % 2:
            st = apply_measurement(MeasurementMask.wrap(
                DiagonalExtension.wrap(st, edges=tuple(h.info["edges"]))),
                site=0, outcome="down")
        f = estimators.forces_exact(st, h).values
        bf = estimators.bias_forces(st, h)
        if perturb:
            bf = 0.0 * bf
        fs = sampling.full_sum_sample_set(st)
        fmc = estimators.forces_mc(fs, st, h).values
        s = estimators.qgt_exact(st).values
        bs = estimators.bias_qgt(st)
        smc = estimators.qgt_mc(fs, st).values
        resid = max(np.abs(f - (bf + fmc)).max(), np.abs(s - (bs + smc)).max())
        worst = max(worst, resid)
    passed = worst <= 1e-12
    ok &= passed
    rows.append(["bias_decomposition", worst, 1e-12, passed])

    # variance law on 4-spin pairs
    worst = 0.0
    lat4 = Lattice("chain", 4, True)
    for _ in range(n_states):
        d = 1 << 4
        a = FullAmplitudeAnsatz(rng.normal(size=d) + 1j * rng.normal(size=d), 4)
        b = FullAmplitudeAnsatz(rng.normal(size=d) + 1j * rng.normal(size=d), 4)
        th = rng.uniform(0.1, 0.6)
        u = operators.LocalOperator(
            (0, 1), np.cos(th) * np.eye(4)
            - 1j * np.sin(th) * np.kron(operators.PAULI_X, operators.PAULI_X))
        i_exact = estimators.infidelity_exact(a, b, u)
        var = estimators.infidelity_variance_complex(a, b, u)
        worst = max(worst, abs(var - (2 * i_exact - i_exact ** 2)))
    passed = worst <= 1e-10
    ok &= passed
    rows.append(["variance_law", worst, 1e-10, passed])

    # CV mean invariance
    worst = 0.0
    a = FullAmplitudeAnsatz(rng.normal(size=16) + 1j * rng.normal(size=16), 4)
    b = FullAmplitudeAnsatz(rng.normal(size=16) + 1j * rng.normal(size=16), 4)
    u = operators.sigma_x(2)
    i_exact = estimators.infidelity_exact(a, b, u)
    for c in (-1.0, -0.5, 0.0, 0.5, 1.0):
        rep = estimators.infidelity_report(None, a, b, u, "cv", c=c)
        worst = max(worst, abs(rep.mean - i_exact))
    passed = worst <= 1e-12
    ok &= passed
    rows.append(["cv_mean_invariance", worst, 1e-12, passed])

    # c* limit along a homotopy
    target = oracle.apply_unitary_dense(oracle.densify(b), u)
    delta = rng.normal(size=16) + 1j * rng.normal(size=16)
    devs = []
    for s in (1e-1, 1e-2, 1e-3):
        st = FullAmplitudeAnsatz(target.amplitudes + s * delta, 4)
        devs.append(abs(estimators.optimal_cv_coefficient(st, b, u) + 0.5))
    passed = devs[-1] <= 0.05 and all(x >= y for x, y in zip(devs, devs[1:]))
    ok &= passed
    rows.append(["cstar_limit", devs[-1], 0.05, passed])
    return ok, rows


def _run_estimator_lab(cfg: dict, outdir: str, perturb: bool):
    lab = cfg.get("estimator_lab", {})
    mode = lab.get("mode", "identities")
    if mode == "identities":
        ok, rows = validate_estimators(cfg, perturb=perturb)
        path = os.path.join(outdir, "identities.csv")
        runio.write_csv(path, ["check", "residual", "tolerance", "passed"], rows)
        for name, resid, tol, passed in rows:
            print(f"[{'PASS' if passed else 'FAIL'}] {name}: residual {resid:.3e} "
                  f"(tolerance {tol:.0e})")
        if not ok:
            raise SpinVmcError("estimator identity suite failed")
        return [path]
    if mode == "snr_scaling":
        n = int(lab.get("n_sites", 6))
        eps_list = lab.get("epsilons") or list(np.logspace(-6, -2, 6))
        ns_ref = int(lab.get("n_samples_reference", 10000))
        lat = Lattice("chain", n, True)
        h = operators.build_tfi(lat, 1.0, 1.0)
        rows = []
        for eps in eps_list:
            st = PeakedStateAnsatz(float(eps), Configuration(0, n))
            fs = sampling.full_sum_sample_set(st)
            fmc = estimators.forces_mc(fs, st, h)
            smc = estimators.qgt_mc(fs, st)
            fun = estimators.forces_unbiased(fs, st, h)
            rows.append([eps,
                         estimators.snr_value(fmc.values[0], fmc.variance[0], ns_ref),
                         estimators.snr_value(smc.values[0, 0],
                                              smc.variance[0, 0], ns_ref),
                         estimators.snr_value(fun.values[0], fun.variance[0], ns_ref)])
        path = os.path.join(outdir, "snr_scaling.csv")
        runio.write_csv(path, ["epsilon", "snr_F", "snr_S", "snr_Ftilde"], rows)
        return [path]
    raise ConfigError(f"unknown estimator_lab mode {mode!r}")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="spinvmc",
        description="Variational spin dynamics runs driven by a JSON config.")
    parser.add_argument("--config", required=True, help="path to the run config")
    parser.add_argument("--set", action="append", default=[], metavar="K=V",
                        help="override a config field (dotted path, JSON value)")
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--output", default=None, help="output directory")
    parser.add_argument("--perturb", action="store_true",
                        help="inject a defect into the identity suite (self-test)")
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, args.set)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    outdir = args.output or cfg.get("output_dir", ".")
    os.makedirs(outdir, exist_ok=True)
    extra = {}
    try:
        kind = cfg["experiment"]
        if kind == "tvmc":
            outputs = _run_tvmc(cfg, outdir)
        elif kind == "ptvmc":
            outputs = _run_ptvmc(cfg, outdir)
        elif kind == "protocol":
            outputs, extra = _run_protocol(cfg, outdir, args.threads)
        else:
            outputs = _run_estimator_lab(cfg, outdir, args.perturb)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except SpinVmcError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3
    manifest = runio.write_manifest(outdir, cfg, cfg["seed"], outputs, extra)
    print(f"wrote {len(outputs)} artifact(s) + {os.path.basename(manifest)} "
          f"to {outdir}")
    return 0


def entry():
    raise SystemExit(main())


if __name__ == "__main__":
    entry()
