"""Experiment orchestration and CSV / manifest output."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import time
from pathlib import Path

import numpy as np

from . import __version__
from .branch import branch_to_dense
from .config import params_dict
from .correlation import qrt_oracle_grid, two_time_correlation
from .dense import DensityMatrix
from .entanglement import Bipartition, log_negativity, pure_log_negativity
from .ensemble import chunk_indices, evolve, make_engine, map_chunks, reflected_intensity, stream_block
from .errors import TooFewPeaks, ValidationError
from .model import CoherentProduct, Mott, NumberConserving, sector_list
from .spectrum import envelope_fwhm, fit_line, number_uncertainty, physical_spectrum, spectral_features

FWHM_SCAN_N = (1, 2, 3, 4, 5, 6, 7, 8, 10, 12)
LATTICE_STEP = 0.05  # target g*h for correlation lattices and negativity samples
INTENSITY_STEP = 0.01
ORACLE_WEIGHT_FLOOR = 1e-4


def fmt(x):
    """Floats with 17 significant digits, which round-trip exactly."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.17g}"


def csv_bytes(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) for v in r])
    return buf.getvalue().encode()


def lattice_stride(n_steps, dt, target=LATTICE_STEP, omega_max=None):
    """Steps per lattice interval: the divisor of n_steps whose spacing is closest to ``target``.

    A divisor keeps the last lattice point on t_max.  Without one in
    [target/2, 2 target] the nearest whole stride is used and the lattice
    stops short of t_max.
    """
    best = None
    for m in range(1, n_steps + 1):
        if n_steps % m == 0 and 0.5 * target <= m * dt <= 2.0 * target:
            if best is None or abs(m * dt - target) < abs(best * dt - target):
                best = m
    if best is None:
        best = max(1, int(round(target / dt)))
    if omega_max is not None and math.pi / (best * dt) < omega_max:
        raise ValidationError("omega_max", f"lattice spacing {best * dt:.4g} cannot resolve omega up to {omega_max}")
    return best


def mean_total_atoms(state):
    if isinstance(state, Mott):
        return state.n0 + state.n1
    if isinstance(state, NumberConserving):
        return state.N
    if isinstance(state, CoherentProduct):
        return abs(state.a0) ** 2 + abs(state.a1) ** 2
    raise TypeError(state)


def omega_grid(cfg, state=None):
    state = cfg.atomic_state if state is None else state
    top = cfg.omega_max if cfg.omega_max is not None else 1.5 * max(mean_total_atoms(state), 1.0)
    return np.linspace(0.0, top, cfg.omega_points)


# --- experiments -----------------------------------------------------------------


def _engine_kind(cfg, allowed_both=False):
    if cfg.engine == "both" and not allowed_both:
        raise ValidationError("engine", f"'both' is not supported for {cfg.experiment}")
    return "branch" if cfg.engine == "both" else cfg.engine


def run_intensity(cfg, workers):
    p = cfg.params
    every = max(1, int(round(INTENSITY_STEP / p.dt)))
    res = reflected_intensity(_engine_kind(cfg, True), cfg.atomic_state, p, cfg.n_traj, cfg.seed,
                              record_every=every, workers=workers)
    rows = zip(res.t_g, res.mean_n_mk, res.stderr, res.mean_n_k)
    files = {"intensity.csv": csv_bytes(["t_g", "mean_n_mk", "stderr", "mean_n_k"], rows)}
    summary = {"n_traj": cfg.n_traj, "records": len(res.t_g)}
    if cfg.engine == "both":
        other = reflected_intensity("dense", cfg.atomic_state, p, cfg.n_traj, cfg.seed,
                                    record_every=every, workers=workers)
        summary["max_engine_deviation"] = float(np.max(np.abs(other.mean_n_mk - res.mean_n_mk)))
    return files, summary


def _lattice_correlation(cfg, workers, kind, state=None):
    p = cfg.params
    state = cfg.atomic_state if state is None else state
    stride = lattice_stride(p.n_steps, p.dt, omega_max=None)
    n = p.n_steps // stride
    grid = np.arange(n + 1) * stride * p.dt
    return two_time_correlation(state, p, grid, grid, cfg.n_traj, cfg.n_traj_tau, cfg.seed,
                                engine=kind, workers=workers)


def _correlation_rows(G):
    return [(t, tau, g.real, g.imag, se) for t, tau, g, se in G.rows()]


CORR_HEADER = ["t_g", "tau_g", "G_re", "G_im", "stderr"]


def run_correlate(cfg, workers):
    G = _lattice_correlation(cfg, workers, _engine_kind(cfg, True))
    files = {"correlation.csv": csv_bytes(CORR_HEADER, _correlation_rows(G))}
    summary = {"n_traj": cfg.n_traj, "n_traj_tau": cfg.n_traj_tau, "lattice_step": float(G.t[1] - G.t[0])}
    if cfg.engine == "both":
        other = _lattice_correlation(cfg, workers, "dense")
        summary["max_engine_deviation"] = float(np.nanmax(np.abs(other.G - G.G)))
    return files, summary


def _spectrum_of(cfg, G, state):
    om = omega_grid(cfg, state)
    lattice_step = float(G.t[1] - G.t[0])
    if math.pi / lattice_step < om[-1]:
        raise ValidationError("omega_max", f"lattice spacing {lattice_step:.4g} cannot resolve omega up to {om[-1]}")
    return physical_spectrum(G, om, cfg.Gamma)


def run_spectrum(cfg, workers):
    G = _lattice_correlation(cfg, workers, _engine_kind(cfg))
    spec = _spectrum_of(cfg, G, cfg.atomic_state)
    peaks, heights = spectral_features(spec)
    summary = {"t_g": spec.t, "Gamma": spec.Gamma, "features_omega_over_g": [float(x) for x in peaks],
               "feature_heights": [float(x) for x in heights]}
    try:
        env = envelope_fwhm(spec.omega, spec.S0.real)
        summary["envelope_fwhm"] = env.width
    except TooFewPeaks as exc:
        summary["envelope_fwhm"] = None
        summary["envelope_note"] = str(exc)
    files = {
        "correlation.csv": csv_bytes(CORR_HEADER, _correlation_rows(G)),
        "spectrum.csv": csv_bytes(["omega_over_g", "S0_re", "S0_im"], zip(spec.omega, spec.S0.real, spec.S0.imag)),
    }
    return files, summary


def run_fwhm_scan(cfg, workers):
    kind = _engine_kind(cfg)
    rows, notes = [], {}
    for N in FWHM_SCAN_N:
        st = NumberConserving(N)
        G = _lattice_correlation(cfg, workers, kind, st)
        spec = _spectrum_of(cfg, G, st)
        try:
            w = envelope_fwhm(spec.omega, spec.S0.real).width
        except TooFewPeaks as exc:
            w = float("nan")
            notes[str(N)] = str(exc)
        rows.append((N, number_uncertainty(N), w))
    good = [(s, w) for _, s, w in rows if np.isfinite(w)]
    summary = {"failed": notes}
    if len({s for s, _ in good}) >= 2:
        slope, intercept, r2 = fit_line(good)
        summary.update(slope=slope, intercept=intercept, r_squared=r2)
    return {"fwhm_scan.csv": csv_bytes(["N", "sigma", "fwhm"], rows)}, summary


def negativity_series(state, params, n_traj=1, seed=0, engine="branch", workers=1):
    """(t_g, E_N) at lattice samples spaced about 0.05/g.

    A single trajectory of a closed system (gamma = 0) is pure and uses the
    branch Gram matrix; otherwise the snapshots are averaged into a density
    matrix over (sectors) x (cutoff+1)^2.
    """
    stride = lattice_stride(params.n_steps, params.dt)
    steps = list(range(0, params.n_steps + 1, stride))
    t_g = np.array(steps) * params.dt
    pure = n_traj == 1 and params.gamma == 0.0 and engine == "branch"
    tasks = [(engine, state, params, seed, idx, steps) for idx in chunk_indices(n_traj)]
    outs = map_chunks(_snapshot_chunk, tasks, workers)
    eng = make_engine(engine, state, params)
    values = []
    if pure:
        snaps = outs[0]
        for k in steps:
            values.append(pure_log_negativity(eng.branch_state(snaps[k], 0, k)))
        return t_g, np.array(values)
    n_sec = len(eng.sectors)
    bp = Bipartition.for_cutoff(n_sec, params.cutoff)
    for k in steps:
        if engine == "branch":
            kets = np.concatenate([eng.to_kets(o[k], k) for o in outs], axis=0)
        else:
            kets = np.concatenate([o[k].reshape(o[k].shape[0], -1) for o in outs], axis=0)
        kets = kets / np.linalg.norm(kets, axis=1, keepdims=True)
        rho = kets.T @ kets.conj() / kets.shape[0]
        values.append(log_negativity(DensityMatrix(0.5 * (rho + rho.conj().T), bp.d_atoms, bp.d_field), bp))
    return t_g, np.array(values)


def _snapshot_chunk(task):
    kind, state, params, seed, idx, steps = task
    engine = make_engine(kind, state, params)
    n = params.n_steps
    uniforms = stream_block(seed, [(i, 0) for i in idx], n)
    res = evolve(engine, engine.initial(len(idx)), 0, n, uniforms, snapshot_steps=steps)
    snaps = dict(res.snapshots)
    snaps[n] = res.state
    return snaps


def run_negativity(cfg, workers):
    t_g, en = negativity_series(cfg.atomic_state, cfg.params, cfg.n_traj, cfg.seed, _engine_kind(cfg), workers)
    files = {"negativity.csv": csv_bytes(["t_g", "E_N"], zip(t_g, en))}
    return files, {"max_E_N": float(en.max()), "samples": len(t_g)}


def oracle_grid(params):
    """t in {0, T/8, ..., 7T/8}, tau in {0, T/16, ..., T}, snapped to the step grid."""
    n = params.n_steps
    t = np.rint(np.arange(8) * n / 8).astype(int) * params.dt
    tau = np.rint(np.arange(17) * n / 16).astype(int) * params.dt
    return t, tau


def run_oracle_check(cfg, workers):
    p = cfg.params
    t, tau = oracle_grid(p)
    G = two_time_correlation(cfg.atomic_state, p, t, tau, cfg.n_traj, cfg.n_traj_tau, cfg.seed,
                             engine=_engine_kind(cfg), workers=workers)
    ref = qrt_oracle_grid(cfg.atomic_state, p, G.t, G.tau, weight_floor=ORACLE_WEIGHT_FLOOR).G
    ok = np.isfinite(G.G.real) & np.isfinite(ref.real)
    dev = np.abs(G.G - ref)
    bound = 3.0 * G.stderr + 1e-6
    rows = []
    for i, ti in enumerate(G.t):
        for j, tj in enumerate(G.tau):
            if ok[i, j]:
                rows.append((ti, tj, G.G[i, j].real, G.G[i, j].imag, G.stderr[i, j],
                             ref[i, j].real, ref[i, j].imag))
    header = CORR_HEADER + ["oracle_re", "oracle_im"]
    summary = {"max_deviation": float(dev[ok].max()), "max_ratio": float((dev[ok] / bound[ok]).max()),
               "pass_3sigma": bool(np.all(dev[ok] <= bound[ok])), "oracle_weight_floor": ORACLE_WEIGHT_FLOOR}
    return {"oracle_check.csv": csv_bytes(header, rows)}, summary


EXPERIMENT_RUNNERS = {
    "intensity": run_intensity,
    "correlate": run_correlate,
    "spectrum": run_spectrum,
    "fwhm-scan": run_fwhm_scan,
    "negativity": run_negativity,
    "oracle-check": run_oracle_check,
}


def run_experiment(cfg, workers=1, output_dir=None):
    """Run one configured experiment and write its CSVs plus manifest.json."""
    out = Path(output_dir if output_dir is not None else cfg.output_dir)
    t0 = time.perf_counter()
    files, summary = EXPERIMENT_RUNNERS[cfg.experiment](cfg, workers)
    wall = time.perf_counter() - t0
    out.mkdir(parents=True, exist_ok=True)
    checksums = {}
    for name, data in files.items():
        (out / name).write_bytes(data)
        checksums[name] = hashlib.sha256(data).hexdigest()
    manifest = {
        "config": cfg.source,
        "resolved_params": params_dict(cfg.params),
        "sectors": len(sector_list(cfg.atomic_state, cfg.params)),
        "code_version": __version__,
        "workers": workers,
        "wall_time_s": wall,
        "files": checksums,
        "summary": summary,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, default=str) + "\n")
    return manifest
