"""Two-time correlation G(t, t+tau) = <a_-k^+(t) a_-k(t+tau)> of the reflected mode.

Three routes are provided:

* ``two_time_correlation``: MCWF quantum-regression estimator.  At time t
  the trajectory state psi spawns four auxiliary kets
  chi_e = (1 + e a_-k) psi, e in {1, -1, i, -i}; since
  |psi><a psi| = sum_e (e/4) |chi_e><chi_e|, evolving the normalized
  chi_e for tau and recombining e/4 * |chi_e|^2 * <a_-k> gives G.
* ``qrt_oracle``: quantum regression on the Lindblad master equation.
* ``ensemble_limit_correlation``: the infinite-ensemble value
  sum_s p_s conj(amk_s(t)) amk_s(t+tau), exact because each sector's field
  stays coherent under linear drive and loss.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .branch import amplitude_table
from .dense import NormalModeBasis, evolve_block, field_guard, sector_field_density
from .ensemble import chunk_indices, evolve, make_engine, map_chunks, stream_block, steps_for_times
from .errors import NonPositiveDiagonal
from .model import SectorArrays, sector_list

AUX_PHASES = (1.0, -1.0, 1j, -1j)


@dataclass
class CorrelationGrid:
    """G sampled on base times ``t`` (rows) and lags ``tau`` (columns).

    Entries with t + tau beyond the simulated window are NaN.
    """

    t: np.ndarray
    tau: np.ndarray
    G: np.ndarray
    stderr: np.ndarray
    n_traj_t: int = 0
    n_traj_tau: int = 0

    def value(self, t, tau):
        i = int(np.argmin(np.abs(self.t - t)))
        j = int(np.argmin(np.abs(self.tau - tau)))
        return self.G[i, j]

    def rows(self):
        """(t, tau, G, stderr) for every covered grid point, row-major."""
        for i, t in enumerate(self.t):
            for j, tau in enumerate(self.tau):
                if np.isfinite(self.G[i, j].real):
                    yield float(t), float(tau), complex(self.G[i, j]), float(self.stderr[i, j])


def _correlation_chunk(task):
    kind, state, params, seed, idx, base_steps, tau_steps, n_tau = task
    engine = make_engine(kind, state, params)
    n_end = params.n_steps
    nb = len(idx)
    out = np.full((nb, n_tau, len(base_steps), len(tau_steps)), np.nan + 0j)
    top = int(max(base_steps))
    base_u = stream_block(seed, [(i, 0) for i in idx], max(top, 1))
    res = evolve(engine, engine.initial(nb), 0, top, base_u, snapshot_steps=base_steps)
    rep = np.repeat(np.arange(nb), n_tau)
    for kb, k in enumerate(base_steps):
        ok = [jt for jt, d in enumerate(tau_steps) if k + d <= n_end]
        if not ok:
            continue
        stop = int(k + tau_steps[ok[-1]])
        st = engine.take(res.snapshots[k], rep)
        chis = [engine.aux(st, e, k) for e in AUX_PHASES]
        norms = [engine.norm2(c, k) for c in chis]
        batch = engine.concat([engine.scale(c, 1.0 / np.sqrt(nm)) for c, nm in zip(chis, norms)])
        keys = [(i, 1 + j, 1 + kb) for i in idx for j in range(n_tau)]
        u = stream_block(seed, keys, max(stop - k, 1))
        u = np.tile(u, (len(AUX_PHASES), 1))
        obs_steps = [int(k + tau_steps[jt]) for jt in ok]
        aux_res = evolve(engine, batch, k, stop, u, observe=engine.a_mk, observe_steps=obs_steps)
        m = nb * n_tau
        for jt, step in zip(ok, obs_steps):
            a = aux_res.observed[step]
            g = sum((e / 4.0) * norms[q] * a[q * m:(q + 1) * m] for q, e in enumerate(AUX_PHASES))
            out[:, :, kb, jt] = g.reshape(nb, n_tau)
    return out


def two_time_correlation(state, params, t_grid, tau_grid, n_traj_t, n_traj_tau, seed,
                         engine="branch", workers=1):
    """MCWF estimate of G(t, t+tau) averaged over n_traj_t x n_traj_tau trajectories."""
    tau_grid = np.asarray(tau_grid, dtype=float)
    if np.any(tau_grid < 0):
        raise ValueError("tau must be non-negative")
    base_steps = [int(s) for s in steps_for_times(t_grid, params.dt, "t")]
    tau_steps = [int(s) for s in steps_for_times(tau_grid, params.dt, "tau")]
    if max(base_steps) > params.n_steps:
        raise ValueError("base times exceed t_max")
    chunks = chunk_indices(n_traj_t)
    tasks = [(engine, state, params, seed, idx, base_steps, tau_steps, n_traj_tau) for idx in chunks]
    samples = np.concatenate(map_chunks(_correlation_chunk, tasks, workers), axis=0)
    per_t = samples.mean(axis=1)  # average over the tau-level first
    G = per_t.mean(axis=0)
    if n_traj_t > 1:
        spread = per_t
        n = n_traj_t
    else:
        spread = samples[0]
        n = n_traj_tau
    if n > 1:
        var = spread.real.var(axis=0, ddof=1) + spread.imag.var(axis=0, ddof=1)
        stderr = np.sqrt(var / n)
    else:
        stderr = np.where(np.isnan(G.real), np.nan, 0.0)
    grid = CorrelationGrid(np.asarray(base_steps) * params.dt, np.asarray(tau_steps) * params.dt,
                           G, stderr, n_traj_t, n_traj_tau)
    if 0 in tau_steps:
        j0 = tau_steps.index(0)
        d = grid.G[:, j0].real
        se = grid.stderr[:, j0]
        if np.any(d < -3.0 * np.maximum(se, 1e-12)):
            warnings.warn("Re G(t, t) is significantly negative", NonPositiveDiagonal, stacklevel=2)
    return grid


def ensemble_limit_correlation(state, params, t_grid, tau_grid):
    """Infinite-ensemble G(t, t+tau) from the per-sector coherent amplitudes."""
    sa = SectorArrays.from_sectors(sector_list(state, params))
    base_steps = steps_for_times(t_grid, params.dt, "t")
    tau_steps = steps_for_times(tau_grid, params.dt, "tau")
    n_end = params.n_steps
    _, amk, _ = amplitude_table(sa, params, n_end)
    p = np.abs(sa.weight) ** 2
    G = np.full((base_steps.size, tau_steps.size), np.nan + 0j)
    for i, k in enumerate(base_steps):
        ok = k + tau_steps <= n_end
        G[i, ok] = (p * np.conj(amk[k])) @ amk[k + tau_steps[ok]].T
    return CorrelationGrid(base_steps * params.dt, tau_steps * params.dt, G,
                           np.where(np.isnan(G.real), np.nan, 0.0))


def ensemble_limit_intensity(state, params, t_grid):
    """Infinite-ensemble <n_-k>(t)."""
    sa = SectorArrays.from_sectors(sector_list(state, params))
    steps = steps_for_times(t_grid, params.dt, "t")
    _, amk, _ = amplitude_table(sa, params, int(steps.max()))
    return (np.abs(amk[steps]) ** 2) @ (np.abs(sa.weight) ** 2)


def qrt_oracle_grid(state, params, t_grid, tau_grid, weight_floor=0.0, rtol=1e-7):
    """Quantum-regression G(t, t+tau) = Tr[a_-k V(tau){rho(t) a_-k^+}] on a grid.

    Sector-diagonal blocks evolve independently and are the only ones that
    contribute, so the oracle loops over sectors.  Sectors whose probability
    does not exceed ``weight_floor`` are skipped.
    """
    t_grid = np.atleast_1d(np.asarray(t_grid, dtype=float))
    tau_grid = np.atleast_1d(np.asarray(tau_grid, dtype=float))
    t_end = params.t_max
    G = np.full((t_grid.size, tau_grid.size), np.nan + 0j)
    covered = t_grid[:, None] + tau_grid[None, :] <= t_end + 1e-9
    G[covered] = 0.0
    order = np.argsort(t_grid)
    for sec in sector_list(state, params):
        p = abs(sec.weight) ** 2
        if p <= weight_floor:
            continue
        basis = NormalModeBasis(sec, params.cutoff)
        amk = basis.amk
        rho_t = evolve_block(sector_field_density(basis, params), params, basis, basis, t_grid[order],
                             rtol=rtol, atol=rtol * 1e-3)
        field_guard(rho_t, basis)
        for pos, i in enumerate(order):
            taus = tau_grid[covered[i]]
            if taus.size == 0:
                continue
            x0 = (amk @ rho_t[pos].conj().T).conj().T  # rho(t) a^+
            if not np.any(np.abs(x0) > 1e-300):
                continue
            t0 = float(t_grid[i])
            xs = evolve_block(x0, params, basis, basis, t0 + taus, t0=t0, rtol=rtol, atol=rtol * 1e-3)
            G[i, covered[i]] += p * np.array([(amk @ x).trace() for x in xs])
    return CorrelationGrid(t_grid, tau_grid, G, np.where(covered, 0.0, np.nan))


def qrt_oracle(state, params, t, tau_grid, weight_floor=0.0, rtol=1e-7):
    """Oracle G(t, t+tau) for a single base time."""
    return qrt_oracle_grid(state, params, [t], tau_grid, weight_floor, rtol).G[0]
