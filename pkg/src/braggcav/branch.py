"""Coherent-branch engine.

Within a sector the field stays coherent, so a pure state is

    |psi> = sum_s mu_s exp(ak_s a_k^+ + amk_s a_-k^+) |0, 0> |n0_s, n1_s>

The amplitudes (ak, amk) obey a closed linear ODE that knows nothing about
``mu`` or the jump record, so they are integrated once per run and shared
by every trajectory.  A trajectory only carries the prefactors ``mu``; a
jump multiplies them by the jumped mode's amplitude.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .dense import coherent_vector
from .errors import StepTooLarge, TruncationTooSmall
from .model import SectorArrays, coherent_tail_mass, sector_list

MAX_JUMP_PROB = 0.1


@dataclass
class BranchState:
    """Single pure state in holomorphic form; one entry per sector."""

    mu: np.ndarray
    ak: np.ndarray
    amk: np.ndarray
    sectors: list = field(default_factory=list, repr=False)

    def branch_norm2(self):
        return np.abs(self.mu) ** 2 * np.exp(np.abs(self.ak) ** 2 + np.abs(self.amk) ** 2)

    def probabilities(self):
        w = self.branch_norm2()
        return w / w.sum()

    def mean_n_mk(self):
        return float(np.sum(self.probabilities() * np.abs(self.amk) ** 2))

    def normalized(self):
        return BranchState(self.mu / math.sqrt(self.branch_norm2().sum()), self.ak, self.amk, self.sectors)


def branch_ode_rhs(branch, params, t):
    """Time derivatives (dmu, dak, damk) of the no-jump flow."""
    sa = SectorArrays.from_sectors(branch.sectors)
    return _rhs(branch.mu, branch.ak, branch.amk, sa.coupling, sa.drive_freq,
                params.eta_abs, params.gamma_abs, t)


def _rhs(mu, ak, amk, c, omega, eta, gamma, t):
    drive = eta * np.exp(1j * omega * t)
    dak = -1j * np.conj(c) * amk - 1j * drive - gamma * ak
    damk = -1j * c * ak - gamma * amk
    dmu = -1j * np.conj(drive) * ak * mu
    return dmu, dak, damk


@njit(cache=True)
def _table_kernel(ak, amk, mult, c, omega, eta, gamma, h):
    # scalar RK4 of the rhs above, stepping mu from 1 to get the multiplier
    for s in range(c.size):
        cs, cc, om = c[s], np.conj(c[s]), omega[s]
        for n in range(mult.shape[0]):
            t = n * h
            a, b = ak[n, s], amk[n, s]
            d1 = eta * cmath.exp(1j * om * t)
            d2 = eta * cmath.exp(1j * om * (t + 0.5 * h))
            d4 = eta * cmath.exp(1j * om * (t + h))
            ka1 = -1j * cc * b - 1j * d1 - gamma * a
            kb1 = -1j * cs * a - gamma * b
            km1 = -1j * np.conj(d1) * a
            a2, b2, m2 = a + 0.5 * h * ka1, b + 0.5 * h * kb1, 1.0 + 0.5 * h * km1
            ka2 = -1j * cc * b2 - 1j * d2 - gamma * a2
            kb2 = -1j * cs * a2 - gamma * b2
            km2 = -1j * np.conj(d2) * a2 * m2
            a3, b3, m3 = a + 0.5 * h * ka2, b + 0.5 * h * kb2, 1.0 + 0.5 * h * km2
            ka3 = -1j * cc * b3 - 1j * d2 - gamma * a3
            kb3 = -1j * cs * a3 - gamma * b3
            km3 = -1j * np.conj(d2) * a3 * m3
            a4, b4, m4 = a + h * ka3, b + h * kb3, 1.0 + h * km3
            ka4 = -1j * cc * b4 - 1j * d4 - gamma * a4
            kb4 = -1j * cs * a4 - gamma * b4
            km4 = -1j * np.conj(d4) * a4 * m4
            mult[n, s] = 1.0 + (h / 6.0) * (km1 + 2.0 * km2 + 2.0 * km3 + km4)
            ak[n + 1, s] = a + (h / 6.0) * (ka1 + 2.0 * ka2 + 2.0 * ka3 + ka4)
            amk[n + 1, s] = b + (h / 6.0) * (kb1 + 2.0 * kb2 + 2.0 * kb3 + kb4)


def amplitude_table(sa, params, n_steps, alpha0=None):
    """RK4 amplitudes at every step plus the per-step prefactor multipliers.

    Because dmu/dt is linear in mu, one RK4 step maps mu -> R * mu with R
    obtained by stepping from mu = 1.
    """
    alpha0 = params.alpha0 if alpha0 is None else alpha0
    s = len(sa)
    ak = np.empty((n_steps + 1, s), dtype=complex)
    amk = np.empty((n_steps + 1, s), dtype=complex)
    mult = np.empty((n_steps, s), dtype=complex)
    ak[0] = alpha0
    amk[0] = 0.0
    _table_kernel(ak, amk, mult, np.ascontiguousarray(sa.coupling, dtype=complex),
                  np.ascontiguousarray(sa.drive_freq, dtype=float),
                  float(params.eta_abs), float(params.gamma_abs), float(params.dt_abs))
    return ak, amk, mult


@dataclass
class BranchBatch:
    """Prefactors of a batch of trajectories, one column per sector."""

    mu: np.ndarray  # (batch, sectors)


class BranchEngine:
    """Trajectory engine over coherent branches.

    Every sector stays in the batch for the whole run.  Between jumps the
    prefactors follow the shared table ``mu(n) = D * C(n)`` with C the
    running product of the RK4 multipliers, so ``run`` advances a batch by
    locating the jump steps directly instead of stepping.
    """

    name = "branch"
    window = 1024

    def __init__(self, state, params, sectors=None, n_steps=None):
        self.params = params
        self.sectors = sectors if sectors is not None else sector_list(state, params)
        self.sa = SectorArrays.from_sectors(self.sectors)
        self.n_steps = params.n_steps if n_steps is None else n_steps
        self.ak, self.amk, self.mult = amplitude_table(self.sa, params, self.n_steps)
        self._enorm = np.exp(np.abs(self.ak) ** 2 + np.abs(self.amk) ** 2)
        self._tables = None

    def initial(self, batch=1):
        mu = self.sa.weight * math.exp(-0.5 * abs(self.params.alpha0) ** 2)
        mu = mu / math.sqrt(np.sum(np.abs(mu) ** 2 * self._enorm[0]))
        return BranchBatch(np.repeat(mu[None], batch, axis=0))

    def _weights(self, st, step):
        return np.abs(st.mu) ** 2 * self._enorm[step]

    def propagate(self, st, step):
        return BranchBatch(st.mu * self.mult[step])

    def jump(self, st, channel, step):
        amp = self.ak if channel == 0 else self.amk
        return BranchBatch(st.mu * (math.sqrt(2.0 * self.params.gamma_abs) * amp[step]))

    def norm2(self, st, step):
        return self._weights(st, step).sum(axis=1)

    def populations(self, st, step):
        w = self._weights(st, step)
        nk = w @ (np.abs(self.ak[step]) ** 2)
        nmk = w @ (np.abs(self.amk[step]) ** 2)
        return nk, nmk, w.sum(axis=1)

    def a_mk(self, st, step):
        return self._weights(st, step) @ self.amk[step]

    def aux(self, st, eps, step):
        return BranchBatch(st.mu * (1.0 + eps * self.amk[step]))

    def where(self, mask, a, b):
        return BranchBatch(np.where(mask[:, None], a.mu, b.mu))

    def scale(self, st, factor):
        return BranchBatch(st.mu * factor[:, None])

    def take(self, st, idx):
        return BranchBatch(st.mu[idx])

    def concat(self, states):
        return BranchBatch(np.concatenate([s.mu for s in states], axis=0))

    def batch_size(self, st):
        return st.mu.shape[0]

    def maintain(self, st, step):
        return st

    # --- event-driven evolution ---------------------------------------------------

    def tables(self):
        """Row-scaled running products C(n) and branch weights W(n) = |C|^2 e^{|ak|^2+|amk|^2}.

        Rows are rescaled independently; every quantity drawn from them is a
        ratio within one row, so the scale drops out.
        """
        if self._tables is None:
            logc = np.zeros((self.n_steps + 1, len(self.sa)), dtype=complex)
            np.cumsum(np.log(self.mult), axis=0, out=logc[1:])
            logc -= logc.real.max(axis=1, keepdims=True)
            logw = 2.0 * logc.real + np.abs(self.ak) ** 2 + np.abs(self.amk) ** 2
            logw -= logw.max(axis=1, keepdims=True)
            w = np.exp(logw)
            self._tables = (np.exp(logc), w, w * np.abs(self.ak) ** 2, w * np.abs(self.amk) ** 2)
        return self._tables

    def run(self, st, start, stop, uniforms, record_steps=(), observe_steps=(), snapshot_steps=()):
        """Equivalent of stepping ``st`` from ``start`` to ``stop`` one step at a time.

        Returns (final batch, n_k, n_mk at record_steps, jumps, a_mk at
        observe_steps, snapshots) with the same conventions as ``evolve``.
        """
        C, W, A1, A2 = self.tables()
        p = self.params
        rate = 2.0 * p.gamma_abs * p.dt_abs
        root = math.sqrt(2.0 * p.gamma_abs)
        nb = self.batch_size(st)
        record_steps = np.asarray(record_steps, dtype=int)
        observe_steps = np.asarray(sorted(observe_steps), dtype=int)
        snapshot_steps = sorted(snapshot_steps)
        n_k = np.empty((record_steps.size, nb))
        n_mk = np.empty((record_steps.size, nb))
        observed = np.empty((observe_steps.size, nb), dtype=complex)
        snap_mu = {k: np.empty((nb, len(self.sa)), dtype=complex) for k in snapshot_steps}
        final = np.empty((nb, len(self.sa)), dtype=complex)
        jumps = []
        for b in range(nb):
            d = st.mu[b] / C[start]
            d = d / np.linalg.norm(d)
            segments = [(start, d)]
            n = start
            while rate and n < stop:
                hi = min(n + self.window, stop)
                q = np.abs(d) ** 2
                p0 = W[n:hi] @ q
                dp1 = rate * (A1[n:hi] @ q) / p0
                dp2 = rate * (A2[n:hi] @ q) / p0
                u = uniforms[b, n - start:hi - start]
                hit = np.flatnonzero(u < dp1 + dp2)
                reach = hit[0] + 1 if hit.size else hi - n
                worst = max(float(dp1[:reach].max()), float(dp2[:reach].max()))
                if worst >= MAX_JUMP_PROB:
                    raise StepTooLarge(f"jump probability {worst:.3g} per step")
                if not hit.size:
                    n = hi
                    continue
                j = n + hit[0]
                channel = 1 if u[hit[0]] < dp1[hit[0]] else 2
                amp = self.ak[j] if channel == 1 else self.amk[j]
                d = d * (root * amp)
                d = d / np.linalg.norm(d)
                jumps.append((j, b, channel))
                segments.append((j + 1, d))
                n = j + 1
            starts = np.array([s0 for s0, _ in segments])

            def seg_of(steps):
                return np.searchsorted(starts, steps, side="right") - 1

            for steps, fill in ((record_steps, "rec"), (observe_steps, "obs")):
                if steps.size == 0:
                    continue
                which = seg_of(steps)
                for k in np.unique(which):
                    sel = which == k
                    q = np.abs(segments[k][1]) ** 2
                    rows = steps[sel]
                    p0 = W[rows] @ q
                    if fill == "rec":
                        n_k[sel, b] = (A1[rows] @ q) / p0
                        n_mk[sel, b] = (A2[rows] @ q) / p0
                    else:
                        observed[sel, b] = ((W[rows] * self.amk[rows]) @ q) / p0
            for k in snapshot_steps + [stop]:
                mu = segments[seg_of(k)][1] * C[k]
                mu = mu / math.sqrt(np.sum(np.abs(mu) ** 2 * self._enorm[k]))
                (final if k == stop else snap_mu[k])[b] = mu
            if stop in snap_mu:
                snap_mu[stop][b] = final[b]
        jumps.sort(key=lambda e: (e[0], e[2], e[1]))
        snaps = {k: BranchBatch(v) for k, v in snap_mu.items()}
        obs = {int(k): observed[i] for i, k in enumerate(observe_steps)}
        return BranchBatch(final), n_k, n_mk, jumps, obs, snaps

    def branch_state(self, st, b, step):
        return BranchState(st.mu[b].copy(), self.ak[step].copy(), self.amk[step].copy(), self.sectors)

    def to_kets(self, st, step):
        kets = [branch_to_dense(self.branch_state(st, b, step), self.params.cutoff).reshape(-1)
                for b in range(self.batch_size(st))]
        return np.array(kets)


def branch_to_dense(branch, cutoff, tail_tol=1e-10):
    """Expand coherent branches into the truncated Fock basis, (sectors, m_k, m_-k)."""
    s = len(branch.mu)
    out = np.zeros((s, cutoff + 1, cutoff + 1), dtype=complex)
    for i in range(s):
        if branch.mu[i] == 0:
            continue
        for a in (branch.ak[i], branch.amk[i]):
            tail = coherent_tail_mass(abs(a) ** 2, cutoff)
            if tail >= tail_tol:
                raise TruncationTooSmall(f"branch amplitude {abs(a):.3g} needs a cutoff above {cutoff}")
        scale = branch.mu[i] * math.exp(0.5 * (abs(branch.ak[i]) ** 2 + abs(branch.amk[i]) ** 2))
        out[i] = scale * np.outer(coherent_vector(branch.ak[i], cutoff), coherent_vector(branch.amk[i], cutoff))
    return out
