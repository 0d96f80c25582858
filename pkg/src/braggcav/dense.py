"""Truncated two-mode Fock-space reference engine and Lindblad integrator.

Field kets are stored as arrays indexed ``[..., sector, m_k, m_-k]`` with
``m`` running over ``0..cutoff``.  Ladder operators are applied by slicing
rather than matrix products, which keeps a whole batch of trajectories in
one array.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from numba import njit
from scipy.integrate import solve_ivp
from scipy.special import gammaln

from .errors import DimensionMismatch, NumericGuardError, TruncationTooSmall
from .model import SectorArrays, sector_list

GUARD_MASS = 1e-8


def build_mode_operators(cutoff):
    """Annihilation matrices for modes k and -k on the two-mode space."""
    n = cutoff + 1
    a = np.diag(np.sqrt(np.arange(1, n)), k=1).astype(complex)
    eye = np.eye(n)
    return np.kron(a, eye), np.kron(eye, a)


def coherent_vector(alpha, cutoff):
    m = np.arange(cutoff + 1)
    if alpha == 0:
        v = np.zeros(cutoff + 1, dtype=complex)
        v[0] = 1.0
        return v
    logmod = -0.5 * abs(alpha) ** 2 + m * np.log(abs(alpha)) - 0.5 * gammaln(m + 1.0)
    return np.exp(logmod + 1j * m * np.angle(alpha))


def sector_heff(sector, params, t):
    """Dense non-hermitian Hamiltonian (units of hbar) for one sector at time t."""
    ak, amk = build_mode_operators(params.cutoff)
    c = sector.coupling
    phase = np.exp(1j * sector.drive_freq * t)
    eta, gamma = params.eta_abs, params.gamma_abs
    dag = lambda x: x.conj().T  # noqa: E731
    return (
        c * dag(amk) @ ak
        + np.conj(c) * dag(ak) @ amk
        + eta * (phase * dag(ak) + np.conj(phase) * ak)
        - 1j * gamma * (dag(ak) @ ak + dag(amk) @ amk)
    )


def expectation(op, state):
    """<psi|op|psi>/<psi|psi> for a ket, Tr[op rho] for a matrix."""
    op = np.asarray(op)
    if isinstance(state, DensityMatrix):
        state = state.data
    state = np.asarray(state)
    if state.ndim == 1:
        if op.shape != (state.size, state.size):
            raise DimensionMismatch(f"operator {op.shape} vs ket {state.shape}")
        return complex(np.vdot(state, op @ state) / np.vdot(state, state))
    if op.shape != state.shape:
        raise DimensionMismatch(f"operator {op.shape} vs density matrix {state.shape}")
    return complex(np.trace(op @ state))


@dataclass
class DensityMatrix:
    """Operator over (sector x field) with the atoms as the slow index."""

    data: np.ndarray
    d_atoms: int
    d_field: int
    sectors: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        if self.data.shape != (self.d_atoms * self.d_field,) * 2:
            raise DimensionMismatch(
                f"matrix {self.data.shape} does not match {self.d_atoms} x {self.d_field}"
            )

    def block(self, s, s2):
        f = self.d_field
        return self.data[s * f:(s + 1) * f, s2 * f:(s2 + 1) * f]

    @property
    def trace(self):
        return complex(np.trace(self.data))

    @classmethod
    def from_blocks(cls, blocks, sectors=()):
        s, _, f, _ = blocks.shape
        data = blocks.transpose(0, 2, 1, 3).reshape(s * f, s * f)
        return cls(data, s, f, list(sectors))

    def blocks(self):
        s, f = self.d_atoms, self.d_field
        return self.data.reshape(s, f, s, f).transpose(0, 2, 1, 3)

    @classmethod
    def pure(cls, ket, d_atoms, d_field, sectors=()):
        ket = np.asarray(ket).reshape(-1)
        ket = ket / np.linalg.norm(ket)
        return cls(np.outer(ket, ket.conj()), d_atoms, d_field, list(sectors))


class DenseEngine:
    """Batch MCWF propagation in the truncated Fock basis.

    State arrays have shape ``(batch, sectors, cutoff+1, cutoff+1)``.
    """

    name = "dense"

    def __init__(self, state, params, sectors=None):
        self.params = params
        self.sectors = sectors if sectors is not None else sector_list(state, params)
        self.sa = SectorArrays.from_sectors(self.sectors)
        self.m1 = params.cutoff + 1
        self.sq = np.sqrt(np.arange(self.m1))
        self.nvec = np.arange(self.m1, dtype=float)
        self.c = self.sa.coupling[:, None, None]
        self.omega = self.sa.drive_freq[:, None, None]
        self.dt = params.dt_abs

    # ladder operators on the last two axes
    def _a_k(self, x):
        y = np.zeros_like(x)
        y[..., :-1, :] = self.sq[1:, None] * x[..., 1:, :]
        return y

    def _ad_k(self, x):
        y = np.zeros_like(x)
        y[..., 1:, :] = self.sq[1:, None] * x[..., :-1, :]
        return y

    def _a_mk(self, x):
        y = np.zeros_like(x)
        y[..., :, :-1] = self.sq[1:] * x[..., :, 1:]
        return y

    def _ad_mk(self, x):
        y = np.zeros_like(x)
        y[..., :, 1:] = self.sq[1:] * x[..., :, :-1]
        return y

    def heff_apply(self, psi, t):
        return 1j * self._deriv(psi, t)

    def _deriv(self, psi, t):
        """-i H_eff psi."""
        psi = np.ascontiguousarray(psi, dtype=complex)
        out = np.empty_like(psi)
        _deriv_kernel(psi, out, self.sa.coupling, self.sa.drive_freq, t,
                      self.params.eta_abs, self.params.gamma_abs, self.sq)
        return out

    # engine interface used by the trajectory driver
    def initial(self, batch=1):
        field_state = np.outer(coherent_vector(self.params.alpha0, self.params.cutoff),
                               coherent_vector(0.0, self.params.cutoff))
        psi = self.sa.weight[:, None, None] * field_state[None]
        psi = psi / np.sqrt(np.sum(np.abs(psi) ** 2))
        return np.repeat(psi[None], batch, axis=0)

    def propagate(self, psi, step):
        psi = np.ascontiguousarray(psi, dtype=complex)
        out = np.empty_like(psi)
        _rk4_kernel(psi, out, self.sa.coupling, self.sa.drive_freq, step * self.dt, self.dt,
                    self.params.eta_abs, self.params.gamma_abs, self.sq)
        return out

    def jump(self, psi, channel, step):
        op = self._a_k if channel == 0 else self._a_mk
        return np.sqrt(2.0 * self.params.gamma_abs) * op(psi)

    def norm2(self, psi, step):
        return np.sum(np.abs(psi) ** 2, axis=(1, 2, 3))

    def populations(self, psi, step):
        prob = np.abs(psi) ** 2
        nk = np.einsum("bsij,i->b", prob, self.nvec)
        nmk = np.einsum("bsij,j->b", prob, self.nvec)
        return nk, nmk, prob.sum(axis=(1, 2, 3))

    def a_mk(self, psi, step):
        return np.einsum("bsij,bsij->b", psi.conj(), self._a_mk(psi))

    def aux(self, psi, eps, step):
        return psi + eps * self._a_mk(psi)

    def where(self, mask, a, b):
        return np.where(mask[:, None, None, None], a, b)

    def scale(self, psi, factor):
        return psi * factor[:, None, None, None]

    def take(self, psi, idx):
        return psi[idx]

    def concat(self, states):
        return np.concatenate(states, axis=0)

    def batch_size(self, psi):
        return psi.shape[0]

    def maintain(self, psi, step):
        if step % 64 == 0:
            check_truncation(psi)
        return psi

    def to_kets(self, psi, step):
        """Flattened (batch, sectors*field) kets, atoms as slow index."""
        return psi.reshape(psi.shape[0], -1)


@njit(cache=True)
def _deriv_kernel(psi, out, c, omega, t, eta, gamma, sq):
    nb, ns, m1, _ = psi.shape
    for s in range(ns):
        mic = -1j * c[s]
        micc = -1j * np.conj(c[s])
        up = -1j * eta * np.exp(1j * omega[s] * t)
        down = -1j * eta * np.exp(-1j * omega[s] * t)
        for b in range(nb):
            for m in range(m1):
                for n in range(m1):
                    v = -gamma * (m + n) * psi[b, s, m, n]
                    if m + 1 < m1 and n >= 1:
                        v += mic * sq[m + 1] * sq[n] * psi[b, s, m + 1, n - 1]
                    if m >= 1 and n + 1 < m1:
                        v += micc * sq[m] * sq[n + 1] * psi[b, s, m - 1, n + 1]
                    if m >= 1:
                        v += up * sq[m] * psi[b, s, m - 1, n]
                    if m + 1 < m1:
                        v += down * sq[m + 1] * psi[b, s, m + 1, n]
                    out[b, s, m, n] = v


@njit(cache=True)
def _rk4_kernel(psi, out, c, omega, t, h, eta, gamma, sq):
    k = np.empty_like(psi)
    acc = np.empty_like(psi)
    tmp = np.empty_like(psi)
    _deriv_kernel(psi, k, c, omega, t, eta, gamma, sq)
    flat_psi, flat_k, flat_acc, flat_tmp = psi.ravel(), k.ravel(), acc.ravel(), tmp.ravel()
    for i in range(flat_psi.size):
        flat_acc[i] = flat_k[i]
        flat_tmp[i] = flat_psi[i] + 0.5 * h * flat_k[i]
    _deriv_kernel(tmp, k, c, omega, t + 0.5 * h, eta, gamma, sq)
    for i in range(flat_psi.size):
        flat_acc[i] += 2.0 * flat_k[i]
        flat_tmp[i] = flat_psi[i] + 0.5 * h * flat_k[i]
    _deriv_kernel(tmp, k, c, omega, t + 0.5 * h, eta, gamma, sq)
    for i in range(flat_psi.size):
        flat_acc[i] += 2.0 * flat_k[i]
        flat_tmp[i] = flat_psi[i] + h * flat_k[i]
    _deriv_kernel(tmp, k, c, omega, t + h, eta, gamma, sq)
    flat_out = out.ravel()
    for i in range(flat_psi.size):
        flat_out[i] = flat_psi[i] + (h / 6.0) * (flat_acc[i] + flat_k[i])


def check_truncation(psi, limit=GUARD_MASS):
    """Raise if the top two Fock levels of either mode carry too much weight."""
    prob = np.abs(psi) ** 2
    total = prob.sum(axis=(-3, -2, -1))
    top_k = prob[..., -2:, :].sum(axis=(-3, -2, -1))
    top_mk = prob[..., :, -2:].sum(axis=(-3, -2, -1))
    worst = float(np.max(np.maximum(top_k, top_mk) / total))
    if worst >= limit:
        raise TruncationTooSmall(f"top Fock levels carry relative weight {worst:.3g}")


# --- Lindblad master equation -------------------------------------------------
#
# The photon-exchange part of a sector Hamiltonian is a beam splitter.  In the
# Fock basis of its normal modes b+ and b- the exchange energy and the loss
# term are diagonal, so the integrator works in the interaction frame of the
# exchange term where only the weak drive oscillates.  This keeps the explicit
# solver from being limited by the large exchange frequencies of the upper
# Fock levels.  The frame basis is truncated at total photon number cutoff.


class NormalModeBasis:
    """Two-mode Fock basis |n+, n-> of b+- = (a_k +- e^{-i theta} a_-k)/sqrt(2)."""

    def __init__(self, sector, kmax):
        self.sector = sector
        self.kmax = int(kmax)
        c = complex(sector.coupling)
        self.c_abs = abs(c)
        self.theta = float(np.angle(c)) if c != 0 else 0.0
        self.omega = float(sector.drive_freq)
        pairs = [(p, n - p) for n in range(self.kmax + 1) for p in range(n, -1, -1)]
        self.pairs = np.array(pairs)
        self.dim = len(pairs)
        index = {pq: i for i, pq in enumerate(pairs)}
        self.total = self.pairs.sum(axis=1).astype(float)
        self.energy = self.c_abs * (self.pairs[:, 0] - self.pairs[:, 1])
        self.bp = self._lowering(index, 0)
        self.bm = self._lowering(index, 1)
        self.bpd = self.bp.conj().T.tocsr()
        self.bmd = self.bm.conj().T.tocsr()
        r = np.sqrt(0.5)
        self.ak = (r * (self.bp + self.bm)).tocsr()
        self.amk = (r * np.exp(1j * self.theta) * (self.bp - self.bm)).tocsr()
        # neighbour tables for the jitted kernel: -1 marks a missing state
        self.dn = np.full((2, self.dim), -1, dtype=np.int64)
        self.up = np.full((2, self.dim), -1, dtype=np.int64)
        for i, (p, m) in enumerate(pairs):
            for mode, shift in ((0, (1, 0)), (1, (0, 1))):
                lo = (p - shift[0], m - shift[1])
                hi = (p + shift[0], m + shift[1])
                if lo in index:
                    self.dn[mode, i] = index[lo]
                if hi in index:
                    self.up[mode, i] = index[hi]

    def _lowering(self, index, mode):
        rows, cols, vals = [], [], []
        for j, pq in enumerate(self.pairs):
            if pq[mode] == 0:
                continue
            lower = list(pq)
            lower[mode] -= 1
            rows.append(index[tuple(lower)])
            cols.append(j)
            vals.append(np.sqrt(pq[mode]))
        return sp.csr_matrix((vals, (rows, cols)), shape=(self.dim, self.dim), dtype=complex)

    def phase(self, t):
        """Diagonal of exp(-i H_exchange t)."""
        return np.exp(-1j * self.energy * t)

    def coherent(self, alpha):
        """|alpha>_k |0>_-k, which is a product of b+- coherent states alpha/sqrt(2)."""
        beta = alpha * np.sqrt(0.5)
        v = coherent_vector(beta, self.kmax)
        return v[self.pairs[:, 0]] * v[self.pairs[:, 1]]

    def to_fock(self, cutoff):
        """Columns are the basis states written in the |m_k, m_-k> product basis."""
        if cutoff < self.kmax:
            raise DimensionMismatch(f"cutoff {cutoff} below frame truncation {self.kmax}")
        ak, amk = build_mode_operators(cutoff)
        e = np.exp(1j * self.theta)
        bpd = sp.csr_matrix(np.sqrt(0.5) * (ak + e * amk).conj().T)
        bmd = sp.csr_matrix(np.sqrt(0.5) * (ak - e * amk).conj().T)
        u = np.zeros(((cutoff + 1) ** 2, self.dim), dtype=complex)
        index = {tuple(pq): i for i, pq in enumerate(self.pairs)}
        for j, (p, m) in enumerate(self.pairs):
            if p == 0 and m == 0:
                u[0, j] = 1.0
            elif p > 0:
                u[:, j] = bpd @ u[:, index[(p - 1, m)]] / np.sqrt(p)
            else:
                u[:, j] = bmd @ u[:, index[(0, m - 1)]] / np.sqrt(m)
        return u


class _FrameRHS:
    """d/dt of a (left, right) block in the interaction frame of both sides."""

    def __init__(self, left, right, params):
        self.l, self.r = left, right
        self.eta = params.eta_abs
        self.gamma = params.gamma_abs
        self.same = left is right
        self.decay = self.gamma * (left.total[:, None] + right.total[None, :])

    def _drive(self, basis, x, t):
        """eta (A^+(t) + A(t)) x with A the frame-picture drive operator."""
        ep = np.exp(1j * (basis.omega + basis.c_abs) * t)
        em = np.exp(1j * (basis.omega - basis.c_abs) * t)
        y = ep * (basis.bpd @ x) + em * (basis.bmd @ x)
        y += np.conj(ep) * (basis.bp @ x) + np.conj(em) * (basis.bm @ x)
        return (self.eta * np.sqrt(0.5)) * y

    def _frame_ops(self, basis, t):
        lo = np.exp(-1j * basis.c_abs * t)
        r = np.sqrt(0.5)
        e = np.exp(1j * basis.theta)
        return [(r * lo, r * np.conj(lo)), (r * e * lo, -r * e * np.conj(lo))]

    def __call__(self, t, y):
        l, r = self.l, self.r
        x = y.reshape(l.dim, r.dim)
        if self.same:
            out = np.empty_like(x)
            ep = np.exp(1j * (l.omega + l.c_abs) * t)
            em = np.exp(1j * (l.omega - l.c_abs) * t)
            _frame_kernel(x, out, self.decay, l.dn, l.up, l.pairs, ep, em,
                          self.eta * np.sqrt(0.5), 2.0 * self.gamma)
            return out.reshape(-1)
        out = -self.decay * x
        if self.eta:
            xd = x.conj().T
            out += -1j * (self._drive(l, x, t) - self._drive(r, xd, t).conj().T)
        if self.gamma:
            g2 = 2.0 * self.gamma
            if self.same:
                for b in (l.bp, l.bm):
                    out += g2 * (b @ (b @ x.conj().T).conj().T)
            else:
                for (pl, ml), (pr, mr) in zip(self._frame_ops(l, t), self._frame_ops(r, t)):
                    left_x = pl * (l.bp @ x) + ml * (l.bm @ x)
                    lxd = left_x.conj().T
                    out += g2 * (pr * (r.bp @ lxd) + mr * (r.bm @ lxd)).conj().T
        return out.reshape(-1)


@njit(cache=True)
def _frame_kernel(x, out, decay, dn, up, pairs, ep, em, eta_r, g2):
    n = x.shape[0]
    sq = np.sqrt(np.arange(pairs.max() + 2).astype(np.float64))
    ce = -1j * eta_r
    # left multiplication by the drive, row by row
    for i in range(n):
        coef = np.zeros(4, dtype=np.complex128)
        rows = (dn[0, i], dn[1, i], up[0, i], up[1, i])
        coef[0] = ce * ep * sq[pairs[i, 0]]
        coef[1] = ce * em * sq[pairs[i, 1]]
        coef[2] = ce * np.conj(ep) * sq[pairs[i, 0] + 1]
        coef[3] = ce * np.conj(em) * sq[pairs[i, 1] + 1]
        for j in range(n):
            out[i, j] = -decay[i, j] * x[i, j]
        for q in range(4):
            k = rows[q]
            if k >= 0:
                c = coef[q]
                for j in range(n):
                    out[i, j] += c * x[k, j]
    # right multiplication by the drive, and the jump term
    wr = np.empty((4, n), dtype=np.complex128)
    for j in range(n):
        wr[0, j] = -ce * np.conj(ep) * sq[pairs[j, 0]]
        wr[1, j] = -ce * np.conj(em) * sq[pairs[j, 1]]
        wr[2, j] = -ce * ep * sq[pairs[j, 0] + 1]
        wr[3, j] = -ce * em * sq[pairs[j, 1] + 1]
    for i in range(n):
        ip, im = up[0, i], up[1, i]
        gp = g2 * sq[pairs[i, 0] + 1]
        gm = g2 * sq[pairs[i, 1] + 1]
        for j in range(n):
            acc = 0j
            k = dn[0, j]
            if k >= 0:
                acc += wr[0, j] * x[i, k]
            k = dn[1, j]
            if k >= 0:
                acc += wr[1, j] * x[i, k]
            k = up[0, j]
            if k >= 0:
                acc += wr[2, j] * x[i, k]
                if ip >= 0:
                    acc += gp * sq[pairs[j, 0] + 1] * x[ip, k]
            k = up[1, j]
            if k >= 0:
                acc += wr[3, j] * x[i, k]
                if im >= 0:
                    acc += gm * sq[pairs[j, 1] + 1] * x[im, k]
            out[i, j] += acc


def to_frame(x, left, right, t):
    return np.conj(left.phase(t))[:, None] * x * right.phase(t)[None, :]


def from_frame(x, left, right, t):
    return left.phase(t)[:, None] * x * np.conj(right.phase(t))[None, :]


def evolve_block(x0, params, left, right, t_eval, t0=0.0, rtol=1e-8, atol=1e-11):
    """Lindblad evolution of one block given in the normal-mode bases.

    ``left`` and ``right`` are NormalModeBasis objects; ``x0`` is the block at
    ``t0`` and the result holds the block at each of ``t_eval``.
    """
    t_eval = np.asarray(t_eval, dtype=float)
    out = np.empty((t_eval.size, left.dim, right.dim), dtype=complex)
    at_start = np.isclose(t_eval, t0, rtol=0.0, atol=1e-12)
    out[at_start] = x0
    later = ~at_start
    if np.any(later):
        rhs = _FrameRHS(left, right, params)
        y0 = to_frame(np.asarray(x0, dtype=complex), left, right, t0).reshape(-1)
        sol = solve_ivp(rhs, (t0, float(t_eval[later].max())), y0, method="DOP853",
                        t_eval=t_eval[later], rtol=rtol, atol=atol)
        if not sol.success:
            raise NumericGuardError(sol.message)
        for k, (tk, y) in enumerate(zip(sol.t, sol.y.T)):
            out[np.flatnonzero(later)[k]] = from_frame(y.reshape(left.dim, right.dim), left, right, tk)
    return out


def field_guard(x, basis, limit=GUARD_MASS):
    """Truncation guard: weight of the top two total-photon shells of a diagonal block."""
    diag = np.real(np.diagonal(x, axis1=-2, axis2=-1))
    total = diag.sum(axis=-1)
    top = diag[..., basis.total >= basis.kmax - 1].sum(axis=-1)
    ok = np.abs(total) > 1e-300
    if not np.any(ok):
        return
    worst = float(np.max(np.abs(top[ok]) / np.abs(total[ok])))
    if worst >= limit:
        raise TruncationTooSmall(f"top photon-number shells carry relative weight {worst:.3g}")


def sector_bases(sectors, params):
    return [NormalModeBasis(s, params.cutoff) for s in sectors]


def initial_density_matrix(state, params, sectors=None):
    sectors = sectors if sectors is not None else sector_list(state, params)
    sa = SectorArrays.from_sectors(sectors)
    field_ket = np.kron(coherent_vector(params.alpha0, params.cutoff), coherent_vector(0.0, params.cutoff))
    ket = np.kron(sa.weight, field_ket)
    return DensityMatrix.pure(ket, len(sectors), field_ket.size, sectors)


def master_equation_evolve(rho0, params, t_grid, diagonal_only=False):
    """Lindblad evolution of ``rho0`` sampled at ``t_grid`` (starting at t=0).

    Sector blocks evolve independently.  With ``diagonal_only`` the
    off-diagonal sector blocks are left at zero; sector-diagonal observables
    such as photon numbers are unaffected.
    """
    sectors = rho0.sectors
    if len(sectors) != rho0.d_atoms:
        raise DimensionMismatch("density matrix carries no sector list")
    if rho0.d_field != (params.cutoff + 1) ** 2:
        raise DimensionMismatch(f"field dimension {rho0.d_field} does not match cutoff {params.cutoff}")
    blocks0 = rho0.blocks()
    t_grid = np.asarray(t_grid, dtype=float)
    s = rho0.d_atoms
    bases = sector_bases(sectors, params)
    us = [b.to_fock(params.cutoff) for b in bases]
    out = np.zeros((t_grid.size, s, s, rho0.d_field, rho0.d_field), dtype=complex)
    for i in range(s):
        for j in range(s):
            if diagonal_only and i != j:
                continue
            if not np.any(blocks0[i, j]):
                continue
            x0 = us[i].conj().T @ blocks0[i, j] @ us[j]
            xs = evolve_block(x0, params, bases[i], bases[j], t_grid)
            if i == j:
                field_guard(xs, bases[i])
            out[:, i, j] = us[i] @ xs @ us[j].conj().T
    return [DensityMatrix.from_blocks(out[k], sectors) for k in range(t_grid.size)]


def sector_field_density(basis, params):
    """Normalized initial field density matrix of one sector in its frame basis."""
    v = basis.coherent(params.alpha0)
    v = v / np.linalg.norm(v)
    return np.outer(v, v.conj())


def lindblad_intensity(state, params, t_grid, weight_floor=0.0):
    """<n_-k>(t) and <n_k>(t) from the master equation (sector-diagonal blocks only).

    Each block is evolved at unit trace and weighted afterwards.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    n_mk = np.zeros(t_grid.size)
    n_k = np.zeros(t_grid.size)
    for sec in sector_list(state, params):
        p = abs(sec.weight) ** 2
        if p <= weight_floor:
            continue
        basis = NormalModeBasis(sec, params.cutoff)
        blk = evolve_block(sector_field_density(basis, params), params, basis, basis, t_grid)
        field_guard(blk, basis)
        nmk = (basis.amk.conj().T @ basis.amk).toarray()
        nk = (basis.ak.conj().T @ basis.ak).toarray()
        n_mk += p * np.real(np.einsum("ij,tji->t", nmk, blk))
        n_k += p * np.real(np.einsum("ij,tji->t", nk, blk))
    return n_mk, n_k
