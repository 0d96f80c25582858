"""Logarithmic negativity of the atoms | field bipartition.

Mixed states use the partial transpose on the atomic index and the trace
norm.  Pure coherent-branch states take a shortcut: the atomic sectors are
orthonormal, so the Schmidt coefficients are the square roots of the
eigenvalues of the Gram matrix of the (weighted) field branches.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dense import DensityMatrix
from .errors import DimensionMismatch, EigensolveFailure, NonPhysicalGram

CLAMP = 1e-10


@dataclass(frozen=True)
class Bipartition:
    """Atoms are the slow index: full index = a * d_field + f."""

    d_atoms: int
    d_field: int

    @classmethod
    def for_cutoff(cls, n_sectors, cutoff):
        return cls(n_sectors, (cutoff + 1) ** 2)

    @property
    def dim(self):
        return self.d_atoms * self.d_field

    def check(self, rho):
        if rho.shape != (self.dim, self.dim):
            raise DimensionMismatch(f"matrix {rho.shape} does not match {self.d_atoms} x {self.d_field}")


def _as_matrix(rho):
    return rho.data if isinstance(rho, DensityMatrix) else np.asarray(rho)


def average_density_matrix(kets, bipartition, tol=1e-8):
    """(1/M) sum_m |psi_m><psi_m| from a (M, dim) array of normalized kets."""
    kets = np.atleast_2d(np.asarray(kets, dtype=complex))
    if kets.shape[1] != bipartition.dim:
        raise DimensionMismatch(f"kets of length {kets.shape[1]}, bipartition needs {bipartition.dim}")
    norms = np.sum(np.abs(kets) ** 2, axis=1)
    if np.any(np.abs(norms - 1.0) > tol):
        raise ValueError("snapshots must be normalized")
    rho = kets.T @ kets.conj() / kets.shape[0]
    rho = 0.5 * (rho + rho.conj().T)
    return DensityMatrix(rho, bipartition.d_atoms, bipartition.d_field)


def partial_transpose(rho, bipartition):
    """rho[(a, f), (a', f')] -> rho[(a', f), (a, f')]."""
    m = _as_matrix(rho)
    bipartition.check(m)
    A, F = bipartition.d_atoms, bipartition.d_field
    return m.reshape(A, F, A, F).transpose(2, 1, 0, 3).reshape(A * F, A * F)


def log_negativity(rho, bipartition):
    """E_N = log2 ||rho^{T_A}||_1, with tiny negative round-off clamped to 0."""
    pt = partial_transpose(rho, bipartition)
    pt = 0.5 * (pt + pt.conj().T)
    try:
        lam = np.linalg.eigvalsh(pt)
    except np.linalg.LinAlgError as exc:
        raise EigensolveFailure(str(exc)) from exc
    if not np.all(np.isfinite(lam)):
        raise EigensolveFailure("non-finite eigenvalues")
    en = math.log2(float(np.sum(np.abs(lam))))
    return 0.0 if -CLAMP <= en < 0 else en


def _coherent_overlap(a, b):
    """<a|b> for normalized coherent states, element-wise over broadcast arrays."""
    return np.exp(-0.5 * np.abs(a) ** 2 - 0.5 * np.abs(b) ** 2 + np.conj(a) * b)


def branch_gram(branch):
    """M_ss' = conj(w_s) w_s' <f_s|f_s'> for a normalized branch state."""
    ak, amk = np.asarray(branch.ak), np.asarray(branch.amk)
    w = np.asarray(branch.mu) * np.exp(0.5 * (np.abs(ak) ** 2 + np.abs(amk) ** 2))
    w = w / np.linalg.norm(w)
    ov = _coherent_overlap(ak[:, None], ak[None, :]) * _coherent_overlap(amk[:, None], amk[None, :])
    M = np.conj(w)[:, None] * w[None, :] * ov
    return 0.5 * (M + M.conj().T)


def pure_log_negativity(branch):
    """E_N = 2 log2 sum_i s_i with s_i^2 the eigenvalues of the branch Gram matrix."""
    M = branch_gram(branch)
    try:
        lam = np.linalg.eigvalsh(M)
    except np.linalg.LinAlgError as exc:
        raise EigensolveFailure(str(exc)) from exc
    if lam.min() < -CLAMP:
        raise NonPhysicalGram(f"Gram matrix eigenvalue {lam.min():.3g}")
    # eigenvalues below the solver's accuracy are round-off, and their square
    # roots would otherwise add ~1e-8 per sector
    floor = lam.size * np.finfo(float).eps * max(lam.max(), 0.0)
    s = np.sqrt(np.where(lam > floor, lam, 0.0))
    en = 2.0 * math.log2(float(s.sum()))
    return 0.0 if -CLAMP <= en < 0 else en


def reduced_pair(ket, dims, keep):
    """Density matrix of two of the parties (atoms0, atoms1, mode k, mode -k) of a pure ket.

    ``dims`` gives the four local dimensions; ``keep`` the two kept parties.
    """
    psi = np.asarray(ket, dtype=complex).reshape(dims)
    keep = tuple(sorted(keep))
    if len(keep) != 2:
        raise ValueError("keep exactly two parties")
    traced = [i for i in range(4) if i not in keep]
    psi = np.moveaxis(psi, keep + tuple(traced), range(4))
    d0, d1 = dims[keep[0]], dims[keep[1]]
    m = psi.reshape(d0 * d1, -1)
    rho = m @ m.conj().T
    return rho / np.trace(rho).real, Bipartition(d0, d1)
