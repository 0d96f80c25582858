"""Physical parameters, atomic many-body states and their conserved-number sectors.

Inside the cavity the well occupations ``n0`` and ``n1`` commute with the
Hamiltonian, so every atomic state is a superposition of sectors
``|n0, n1>`` whose field dynamics are independent of each other apart from
the shared jump record.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy.special import gammaln
from scipy.stats import poisson

from .errors import TruncationTooSmall

#: Discarded probability allowed when truncating a coherent state.
TAIL_TOL = 1e-10

QUARTER_WAVE = math.pi  # d = lambda/4, phase 2kd
HALF_WAVE = 2.0 * math.pi  # d = lambda/2

SEPARATION_PRESETS = {"QuarterWave": QUARTER_WAVE, "HalfWave": HALF_WAVE}


def coherent_tail_mass(mean, cutoff):
    """Probability that a Poisson(mean) photon number exceeds ``cutoff``."""
    return float(poisson.sf(cutoff, mean))


def minimal_cutoff(mean, tol=TAIL_TOL):
    """Smallest truncation whose Poisson tail beyond it is below ``tol``."""
    n = 0
    while coherent_tail_mass(mean, n) >= tol:
        n += 1
    return n


@dataclass(frozen=True)
class SimParams:
    """Rates are in units of ``g``; ``dt`` and ``t_max`` in units of ``1/g``."""

    g: float = 1.0
    eta: float = 0.0
    gamma: float = 0.0
    separation_phase: float = QUARTER_WAVE
    alpha0: complex = math.sqrt(2.0)
    cutoff: int = 16
    dt: float = 1e-3
    t_max: float = 2.0 * math.pi
    tail_tol: float = TAIL_TOL

    def __post_init__(self):
        if not self.g > 0:
            raise ValueError("g must be positive")
        if self.gamma < 0 or self.eta < 0:
            raise ValueError("gamma and eta must be non-negative")
        if self.cutoff < 1:
            raise ValueError("cutoff must be >= 1")
        if not (self.dt > 0 and self.t_max > 0):
            raise ValueError("dt and t_max must be positive")
        tail = coherent_tail_mass(abs(self.alpha0) ** 2, self.cutoff)
        if tail >= self.tail_tol:
            raise TruncationTooSmall(
                f"cutoff {self.cutoff} leaves Fock tail {tail:.3g} for |alpha0|^2="
                f"{abs(self.alpha0) ** 2:.3g} (need < {self.tail_tol:g})"
            )

    # absolute rates / times used by the engines
    @property
    def eta_abs(self):
        return self.eta * self.g

    @property
    def gamma_abs(self):
        return self.gamma * self.g

    @property
    def dt_abs(self):
        return self.dt / self.g

    @property
    def n_steps(self):
        return int(round(self.t_max / self.dt))

    def replace(self, **changes):
        from dataclasses import replace

        return replace(self, **changes)


@dataclass(frozen=True)
class Mott:
    n0: int
    n1: int

    def __post_init__(self):
        if self.n0 < 0 or self.n1 < 0 or int(self.n0) != self.n0 or int(self.n1) != self.n1:
            raise ValueError("Mott occupations must be non-negative integers")


@dataclass(frozen=True)
class CoherentProduct:
    """Coherent state in each well; ``nmax`` defaults to the tail-mass rule."""

    a0: complex
    a1: complex
    nmax: int | None = None
    tail_tol: float = TAIL_TOL

    def resolved_nmax(self):
        if self.nmax is not None:
            return int(self.nmax)
        mean = max(abs(self.a0) ** 2, abs(self.a1) ** 2)
        heuristic = math.ceil(mean + 8.0 * math.sqrt(mean))
        while _product_tail(self.a0, self.a1, heuristic) >= self.tail_tol:
            heuristic += 1
        return heuristic


@dataclass(frozen=True)
class NumberConserving:
    N: int

    def __post_init__(self):
        if self.N < 0 or int(self.N) != self.N:
            raise ValueError("N must be a non-negative integer")


AtomicState = Union[Mott, CoherentProduct, NumberConserving]


@dataclass(frozen=True)
class Sector:
    n0: int
    n1: int
    weight: complex
    coupling: complex
    drive_freq: float


def _log_factorial(n):
    return gammaln(np.asarray(n, dtype=float) + 1.0)


def _product_tail(a0, a1, nmax):
    return 1.0 - (1.0 - coherent_tail_mass(abs(a0) ** 2, nmax)) * (
        1.0 - coherent_tail_mass(abs(a1) ** 2, nmax)
    )


def sf2_coefficients(N):
    """Binomial amplitudes b_n0 = sqrt(N! / (2^N n0! (N-n0)!)), n0 = 0..N."""
    n0 = np.arange(N + 1)
    logb2 = _log_factorial(N) - N * math.log(2.0) - _log_factorial(n0) - _log_factorial(N - n0)
    b = np.exp(0.5 * logb2)
    return b / np.linalg.norm(b)


def _poisson_amplitudes(a, nmax):
    n = np.arange(nmax + 1)
    out = np.zeros(nmax + 1, dtype=complex)
    if a == 0:
        out[0] = 1.0
        return out
    log_mod = -0.5 * abs(a) ** 2 + n * math.log(abs(a)) - 0.5 * _log_factorial(n)
    return np.exp(log_mod) * np.exp(1j * n * np.angle(a))


def sf1_coefficients(a0, a1, nmax, tail_tol=TAIL_TOL):
    """Grid c[n0, n1] of the product coherent state, renormalized after truncation."""
    tail = _product_tail(a0, a1, nmax)
    if tail >= tail_tol:
        raise TruncationTooSmall(f"nmax={nmax} discards probability {tail:.3g} (need < {tail_tol:g})")
    c = np.outer(_poisson_amplitudes(a0, nmax), _poisson_amplitudes(a1, nmax))
    return c / np.linalg.norm(c)


def sector_coupling(n0, n1, g, phase):
    c = g * (n0 + n1 * np.exp(1j * phase))
    # the two named separations give exactly real couplings
    if math.isclose(math.remainder(phase, 2 * math.pi), 0.0, abs_tol=1e-15):
        return complex(g * (n0 + n1))
    if math.isclose(abs(math.remainder(phase, 2 * math.pi)), math.pi, abs_tol=1e-15):
        return complex(g * (n0 - n1))
    return complex(c)


def sector_list(state, params):
    """Decompose an atomic state into its conserved-number sectors."""
    g, phase = params.g, params.separation_phase
    if isinstance(state, Mott):
        pairs = [(state.n0, state.n1, 1.0)]
    elif isinstance(state, NumberConserving):
        b = sf2_coefficients(state.N)
        pairs = [(n0, state.N - n0, b[n0]) for n0 in range(state.N + 1)]
    elif isinstance(state, CoherentProduct):
        nmax = state.resolved_nmax()
        c = sf1_coefficients(state.a0, state.a1, nmax, state.tail_tol)
        pairs = [(n0, n1, c[n0, n1]) for n0 in range(nmax + 1) for n1 in range(nmax + 1)]
    else:
        raise TypeError(f"unknown atomic state {state!r}")
    return [
        Sector(int(n0), int(n1), complex(w), sector_coupling(n0, n1, g, phase), float(g * (n0 + n1)))
        for n0, n1, w in pairs
    ]


@dataclass(frozen=True)
class SectorArrays:
    """Column view of a sector list, convenient for vectorized engines."""

    n0: np.ndarray
    n1: np.ndarray
    weight: np.ndarray
    coupling: np.ndarray
    drive_freq: np.ndarray
    sectors: list = field(repr=False, default_factory=list)

    @classmethod
    def from_sectors(cls, sectors):
        return cls(
            n0=np.array([s.n0 for s in sectors]),
            n1=np.array([s.n1 for s in sectors]),
            weight=np.array([s.weight for s in sectors], dtype=complex),
            coupling=np.array([s.coupling for s in sectors], dtype=complex),
            drive_freq=np.array([s.drive_freq for s in sectors], dtype=float),
            sectors=list(sectors),
        )

    def __len__(self):
        return len(self.n0)
