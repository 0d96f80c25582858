"""Time-dependent physical spectrum of the reflected mode.

The filter response H(t) = Theta(t) Gamma exp(-(Gamma + i omega) t) turns the
double time integral of G into

    S(t, omega) = 2 Gamma^2 exp(-2 Gamma t) S0(omega)
    S0 = int_0^t dtau e^{(Gamma - i omega) tau} int_0^{t-tau} dt2 e^{2 Gamma t2} Re G(t2 + tau, t2)

which is what ``physical_spectrum`` evaluates with trapezoid weights.
Only Re G enters, so Re S0 is even in omega.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.optimize import brentq
from scipy.signal import find_peaks

from .errors import DegenerateInput, GridMismatch, NonIntegerWarning, TooFewPeaks

DEFAULT_GAMMA = 0.1
DEFAULT_POINTS = 600
DEFAULT_PROMINENCE = 0.05


def filter_response(t, omega, Gamma):
    """H(t, omega; Gamma) = Theta(t) Gamma exp(-(Gamma + i omega) t)."""
    t = np.asarray(t, dtype=float)
    h = Gamma * np.exp(-(Gamma + 1j * np.asarray(omega)) * t)
    out = np.where(t >= 0, h, 0.0)
    return complex(out) if out.ndim == 0 else out


def default_omega_grid(n_total, points=DEFAULT_POINTS):
    """[0, 1.5 g (n0 + n1)] with ``points`` samples."""
    return np.linspace(0.0, 1.5 * max(float(n_total), 1.0), points)


@dataclass
class SpectrumResult:
    omega: np.ndarray
    S0: np.ndarray
    Gamma: float
    t: float
    note: str = "S = 2 Gamma^2 exp(-2 Gamma t) S0"

    @property
    def S(self):
        return 2.0 * self.Gamma ** 2 * math.exp(-2.0 * self.Gamma * self.t) * self.S0


def _uniform_step(x, name):
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        raise GridMismatch(f"{name} grid needs at least two points")
    d = np.diff(x)
    if not np.allclose(d, d[0], rtol=1e-9, atol=1e-12):
        raise GridMismatch(f"{name} grid is not uniform")
    return float(d[0])


def _trapezoid_weights(n, h):
    w = np.full(n, h)
    if n == 1:
        return np.zeros(1)
    w[0] = w[-1] = 0.5 * h
    return w


def physical_spectrum(G, omega, Gamma=DEFAULT_GAMMA, t=None):
    """S0(omega; Gamma) at time t from a CorrelationGrid.

    The base times must start at 0 and share their spacing h with the lags;
    every (t2, tau) with t2 + tau <= t on that lattice must be present.
    """
    omega = np.asarray(omega, dtype=float)
    h = _uniform_step(G.t, "t")
    h_tau = _uniform_step(G.tau, "tau")
    if not math.isclose(h, h_tau, rel_tol=1e-9) or abs(G.t[0]) > 1e-12 or abs(G.tau[0]) > 1e-12:
        raise GridMismatch("t and tau grids must start at 0 with a common spacing")
    if t is None:
        t = float(min(G.t[-1], G.tau[-1]))
    n = int(round(t / h))
    if abs(n * h - t) > 1e-9 * max(1.0, t):
        raise GridMismatch(f"t = {t} is not on the grid of spacing {h}")
    if n >= G.tau.size or n >= G.t.size:
        raise GridMismatch(f"grid does not reach t = {t}")
    re = np.real(G.G[: n + 1, : n + 1])
    inner = np.zeros(n + 1)
    t2 = np.arange(n + 1) * h
    for j in range(n + 1):
        m = n - j  # t2 runs over 0..m
        if m == 0:
            continue
        vals = re[: m + 1, j]
        if not np.all(np.isfinite(vals)):
            raise GridMismatch(f"G is missing samples at tau = {j * h}")
        inner[j] = np.dot(_trapezoid_weights(m + 1, h) * np.exp(2.0 * Gamma * t2[: m + 1]), vals)
    tau = np.arange(n + 1) * h
    wt = _trapezoid_weights(n + 1, h) * np.exp(Gamma * tau) * inner
    S0 = np.exp(-1j * np.outer(omega, tau)) @ wt
    return SpectrumResult(omega, S0, float(Gamma), float(n * h))


def filtered_intensity(G, omega, Gamma=DEFAULT_GAMMA, t=None):
    """S(t, omega) straight from the double filter integral over [0, t]^2.

    G(t1, t2) with t2 < t1 comes from the hermitian extension
    conj(G(t2, t1)), so the result is real up to quadrature round-off.
    """
    omega = np.asarray(omega, dtype=float)
    h = _uniform_step(G.t, "t")
    if t is None:
        t = float(min(G.t[-1], G.tau[-1]))
    n = int(round(t / h))
    if n >= G.t.size or n >= G.tau.size:
        raise GridMismatch(f"grid does not reach t = {t}")
    full = np.zeros((n + 1, n + 1), dtype=complex)  # full[i, j] = G(t_i, t_j)
    for i in range(n + 1):
        row = G.G[i, : n + 1 - i]
        if not np.all(np.isfinite(row)):
            raise GridMismatch(f"G is missing samples at t = {i * h}")
        full[i, i:] = row
        full[i:, i] = np.conj(row)
    grid = np.arange(n + 1) * h
    w = _trapezoid_weights(n + 1, h)
    out = np.empty(omega.size, dtype=complex)
    for k, om in enumerate(omega):
        hv = w * Gamma * np.exp(-(Gamma + 1j * om) * (t - grid))
        out[k] = np.conj(hv) @ full @ hv
    return out


def local_maxima(omega, values, rel_prominence=DEFAULT_PROMINENCE):
    """Indices of local maxima whose prominence is at least ``rel_prominence`` of the top.

    A grid starting at omega = 0 is mirrored first (Re S0 is even), so a
    maximum sitting on zero frequency is found and prominences are measured
    across it.  The prominence floor drops the ripple of the finite window.
    """
    omega = np.asarray(omega, dtype=float)
    values = np.asarray(values, dtype=float)
    mirror = omega.size > 1 and omega[0] == 0.0
    full = np.concatenate([values[:0:-1], values]) if mirror else values
    top = np.max(np.abs(full)) if full.size else 0.0
    idx, _ = find_peaks(full, prominence=rel_prominence * top if top > 0 else None)
    if mirror:
        idx = idx[idx >= values.size - 1] - (values.size - 1)
    return np.asarray(idx, dtype=int)


def spectral_features(spec, rel_prominence=DEFAULT_PROMINENCE):
    """Frequencies and heights of the prominent local maxima of Re S0."""
    re = np.real(spec.S0)
    idx = local_maxima(spec.omega, re, rel_prominence)
    return spec.omega[idx], re[idx]


def nearest_multiples(freqs, g=1.0):
    """Nearest integer multiple of g for each feature, and the distance to it."""
    freqs = np.asarray(freqs, dtype=float)
    k = np.rint(freqs / g).astype(int)
    return k, np.abs(freqs - k * g)


def well_populations_from_peaks(omega_plus, omega_minus, g=1.0):
    """(n0, n1) = ((w+ + w-)/2g, (w+ - w-)/2g), taking n0 >= n1."""
    if omega_plus < omega_minus or omega_minus < 0:
        raise ValueError("need omega_plus >= omega_minus >= 0")
    n0 = (omega_plus + omega_minus) / (2.0 * g)
    n1 = (omega_plus - omega_minus) / (2.0 * g)
    for v in (n0, n1):
        if abs(v - round(v)) > 0.25:
            warnings.warn(f"inferred population {v:.3f} is not close to an integer",
                          NonIntegerWarning, stacklevel=2)
    return n0, n1


@dataclass
class EnvelopeFit:
    peaks_omega: np.ndarray
    peaks_value: np.ndarray
    omega: np.ndarray
    envelope: np.ndarray
    width: float
    crossings: tuple = field(default=(0.0, 0.0))


def _half_crossings(fn, grid, half, k):
    ev = fn(grid)
    below_l = np.flatnonzero(ev[:k] < half)
    below_r = np.flatnonzero(ev[k:] < half)
    if below_l.size == 0 or below_r.size == 0:
        raise TooFewPeaks("envelope does not fall to half maximum inside the peak range")
    i0 = below_l[-1]
    i1 = k + below_r[0]
    f = lambda x: float(fn(x)) - half  # noqa: E731
    return brentq(f, grid[i0], grid[i0 + 1], xtol=1e-12), brentq(f, grid[i1 - 1], grid[i1], xtol=1e-12)


def envelope_fwhm(omega, values, samples=2001, rel_prominence=DEFAULT_PROMINENCE):
    """FWHM of the monotone cubic envelope through the local maxima of Re S0.

    On a grid starting at zero frequency the maxima are mirrored to negative
    omega before interpolating (Re S0 is even), so a comb centred on zero has
    a smooth envelope through its middle.  A spectrum with a single maximum
    is its own envelope; the width is then read off the sampled line.
    """
    omega = np.asarray(omega, dtype=float)
    values = np.real(np.asarray(values))
    if omega.size != values.size:
        raise ValueError("omega and values differ in length")
    idx = local_maxima(omega, values, rel_prominence)
    if idx.size == 0:
        raise TooFewPeaks("no local maxima in the spectrum")
    px, py = omega[idx], values[idx]
    if omega[0] == 0.0:
        mirrored = px > 0
        xs = np.concatenate([-px[mirrored][::-1], px])
        ys = np.concatenate([py[mirrored][::-1], py])
        omega = np.concatenate([-omega[:0:-1], omega])
        values = np.concatenate([values[:0:-1], values])
    else:
        xs, ys = px, py
    if xs.size == 1:
        line = PchipInterpolator(omega, values, extrapolate=False)
        grid = np.linspace(omega[0], omega[-1], max(samples, 4 * omega.size))
        k = int(np.argmin(np.abs(grid - xs[0])))
        left, right = _half_crossings(line, grid, 0.5 * ys[0], k)
        return EnvelopeFit(px, py, grid, line(grid), right - left, (left, right))
    if xs.size < 3:
        raise TooFewPeaks(f"{xs.size} local maxima, need at least 3")
    env = PchipInterpolator(xs, ys, extrapolate=False)
    grid = np.linspace(xs[0], xs[-1], samples)
    ev = env(grid)
    k = int(np.argmax(ev))
    if ev[k] <= 0:
        raise TooFewPeaks("envelope maximum is not positive")
    left, right = _half_crossings(env, grid, 0.5 * ev[k], k)
    return EnvelopeFit(px, py, grid, ev, right - left, (left, right))


def number_uncertainty(N):
    """Standard deviation of the binomial(N, 1/2) well population."""
    if N < 1:
        raise ValueError("N must be at least 1")
    m = np.arange(N + 1)
    logb = (
        np.array([math.lgamma(N + 1) - math.lgamma(k + 1) - math.lgamma(N - k + 1) for k in m])
        - N * math.log(2.0)
    )
    b2 = np.exp(logb)
    mean = np.dot(m, b2)
    return float(np.sqrt(np.dot((m - mean) ** 2, b2)))


def fit_line(points):
    """Least-squares line through (x, y) points: (slope, intercept, R^2)."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise DegenerateInput("points must be (x, y) pairs")
    x, y = pts[:, 0], pts[:, 1]
    if np.unique(x).size < 2:
        raise DegenerateInput("need at least two distinct abscissae")
    A = np.column_stack([x, np.ones_like(x)])
    (slope, intercept), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - (slope * x + intercept)
    ss_tot = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 if ss_tot == 0 else 1.0 - np.sum(resid ** 2) / ss_tot
    return float(slope), float(intercept), float(r2)
