import cmath

import numpy as np
import pytest

from braggcav.correlation import (
    ensemble_limit_correlation,
    ensemble_limit_intensity,
    qrt_oracle,
    qrt_oracle_grid,
    two_time_correlation,
)
from braggcav.dense import lindblad_intensity
from braggcav.ensemble import reflected_intensity, uniform_stream
from braggcav.model import HALF_WAVE, QUARTER_WAVE, Mott, NumberConserving, SimParams

FIG2 = dict(eta=1.5, gamma=0.9, t_max=2.0)
FIG5 = dict(eta=0.1, gamma=0.5, separation_phase=QUARTER_WAVE)


def test_streams_keyed_not_scheduled():
    a = uniform_stream(5, (3, 0), 10)
    b = uniform_stream(5, (3, 0), 10)
    c = uniform_stream(5, (4, 0), 10)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_equal_wells_quarter_wave_is_dark():
    p = SimParams(separation_phase=QUARTER_WAVE, **FIG2)
    res = reflected_intensity("branch", Mott(3, 3), p, 5, seed=1)
    assert np.all(res.mean_n_mk == 0)


def test_mott_zero_variance_and_closed_form():
    p = SimParams(separation_phase=HALF_WAVE, **FIG2)
    res = reflected_intensity("branch", Mott(3, 3), p, 20, seed=2)
    assert np.max(res.stderr) < 1e-12
    np.testing.assert_allclose(res.mean_n_mk, ensemble_limit_intensity(Mott(3, 3), p, res.t_g), atol=1e-12)
    assert np.ptp(res.mean_n_mk) > 0.1


def test_intensity_independent_of_workers():
    p = SimParams(separation_phase=QUARTER_WAVE, **FIG2)
    a = reflected_intensity("branch", NumberConserving(4), p, 30, seed=9, workers=1)
    b = reflected_intensity("branch", NumberConserving(4), p, 30, seed=9, workers=2)
    np.testing.assert_array_equal(a.mean_n_mk, b.mean_n_mk)


def test_intensity_invariant_under_phase_of_alpha_without_pump():
    # the pump fixes the phase reference, so the symmetry needs eta = 0
    p = SimParams(gamma=0.9, t_max=2.0, separation_phase=QUARTER_WAVE)
    q = p.replace(alpha0=p.alpha0 * cmath.exp(0.7j))
    a = reflected_intensity("branch", NumberConserving(4), p, 30, seed=9)
    c = reflected_intensity("branch", NumberConserving(4), q, 30, seed=9)
    np.testing.assert_allclose(a.mean_n_mk, c.mean_n_mk, atol=1e-12)


def test_records_and_jumps():
    p = SimParams(separation_phase=QUARTER_WAVE, **FIG2)
    res = reflected_intensity("branch", NumberConserving(4), p, 3, seed=4)
    for r in res.records:
        times = [t for t, _ in r.jumps]
        assert all(np.diff(times) >= 0)
        assert np.all(r.n_mk >= 0)


def test_intensity_consistent_with_lindblad():
    p = SimParams(separation_phase=QUARTER_WAVE, **FIG2)
    res = reflected_intensity("branch", NumberConserving(4), p, 300, seed=12, record_every=200)
    ref, _ = lindblad_intensity(NumberConserving(4), p, res.t_g)
    se = np.maximum(res.stderr, 1e-9)
    assert np.all(np.abs(res.mean_n_mk - ref) <= 3 * se + 1e-9)


def test_ensemble_limit_diagonal_is_intensity():
    p = SimParams(separation_phase=QUARTER_WAVE, **FIG2)
    t = np.linspace(0, 2, 9)
    G = ensemble_limit_correlation(NumberConserving(4), p, t, [0.0])
    np.testing.assert_allclose(G.G[:, 0].real, ensemble_limit_intensity(NumberConserving(4), p, t), atol=1e-13)
    assert np.all(np.abs(G.G[:, 0].imag) < 1e-15)


def test_oracle_tau_zero_and_closed_form():
    p = SimParams(separation_phase=QUARTER_WAVE, t_max=2.0, cutoff=16)
    taus = np.linspace(0, 1.0, 6)
    g = qrt_oracle(Mott(6, 2), p, 0.4, taus)
    expect = 2.0 * np.abs(np.sin(4 * 0.4)) * np.abs(np.sin(4 * (0.4 + taus)))
    np.testing.assert_allclose(np.abs(g), expect, atol=1e-6)
    q = SimParams(**FIG5, t_max=2.0)
    g0 = qrt_oracle(NumberConserving(3), q, 0.7, [0.0])
    assert abs(g0[0] - ensemble_limit_intensity(NumberConserving(3), q, [0.7])[0]) < 1e-7


def test_mott_estimator_exact_with_one_trajectory():
    p = SimParams(**FIG5, t_max=2.0)
    t = [0.0, 0.5, 1.0]
    tau = [0.0, 0.25, 0.5, 1.0]
    G = two_time_correlation(Mott(6, 2), p, t, tau, 1, 1, seed=3)
    ref = qrt_oracle_grid(Mott(6, 2), p, t, tau).G
    ok = np.isfinite(ref.real)
    np.testing.assert_allclose(G.G[ok], ref[ok], atol=1e-6)


def test_estimator_within_three_sigma():
    p = SimParams(**FIG5, t_max=1.5)
    t = [0.0, 0.5, 1.0]
    tau = [0.0, 0.25, 0.5]
    G = two_time_correlation(NumberConserving(4), p, t, tau, 40, 3, seed=21)
    ref = qrt_oracle_grid(NumberConserving(4), p, t, tau).G
    ok = np.isfinite(ref.real)
    assert np.all(np.abs(G.G - ref)[ok] <= 3 * G.stderr[ok] + 1e-6)


def test_correlation_rejects_bad_grids():
    p = SimParams(**FIG5, t_max=1.0)
    with pytest.raises(ValueError):
        two_time_correlation(Mott(2, 1), p, [0.0], [-0.1], 1, 1, seed=0)
    with pytest.raises(ValueError):
        two_time_correlation(Mott(2, 1), p, [0.00051], [0.0], 1, 1, seed=0)
