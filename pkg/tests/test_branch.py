import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from braggcav.branch import BranchEngine, BranchState, amplitude_table, branch_ode_rhs, branch_to_dense
from braggcav.dense import DenseEngine, build_mode_operators
from braggcav.ensemble import evolve, stream_block
from braggcav.errors import TruncationTooSmall
from braggcav.model import QUARTER_WAVE, CoherentProduct, Mott, NumberConserving, SectorArrays, SimParams, sector_list


def _table(state, **kw):
    p = SimParams(**kw)
    sa = SectorArrays.from_sectors(sector_list(state, p))
    return p, sa, amplitude_table(sa, p, p.n_steps)


def test_closed_form_amplitudes():
    p, sa, (ak, amk, _) = _table(Mott(6, 2), separation_phase=QUARTER_WAVE, t_max=2 * math.pi)
    t = np.arange(p.n_steps + 1) * p.dt
    np.testing.assert_allclose(np.abs(amk[:, 0]) ** 2, 2.0 * np.sin(4 * t) ** 2, atol=1e-9)
    np.testing.assert_allclose(np.abs(ak[:, 0]) ** 2 + np.abs(amk[:, 0]) ** 2, 2.0, atol=1e-9)


def test_damping_scales_closed_solution():
    _, _, (ak0, amk0, _) = _table(NumberConserving(4), t_max=2.0)
    p, _, (ak, amk, _) = _table(NumberConserving(4), gamma=0.6, t_max=2.0)
    decay = np.exp(-0.6 * np.arange(p.n_steps + 1) * p.dt)[:, None]
    np.testing.assert_allclose(ak, ak0 * decay, atol=1e-10)
    np.testing.assert_allclose(amk, amk0 * decay, atol=1e-10)


def test_rhs_matches_heff():
    # d/dt of the Bargmann form against -i H_eff applied to the expanded ket
    p = SimParams(eta=0.8, gamma=0.3, cutoff=20)
    secs = sector_list(Mott(3, 1), p)
    b = BranchState(np.array([0.4 + 0.1j]), np.array([0.6 - 0.2j]), np.array([0.1 + 0.5j]), secs)
    t = 0.37
    dmu, dak, damk = branch_ode_rhs(b, p, t)
    h = 1e-6
    fwd = BranchState(b.mu + h * dmu, b.ak + h * dak, b.amk + h * damk, secs)
    bwd = BranchState(b.mu - h * dmu, b.ak - h * dak, b.amk - h * damk, secs)
    deriv = (branch_to_dense(fwd, 20) - branch_to_dense(bwd, 20)).reshape(-1) / (2 * h)
    eng = DenseEngine(Mott(3, 1), p)
    psi = branch_to_dense(b, 20)[None]
    np.testing.assert_allclose(deriv, eng._deriv(psi, t).reshape(-1), atol=1e-7)


def test_jump_keeps_amplitudes():
    p = SimParams(eta=1.5, gamma=0.9, t_max=1.0)
    eng = BranchEngine(NumberConserving(4), p)
    st0 = eng.initial(2)
    j = eng.jump(st0, 1, 10)
    a = eng.branch_state(j, 0, 10)
    np.testing.assert_array_equal(a.ak, eng.ak[10])
    np.testing.assert_allclose(j.mu, st0.mu * math.sqrt(1.8) * eng.amk[10])


def test_branch_to_dense_roundtrip():
    p = SimParams(cutoff=20)
    vac = BranchState(np.array([1.0 + 0j]), np.array([0j]), np.array([0j]), sector_list(Mott(1, 1), p))
    d = branch_to_dense(vac, 3)
    assert d[0, 0, 0] == 1 and np.count_nonzero(d) == 1
    eng = BranchEngine(NumberConserving(4), SimParams(eta=1.5, gamma=0.9, t_max=1.0))
    b = eng.branch_state(eng.initial(1), 0, 700)
    psi = branch_to_dense(b, 20)
    _, amk_op = build_mode_operators(20)
    v = psi.reshape(psi.shape[0], -1)
    nmk = np.real(np.einsum("si,ij,sj->", v.conj(), amk_op.conj().T @ amk_op, v))
    norm = np.sum(np.abs(v) ** 2)
    assert abs(norm - b.branch_norm2().sum()) < 1e-8
    assert abs(nmk / norm - b.mean_n_mk()) < 1e-8
    with pytest.raises(TruncationTooSmall):
        branch_to_dense(b, 4)


@pytest.mark.parametrize("state,t_max", [(Mott(6, 2), 1.0), (NumberConserving(4), 1.0), (CoherentProduct(0.7, 0.7), 0.4)])
def test_engine_equivalence_short(state, t_max):
    p = SimParams(eta=1.5, gamma=0.9, t_max=t_max, separation_phase=QUARTER_WAVE)
    u = stream_block(11, [(i, 0) for i in range(4)], p.n_steps)
    out = []
    for eng in (BranchEngine(state, p), DenseEngine(state, p)):
        res = evolve(eng, eng.initial(4), 0, p.n_steps, u, record_every=20, stepwise=True)
        out.append(res)
    assert [j[:2] for j in out[0].jumps] == [j[:2] for j in out[1].jumps]
    np.testing.assert_allclose(out[0].n_mk, out[1].n_mk, atol=1e-6)


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 2 ** 32), st.sampled_from([Mott(3, 1), NumberConserving(5), CoherentProduct(1, 0.5)]))
def test_fast_path_equals_stepwise(seed, state):
    p = SimParams(eta=1.5, gamma=0.9, t_max=1.5)
    eng = BranchEngine(state, p)
    u = stream_block(seed, [(i, 0) for i in range(3)], p.n_steps)
    kw = dict(record_every=50, observe=eng.a_mk, observe_steps=[0, 333, 1500], snapshot_steps=[700])
    a = evolve(eng, eng.initial(3), 0, p.n_steps, u, **kw)
    b = evolve(eng, eng.initial(3), 0, p.n_steps, u, stepwise=True, **kw)
    assert a.jumps == sorted(b.jumps, key=lambda e: (e[0], e[2], e[1]))
    np.testing.assert_allclose(a.n_mk, b.n_mk, atol=1e-13)
    np.testing.assert_allclose(a.state.mu, b.state.mu, atol=1e-13)
    np.testing.assert_allclose(a.snapshots[700].mu, b.snapshots[700].mu, atol=1e-13)
    for k in kw["observe_steps"]:
        np.testing.assert_allclose(a.observed[k], b.observed[k], atol=1e-13)


def test_closed_system_populations_constant():
    p = SimParams(t_max=2.0)
    eng = BranchEngine(NumberConserving(6), p)
    st0 = eng.initial(1)
    w0 = eng.branch_state(st0, 0, 0).probabilities()
    res = evolve(eng, st0, 0, p.n_steps, np.ones((1, p.n_steps)))
    w1 = eng.branch_state(res.state, 0, p.n_steps).probabilities()
    np.testing.assert_allclose(w0, w1, atol=1e-12)


def test_undriven_norm_decays_between_jumps():
    p = SimParams(gamma=0.5, t_max=1.0)
    eng = BranchEngine(NumberConserving(3), p)
    st0 = eng.initial(1)
    norms = []
    for n in range(0, p.n_steps, 50):
        norms.append(eng.norm2(st0, n)[0])
        for k in range(n, n + 50):
            st0 = eng.propagate(st0, k)
    assert np.all(np.diff(norms) < 0)
