"""MCWF trajectory driver, counter-based random streams and ensemble runs."""

from __future__ import annotations

import functools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .branch import MAX_JUMP_PROB, BranchEngine
from .dense import DenseEngine
from .errors import StepTooLarge

CHUNK = 25


def uniform_stream(seed, key, n):
    """``n`` uniforms from a Philox stream keyed by (seed, *key).

    Streams depend only on the key, never on scheduling or worker count.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss)).random(n)


def stream_block(seed, keys, n):
    return np.array([uniform_stream(seed, k, n) for k in keys]).reshape(len(keys), n)


@functools.lru_cache(maxsize=4)
def make_engine(kind, state, params, n_steps=None):
    if kind == "branch":
        return BranchEngine(state, params, n_steps=n_steps)
    if kind == "dense":
        return DenseEngine(state, params)
    raise ValueError(f"unknown engine {kind!r}")


@dataclass
class TrajectoryRecord:
    seed: int
    t_g: np.ndarray
    n_mk: np.ndarray
    n_k: np.ndarray
    jumps: list = field(default_factory=list)  # (g*t, channel) with channel 1 = +k, 2 = -k
    snapshots: dict = field(default_factory=dict)


@dataclass
class EvolveResult:
    state: object
    record_steps: list
    n_k: np.ndarray  # (records, batch)
    n_mk: np.ndarray
    jumps: list  # (step, batch index, channel)
    observed: dict  # step -> observer output
    snapshots: dict  # step -> engine state


def evolve(engine, state, start, stop, uniforms, record_every=0, observe=None,
           observe_steps=(), snapshot_steps=(), stepwise=False):
    """Run a normalized batch from step ``start`` to ``stop``.

    Each step draws one uniform per trajectory and compares it with the
    cumulative jump probabilities 2*gamma*dt*<n_k>, 2*gamma*dt*<n_-k>.  A
    jump is applied before the step's non-hermitian propagation.

    The branch engine takes an event-driven shortcut to the same result
    unless ``stepwise`` is set; observers other than ``a_mk`` force stepping.
    """
    fast = hasattr(engine, "run") and not stepwise
    if fast and (observe is None or observe == engine.a_mk):
        rec = [n for n in range(start, stop + 1) if record_every and n % record_every == 0]
        final, n_k, n_mk, jumps, observed, snaps = engine.run(
            state, start, stop, uniforms, rec, observe_steps if observe else (), snapshot_steps)
        return EvolveResult(final, rec, n_k, n_mk, jumps, observed, snaps)
    p = engine.params
    rate = 2.0 * p.gamma_abs * p.dt_abs
    observe_steps = set(observe_steps)
    snapshot_steps = set(snapshot_steps)
    rec_steps, rec_k, rec_mk, jumps, observed, snaps = [], [], [], [], {}, {}

    def bookkeeping(st, n, nk, nmk, nrm):
        if record_every and n % record_every == 0:
            rec_steps.append(n)
            rec_k.append(nk / nrm)
            rec_mk.append(nmk / nrm)
        if n in observe_steps:
            observed[n] = observe(st, n)
        if n in snapshot_steps:
            snaps[n] = st

    for n in range(start, stop + 1):
        nk, nmk, nrm = engine.populations(state, n)
        # renormalize at the top of each step; the populations rescale with it
        state = engine.scale(state, 1.0 / np.sqrt(nrm))
        nk, nmk = nk / nrm, nmk / nrm
        bookkeeping(state, n, nk, nmk, 1.0)
        if n == stop:
            break
        if rate:
            dp1 = rate * nk
            dp2 = rate * nmk
            worst = max(float(dp1.max()), float(dp2.max()))
            if worst >= MAX_JUMP_PROB:
                raise StepTooLarge(f"jump probability {worst:.3g} per step at g*t={n * p.dt:.4g}")
            u = uniforms[:, n - start]
            j1 = u < dp1
            j2 = ~j1 & (u < dp1 + dp2)
            if j1.any():
                state = engine.where(j1, engine.jump(state, 0, n), state)
                jumps.extend((n, int(b), 1) for b in np.flatnonzero(j1))
            if j2.any():
                state = engine.where(j2, engine.jump(state, 1, n), state)
                jumps.extend((n, int(b), 2) for b in np.flatnonzero(j2))
        state = engine.propagate(state, n)
        state = engine.maintain(state, n + 1)
    shape = (len(rec_steps), engine.batch_size(state))
    return EvolveResult(
        state,
        rec_steps,
        np.array(rec_k).reshape(shape),
        np.array(rec_mk).reshape(shape),
        jumps,
        observed,
        snaps,
    )


def steps_for_times(times, dt, what="time"):
    """Map times (units of 1/g) to integer step indices, insisting on alignment."""
    times = np.atleast_1d(np.asarray(times, dtype=float))
    steps = np.rint(times / dt).astype(int)
    if np.any(np.abs(steps * dt - times) > 1e-9 * np.maximum(1.0, np.abs(times))):
        raise ValueError(f"{what} grid is not aligned with dt={dt}")
    return steps


def map_chunks(fn, tasks, workers=1):
    """Ordered map over tasks, optionally across processes."""
    if workers is None or workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))


def chunk_indices(n, size=CHUNK):
    return [list(range(i, min(n, i + size))) for i in range(0, n, size)]


# --- reflected intensity ----------------------------------------------------------


def _intensity_chunk(task):
    kind, state, params, seed, idx, record_every, snapshot_steps = task
    engine = make_engine(kind, state, params)
    n = params.n_steps
    uniforms = stream_block(seed, [(i, 0) for i in idx], n)
    st = engine.initial(len(idx))
    res = evolve(engine, st, 0, n, uniforms, record_every=record_every, snapshot_steps=snapshot_steps)
    snaps = {k: engine.to_kets(v, k) for k, v in res.snapshots.items()}
    return res.record_steps, res.n_mk, res.n_k, res.jumps, snaps


@dataclass
class IntensityResult:
    t_g: np.ndarray
    mean_n_mk: np.ndarray
    stderr: np.ndarray
    mean_n_k: np.ndarray
    records: list


def reflected_intensity(engine, state, params, n_traj, seed, record_every=None,
                        snapshot_times=(), workers=1):
    """Trajectory mean and standard error of <n_-k>(t)."""
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    if record_every is None:
        record_every = max(1, int(round(0.01 / params.dt)))
    snap_steps = tuple(int(s) for s in steps_for_times(snapshot_times, params.dt, "snapshot")) if len(snapshot_times) else ()
    chunks = chunk_indices(n_traj)
    tasks = [(engine, state, params, seed, idx, record_every, snap_steps) for idx in chunks]
    outs = map_chunks(_intensity_chunk, tasks, workers)
    steps = np.array(outs[0][0])
    t_g = steps * params.dt
    n_mk = np.concatenate([o[1] for o in outs], axis=1)
    n_k = np.concatenate([o[2] for o in outs], axis=1)
    records = []
    for idx, o in zip(chunks, outs):
        for b, i in enumerate(idx):
            jumps = [(step * params.dt, ch) for step, bb, ch in o[3] if bb == b]
            snaps = {k * params.dt: v[b] for k, v in o[4].items()}
            records.append(TrajectoryRecord(i, t_g, n_mk[:, i], n_k[:, i], jumps, snaps))
    mean = n_mk.mean(axis=1)
    stderr = n_mk.std(axis=1, ddof=1) / math.sqrt(n_traj) if n_traj > 1 else np.zeros_like(mean)
    return IntensityResult(t_g, mean, stderr, n_k.mean(axis=1), records)
