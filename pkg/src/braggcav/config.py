"""Run configuration: one JSON document per experiment, validated strictly."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

from .errors import ParseError, TruncationTooSmall, ValidationError
from .model import SEPARATION_PRESETS, CoherentProduct, Mott, NumberConserving, SimParams
from .spectrum import DEFAULT_GAMMA, DEFAULT_POINTS

ENGINES = ("dense", "branch", "both")
EXPERIMENTS = ("intensity", "correlate", "spectrum", "fwhm-scan", "negativity", "oracle-check")
PARAM_KEYS = {"eta", "gamma", "separation", "alpha0", "cutoff", "dt", "t_max"}
TOP_KEYS = {"params", "atomic_state", "engine", "experiment", "n_traj", "n_traj_tau", "seed",
            "omega_max", "omega_points", "Gamma", "output_dir", "description"}
STATE_KEYS = {"Mott": {"n0", "n1"}, "NumberConserving": {"N"}, "CoherentProduct": {"a0", "a1", "nmax"}}


@dataclass
class RunConfig:
    params: SimParams
    atomic_state: object
    experiment: str
    seed: int
    engine: str = "branch"
    n_traj: int = 1
    n_traj_tau: int = 1
    omega_max: float | None = None
    omega_points: int = DEFAULT_POINTS
    Gamma: float = DEFAULT_GAMMA
    output_dir: str = "out"
    description: str = ""
    source: dict = field(default_factory=dict, repr=False)


def _number(v, path, integer=False, minimum=None):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ValidationError(path, f"expected a number, got {v!r}")
    if integer and (not isinstance(v, int) and not float(v).is_integer()):
        raise ValidationError(path, f"expected an integer, got {v!r}")
    if not math.isfinite(v):
        raise ValidationError(path, "must be finite")
    if minimum is not None and v < minimum:
        raise ValidationError(path, f"must be >= {minimum}, got {v!r}")
    return int(v) if integer else float(v)


def _complex(v, path):
    if isinstance(v, list):
        if len(v) != 2:
            raise ValidationError(path, "complex values are [re, im]")
        return complex(_number(v[0], path + "[0]"), _number(v[1], path + "[1]"))
    return complex(_number(v, path))


def _unknown(d, allowed, path):
    extra = sorted(set(d) - set(allowed))
    if extra:
        raise ValidationError(f"{path}.{extra[0]}" if path else extra[0], "unknown key")


def _params(d):
    if not isinstance(d, dict):
        raise ValidationError("params", "expected an object")
    _unknown(d, PARAM_KEYS, "params")
    kw = {}
    for k in ("eta", "gamma"):
        if k in d:
            kw[k] = _number(d[k], f"params.{k}", minimum=0.0)
    if "separation" in d:
        s = d["separation"]
        if isinstance(s, str):
            if s not in SEPARATION_PRESETS:
                raise ValidationError("params.separation", f"unknown separation {s!r}")
            kw["separation_phase"] = SEPARATION_PRESETS[s]
        else:
            kw["separation_phase"] = _number(s, "params.separation")
    if "alpha0" in d:
        kw["alpha0"] = _complex(d["alpha0"], "params.alpha0")
    if "cutoff" in d:
        kw["cutoff"] = _number(d["cutoff"], "params.cutoff", integer=True, minimum=1)
    for k in ("dt", "t_max"):
        if k in d:
            kw[k] = _number(d[k], f"params.{k}")
            if kw[k] <= 0:
                raise ValidationError(f"params.{k}", "must be positive")
    try:
        return SimParams(**kw)
    except TruncationTooSmall as exc:
        raise ValidationError("params.cutoff", str(exc)) from exc
    except ValueError as exc:
        raise ValidationError("params", str(exc)) from exc


def _state(d):
    if not isinstance(d, dict) or "kind" not in d:
        raise ValidationError("atomic_state", "expected an object with a 'kind'")
    kind = d["kind"]
    if kind not in STATE_KEYS:
        raise ValidationError("atomic_state.kind", f"unknown kind {kind!r}")
    _unknown(d, STATE_KEYS[kind] | {"kind"}, "atomic_state")
    for k in STATE_KEYS[kind] - {"nmax"}:
        if k not in d:
            raise ValidationError(f"atomic_state.{k}", "missing")
    try:
        if kind == "Mott":
            return Mott(_number(d["n0"], "atomic_state.n0", True, 0), _number(d["n1"], "atomic_state.n1", True, 0))
        if kind == "NumberConserving":
            return NumberConserving(_number(d["N"], "atomic_state.N", True, 0))
        nmax = d.get("nmax")
        nmax = None if nmax is None else _number(nmax, "atomic_state.nmax", True, 0)
        return CoherentProduct(_complex(d["a0"], "atomic_state.a0"), _complex(d["a1"], "atomic_state.a1"), nmax)
    except ValueError as exc:
        raise ValidationError("atomic_state", str(exc)) from exc


def config_from_dict(d):
    if not isinstance(d, dict):
        raise ValidationError("", "config must be a JSON object")
    _unknown(d, TOP_KEYS, "")
    for k in ("params", "atomic_state", "experiment", "seed"):
        if k not in d:
            raise ValidationError(k, "missing")
    seed = d["seed"]
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2 ** 64:
        raise ValidationError("seed", "must be an unsigned 64-bit integer")
    exp = d["experiment"]
    if exp not in EXPERIMENTS:
        raise ValidationError("experiment", f"unknown experiment {exp!r}")
    engine = d.get("engine", "branch")
    if engine not in ENGINES:
        raise ValidationError("engine", f"unknown engine {engine!r}")
    cfg = RunConfig(
        params=_params(d["params"]),
        atomic_state=_state(d["atomic_state"]),
        experiment=exp,
        seed=seed,
        engine=engine,
        n_traj=_number(d.get("n_traj", 1), "n_traj", True, 1),
        n_traj_tau=_number(d.get("n_traj_tau", 1), "n_traj_tau", True, 1),
        omega_max=None if d.get("omega_max") is None else _number(d["omega_max"], "omega_max", minimum=0.0),
        omega_points=_number(d.get("omega_points", DEFAULT_POINTS), "omega_points", True, 2),
        Gamma=_number(d.get("Gamma", DEFAULT_GAMMA), "Gamma", minimum=0.0),
        output_dir=str(d.get("output_dir", "out")),
        description=str(d.get("description", "")),
        source=d,
    )
    if exp == "fwhm-scan" and not isinstance(cfg.atomic_state, NumberConserving):
        raise ValidationError("atomic_state.kind", "fwhm-scan needs NumberConserving")
    if cfg.omega_max == 0.0:
        raise ValidationError("omega_max", "must be positive")
    return cfg


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return config_from_dict(d)


def preset_names():
    names = [p.name[:-5] for p in resources.files("braggcav.presets").iterdir() if p.name.endswith(".json")]
    return sorted(names, key=lambda s: (int("".join(c for c in s if c.isdigit()) or 0), s))


def preset_path(name):
    p = resources.files("braggcav.presets") / f"{name}.json"
    if not p.is_file():
        raise ParseError(f"unknown preset {name!r}")
    return Path(str(p))


def load_preset(name):
    return load_config(preset_path(name))


def params_dict(params):
    d = asdict(params)
    d["alpha0"] = [params.alpha0.real, params.alpha0.imag] if isinstance(params.alpha0, complex) else params.alpha0
    return d
