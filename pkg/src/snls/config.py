"""Flat ``section.key = value`` run configuration.

Grammar, one statement per line::

    # comment (a line starting with '#'; blank lines are ignored)
    section.key = <value>

``<value>`` is a JSON literal (number, ``true``/``false``, ``null``,
double-quoted string, list or object).  A bare word matching
``[A-Za-z_][A-Za-z0-9_.-]*`` is read as a string, so ``sim.solver = spde``
works.  Keys must appear in :data:`DEFAULTS`; anything else is an error, as is
a repeated key.  Command-line overrides use the same value syntax.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
import re
from dataclasses import dataclass
from typing import Any, Iterable, Optional

import numpy as np

from .dynamics import SimConfig
from .grid import GridSpec
from .noise import NoiseSpec
from .observables import AnalysisConstants, strichartz_exponents

EXPERIMENTS = ("simulate", "sweep", "verify", "h-tail", "predict")
INITIAL_KINDS = ("gaussian", "sech", "plane_wave")

DEFAULTS: dict[str, Any] = {
    "experiment": "simulate",
    "master_seed": 7,
    "output_dir": "snls_out",
    "grid.dim": 1,
    "grid.half_width": 8.0,
    "grid.points_per_dim": 512,
    "sim.lam": 1,
    "sim.alpha": 5.0,
    "sim.horizon": 1.0,
    "sim.dt": 0.001,
    "sim.solver": "spde",
    "sim.blow_up_grad_factor": 10000.0,
    "sim.blow_up_amp_factor": 1000.0,
    "sim.diagnostics_stride": 10,
    "initial.kind": "gaussian",
    "initial.amplitude": 1.5,
    "initial.width": 1.0,
    "initial.center": [],
    "initial.phase_k": [],
    "initial.chirp": 0.0,
    "initial.wave_index": [1],
    "noise.modes": [
        {"mu_re": 1.0, "mu_im": 0.0, "profile": {"kind": "constant", "amplitude": 0.0, "width": 1.0, "center": []}, "offset": 1.0}
    ],
    "noise.ito_half_correction": True,
    "analysis.strichartz_C": 1.0,
    "analysis.sobolev_D": 1.0,
    "analysis.v_exponent": None,
    "montecarlo.n_paths": 100,
    "montecarlo.c1_values": [0.0, 1.0, 2.0, 4.0, 8.0],
    "montecarlo.mode_index": 0,
    "montecarlo.common_random_numbers": True,
    "montecarlo.t_samples": [],
    "montecarlo.gate_assumption": False,
    "montecarlo.workers": None,
    "htail.c": 0.5,
    "htail.c1_values": [1.0, 2.0, 4.0, 8.0],
    "htail.horizon": 5.0,
    "htail.n_paths": 10000,
    "predict.a_values": [0.0],
    "predict.a_mu_power": 2,
    "verify.criteria": [],
}

_BARE = re.compile(r"[A-Za-z_][A-Za-z0-9_.\-]*$")
_KEY = re.compile(r"[A-Za-z_][A-Za-z0-9_]*(\.[A-Za-z_][A-Za-z0-9_]*)*$")


class ConfigError(ValueError):
    pass


def parse_value(text: str) -> Any:
    text = text.strip()
    if not text:
        raise ConfigError("missing value")
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        if _BARE.match(text) and text not in ("true", "false", "null"):
            return text
        raise ConfigError(f"cannot parse value {text!r}") from None


def parse_text(text: str, source: str = "<config>") -> dict[str, Any]:
    """Parse config text into a ``{dotted_key: value}`` dict (no defaults applied)."""
    out: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        key = key.strip()
        if not _KEY.match(key):
            raise ConfigError(f"{source}:{lineno}: malformed key {key!r}")
        if key not in DEFAULTS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        try:
            out[key] = parse_value(value)
        except ConfigError as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from None
    return out


def apply_overrides(values: dict[str, Any], overrides: Iterable[str]) -> dict[str, Any]:
    """Apply ``key=value`` strings (leading ``--`` optional)."""
    out = dict(values)
    for item in overrides:
        s = item[2:] if item.startswith("--") else item
        if "=" not in s:
            raise ConfigError(f"override {item!r} must look like --key=value")
        key, value = s.split("=", 1)
        key = key.strip()
        if key not in DEFAULTS:
            raise ConfigError(f"unknown key {key!r}")
        out[key] = parse_value(value)
    return out


def with_defaults(values: dict[str, Any]) -> dict[str, Any]:
    full = copy.deepcopy(DEFAULTS)
    full.update(values)
    return full


def _format_value(v: Any) -> str:
    if isinstance(v, float) and not math.isfinite(v):
        raise ConfigError("config values must be finite")
    return json.dumps(v, sort_keys=True, separators=(", ", ": "))


def serialize(values: dict[str, Any]) -> str:
    """Canonical text: keys sorted, values as JSON."""
    return "".join(f"{k} = {_format_value(values[k])}\n" for k in sorted(values))


def config_hash(values: dict[str, Any]) -> str:
    return hashlib.sha256(serialize(values).encode()).hexdigest()


def default_text() -> str:
    return serialize(DEFAULTS)


# ---------------------------------------------------------------------------
# Typed view
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RunConfig:
    experiment: str
    values: dict
    grid: GridSpec
    sim: SimConfig
    noise: NoiseSpec
    analysis: AnalysisConstants
    master_seed: int
    output_dir: str

    def x0(self) -> np.ndarray:
        return initial_condition(self.values, self.grid)


def _number(values, key, kind=float):
    v = values[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{key} must be a number")
    if kind is int:
        if isinstance(v, float) and not v.is_integer():
            raise ConfigError(f"{key} must be an integer")
        return int(v)
    return float(v)


def _float_list(values, key) -> list[float]:
    v = values[key]
    if not isinstance(v, list) or any(isinstance(x, bool) or not isinstance(x, (int, float)) for x in v):
        raise ConfigError(f"{key} must be a list of numbers")
    return [float(x) for x in v]


def _per_dim(values, key, dim, fill) -> list[float]:
    v = _float_list(values, key)
    if not v:
        return [fill] * dim
    if len(v) != dim:
        raise ConfigError(f"{key} needs {dim} entries")
    return v


def initial_condition(values: dict, grid: GridSpec) -> np.ndarray:
    kind = values["initial.kind"]
    if kind not in INITIAL_KINDS:
        raise ConfigError(f"initial.kind must be one of {INITIAL_KINDS}")
    amp = _number(values, "initial.amplitude")
    xs = grid.coordinates()
    if kind == "plane_wave":
        m = _per_dim(values, "initial.wave_index", grid.dim, 1.0)
        if any(not float(q).is_integer() for q in m):
            raise ConfigError("initial.wave_index entries must be integers")
        phase = sum(np.pi * q / grid.half_width * x for q, x in zip(m, xs))
        return amp * np.exp(1j * phase)
    width = _number(values, "initial.width")
    if not width > 0:
        raise ConfigError("initial.width must be positive")
    center = _per_dim(values, "initial.center", grid.dim, 0.0)
    r2 = sum((x - c) ** 2 for x, c in zip(xs, center))
    if kind == "sech":
        return (amp / np.cosh(np.sqrt(r2) / width)).astype(complex)
    k = _per_dim(values, "initial.phase_k", grid.dim, 0.0)
    chirp = _number(values, "initial.chirp")
    phase = sum(kj * x for kj, x in zip(k, xs)) + chirp * r2
    return amp * np.exp(-r2 / (2.0 * width ** 2)) * np.exp(1j * phase)


def build(values: dict[str, Any]) -> RunConfig:
    """Validate a full value dict and build the typed objects (errors are ConfigError)."""
    values = with_defaults(values)
    unknown = set(values) - set(DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown key {sorted(unknown)[0]!r}")
    exp = values["experiment"]
    if exp not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {EXPERIMENTS}")
    try:
        grid = GridSpec(
            _number(values, "grid.dim", int),
            _number(values, "grid.half_width"),
            _number(values, "grid.points_per_dim", int),
        )
        sim = SimConfig(
            lam=_number(values, "sim.lam", int),
            alpha=_number(values, "sim.alpha"),
            horizon=_number(values, "sim.horizon"),
            dt=_number(values, "sim.dt"),
            solver=str(values["sim.solver"]),
            blow_up_grad_factor=_number(values, "sim.blow_up_grad_factor"),
            blow_up_amp_factor=_number(values, "sim.blow_up_amp_factor"),
            diagnostics_stride=_number(values, "sim.diagnostics_stride", int),
        )
        if not isinstance(values["noise.modes"], list):
            raise ConfigError("noise.modes must be a list")
        noise = NoiseSpec.from_dict(
            {"modes": values["noise.modes"], "ito_half_correction": bool(values["noise.ito_half_correction"])}
        )
        for m in noise.modes:
            m.e_values(grid)
        v = values["analysis.v_exponent"]
        if v is None:
            v = strichartz_exponents(sim.alpha, grid.dim)[2] if sim.alpha > 1 else 1.5
        analysis = AnalysisConstants(
            _number(values, "analysis.strichartz_C"), _number(values, "analysis.sobolev_D"), float(v)
        )
        initial_condition(values, grid)
        seed = _number(values, "master_seed", int)
        if seed < 0:
            raise ConfigError("master_seed must be non-negative")
    except ConfigError:
        raise
    except (ValueError, TypeError, AttributeError, KeyError) as exc:
        raise ConfigError(str(exc)) from None
    return RunConfig(exp, values, grid, sim, noise, analysis, seed, str(values["output_dir"]))


def load(path: Optional[str], overrides: Iterable[str] = ()) -> RunConfig:
    values: dict[str, Any] = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        values = parse_text(text, path)
    values = apply_overrides(values, overrides)
    return build(values)
