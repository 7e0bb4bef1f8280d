"""Finite-dimensional multiplicative Wiener noise.

``W(t, xi) = sum_j mu_j e_j(xi) beta_j(t)`` with real spatial factors
``e_j = f_j + c_j``.  Brownian paths are sampled from counter-based Philox
streams keyed by ``(seed, mode)`` so that any member of an ensemble can be
regenerated on its own.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import NamedTuple, Sequence

import numpy as np

from . import grid as gridmod
from .grid import GridSpec

PROFILE_KINDS = ("constant", "gaussian", "sine")


@dataclass(frozen=True)
class Profile:
    """Smooth real spatial profile ``f_j``.

    ``constant``: ``f = amplitude``.
    ``gaussian``: ``f = amplitude * exp(-|xi - center|^2 / (2 width^2))``.
    ``sine``: ``f = amplitude * sin(pi xi_1 / width)``; periodic on the box when
    ``width`` divides ``L``, used to build profiles that violate decay at the
    boundary.
    """

    kind: str = "constant"
    amplitude: float = 0.0
    width: float = 1.0
    center: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in PROFILE_KINDS:
            raise ValueError(f"unknown profile kind {self.kind!r}")
        if self.kind != "constant" and not self.width > 0:
            raise ValueError("profile width must be positive")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    @classmethod
    def constant(cls, value: float = 0.0) -> "Profile":
        return cls("constant", float(value))

    @classmethod
    def gaussian(cls, amplitude: float, width: float, center=()) -> "Profile":
        if np.isscalar(center):
            center = (float(center),)
        return cls("gaussian", float(amplitude), float(width), tuple(center))

    @property
    def is_constant(self) -> bool:
        return self.kind == "constant" or self.amplitude == 0.0

    def values(self, grid: GridSpec) -> np.ndarray:
        if self.kind == "constant":
            return np.full(grid.shape, float(self.amplitude))
        xs = grid.coordinates()
        if self.kind == "sine":
            return self.amplitude * np.sin(np.pi * xs[0] / self.width)
        center = self.center or (0.0,) * grid.dim
        if len(center) != grid.dim:
            raise ValueError("profile center dimension does not match grid")
        L = grid.half_width
        if self.width > L / 4 or np.hypot.reduce(np.asarray(center)) > L / 2:
            raise ValueError("gaussian profile must satisfy width <= L/4 and |center| <= L/2")
        r2 = sum((x - c) ** 2 for x, c in zip(xs, center))
        return self.amplitude * np.exp(-r2 / (2.0 * self.width ** 2))

    def sup_abs(self, grid: GridSpec) -> float:
        return float(np.max(np.abs(self.values(grid))))


@dataclass(frozen=True)
class NoiseMode:
    mu: complex
    profile: Profile = field(default_factory=Profile)
    offset: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "mu", complex(self.mu))
        object.__setattr__(self, "offset", float(self.offset))

    @property
    def conservative(self) -> bool:
        return self.mu.real == 0.0

    @property
    def spatially_constant(self) -> bool:
        return self.profile.is_constant

    def e_values(self, grid: GridSpec) -> np.ndarray:
        return self.profile.values(grid) + self.offset


@dataclass(frozen=True)
class NoiseSpec:
    """Ordered noise modes; ``ito_half_correction`` selects the 1/2 convention
    in the damping fields (off reproduces the literal, non-martingale form)."""

    modes: tuple[NoiseMode, ...] = ()
    ito_half_correction: bool = True

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple(self.modes))

    @property
    def n_modes(self) -> int:
        return len(self.modes)

    @property
    def conservative(self) -> bool:
        return all(m.conservative for m in self.modes)

    @property
    def spatially_constant(self) -> bool:
        return all(m.spatially_constant for m in self.modes)

    @property
    def all_real(self) -> bool:
        return all(m.mu.imag == 0.0 for m in self.modes)

    def with_offset(self, index: int, offset: float) -> "NoiseSpec":
        modes = list(self.modes)
        modes[index] = replace(modes[index], offset=float(offset))
        return replace(self, modes=tuple(modes))

    def to_dict(self) -> dict:
        out = []
        for m in self.modes:
            p = m.profile
            out.append(
                {
                    "mu_re": m.mu.real,
                    "mu_im": m.mu.imag,
                    "profile": {
                        "kind": p.kind,
                        "amplitude": p.amplitude,
                        "width": p.width,
                        "center": list(p.center),
                    },
                    "offset": m.offset,
                }
            )
        return {"modes": out, "ito_half_correction": self.ito_half_correction}

    @classmethod
    def from_dict(cls, data: dict) -> "NoiseSpec":
        modes = []
        for m in data.get("modes", []):
            p = m.get("profile", {"kind": "constant"})
            if isinstance(p, str):
                p = {"kind": p}
            profile = Profile(
                kind=p.get("kind", "constant"),
                amplitude=float(p.get("amplitude", 0.0)),
                width=float(p.get("width", 1.0)),
                center=tuple(p.get("center", ())),
            )
            modes.append(
                NoiseMode(complex(m.get("mu_re", 0.0), m.get("mu_im", 0.0)), profile, m.get("offset", 0.0))
            )
        return cls(tuple(modes), bool(data.get("ito_half_correction", True)))


# ---------------------------------------------------------------------------
# Brownian paths
# ---------------------------------------------------------------------------


def _stream(seed: int, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed) % 2**64, spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True, eq=False)
class BrownianPaths:
    """Sampled values ``beta_j(t_i)``; ``values`` has shape ``(n_modes, n_times)``."""

    times: np.ndarray
    values: np.ndarray
    seed: int = 0
    level: int = 0

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float).reshape(-1, times.size)
        times.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    @property
    def n_modes(self) -> int:
        return self.values.shape[0]

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def increments(self) -> np.ndarray:
        return np.diff(self.values, axis=1)

    def at(self, t: float) -> np.ndarray:
        """Path values at time ``t``, linearly interpolated between nodes."""
        times = self.times
        tol = 1e-12 * max(1.0, abs(times[-1]))
        if t < -tol or t > times[-1] + tol:
            raise ValueError(f"time {t} outside path grid [0, {times[-1]}]")
        i = int(np.searchsorted(times, t))
        if i < times.size and abs(times[i] - t) <= tol:
            return self.values[:, i].copy()
        if i > 0 and abs(times[i - 1] - t) <= tol:
            return self.values[:, i - 1].copy()
        i = min(max(i, 1), times.size - 1)
        w = (t - times[i - 1]) / (times[i] - times[i - 1])
        return (1.0 - w) * self.values[:, i - 1] + w * self.values[:, i]

    def index_of(self, t: float) -> int:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"time {t} is not a path node")
        return i


def _check_times(times) -> np.ndarray:
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size < 1 or times[0] != 0.0:
        raise ValueError("time grid must be one-dimensional and start at 0")
    if np.any(np.diff(times) <= 0):
        raise ValueError("time grid must be strictly increasing")
    return times


def time_grid(horizon: float, dt: float) -> np.ndarray:
    n = int(round(horizon / dt))
    if n < 1 or abs(n * dt - horizon) > 1e-9 * horizon:
        raise ValueError("horizon must be an integer multiple of dt")
    return np.arange(n + 1) * dt


def sample_brownian(n_modes: int, times, seed: int) -> BrownianPaths:
    """Independent Brownian motions on ``times``; mode j uses stream ``(seed, j)``."""
    times = _check_times(times)
    sd = np.sqrt(np.diff(times))
    values = np.zeros((n_modes, times.size))
    for j in range(n_modes):
        z = _stream(seed, j, 0).standard_normal(times.size - 1)
        values[j, 1:] = np.cumsum(z * sd)
    return BrownianPaths(times, values, seed=int(seed), level=0)


def refine_paths(paths: BrownianPaths) -> BrownianPaths:
    """Halve every step, drawing midpoints from the Brownian bridge.

    Existing nodes are kept bit-for-bit; midpoints of level ``l + 1`` come from
    stream ``(seed, j, l + 1)``.
    """
    t = paths.times
    dt = np.diff(t)
    level = paths.level + 1
    new_t = np.empty(2 * t.size - 1)
    new_t[0::2] = t
    new_t[1::2] = t[:-1] + 0.5 * dt
    values = np.empty((paths.n_modes, new_t.size))
    for j in range(paths.n_modes):
        v = paths.values[j]
        z = _stream(paths.seed, j, level).standard_normal(dt.size)
        values[j, 0::2] = v
        values[j, 1::2] = 0.5 * (v[:-1] + v[1:]) + z * np.sqrt(dt / 4.0)
    return BrownianPaths(new_t, values, seed=paths.seed, level=level)


def refine_to(paths: BrownianPaths, level: int) -> BrownianPaths:
    while paths.level < level:
        paths = refine_paths(paths)
    return paths


# ---------------------------------------------------------------------------
# Fields derived from the noise specification
# ---------------------------------------------------------------------------


class DampingFields(NamedTuple):
    mu: np.ndarray
    mu_hat: np.ndarray
    phi: list


@dataclass(frozen=True, eq=False)
class BoundNoise:
    """Noise spec evaluated on a grid; arrays are stacked over modes."""

    spec: NoiseSpec
    grid: GridSpec
    e: np.ndarray  # (N, *shape) real
    phi: np.ndarray  # (N, *shape) complex, mu_j e_j
    grad_f: np.ndarray  # (N, d, *shape) real, spectral
    lap_f: np.ndarray  # (N, *shape) real
    mu: np.ndarray
    mu_hat: np.ndarray

    @property
    def mus(self) -> np.ndarray:
        return np.array([m.mu for m in self.spec.modes], dtype=complex)

    def combine(self, beta: np.ndarray) -> np.ndarray:
        """``W = sum_j phi_j beta_j`` for one vector of path values."""
        if self.spec.n_modes == 0:
            return np.zeros(self.grid.shape, dtype=complex)
        return np.tensordot(np.asarray(beta, dtype=float), self.phi, axes=1)

    def grad_W(self, beta: np.ndarray) -> np.ndarray:
        """``grad W`` with shape ``(d, *shape)``."""
        if self.spec.n_modes == 0:
            return np.zeros((self.grid.dim,) + self.grid.shape, dtype=complex)
        w = self.mus * np.asarray(beta, dtype=float)
        return np.tensordot(w, self.grad_f, axes=1)

    def lap_W(self, beta: np.ndarray) -> np.ndarray:
        if self.spec.n_modes == 0:
            return np.zeros(self.grid.shape, dtype=complex)
        w = self.mus * np.asarray(beta, dtype=float)
        return np.tensordot(w, self.lap_f, axes=1)


@lru_cache(maxsize=64)
def bind(spec: NoiseSpec, grid: GridSpec) -> BoundNoise:
    N = spec.n_modes
    shape = grid.shape
    e = np.zeros((N,) + shape)
    grad_f = np.zeros((N, grid.dim) + shape)
    lap_f = np.zeros((N,) + shape)
    for j, mode in enumerate(spec.modes):
        e[j] = mode.e_values(grid)
        if not mode.spatially_constant:
            f = mode.profile.values(grid)
            lap, grad = gridmod.spectral_derivatives(grid, f)
            lap_f[j] = lap.real
            grad_f[j] = np.stack([g.real for g in grad])
    mus = np.array([m.mu for m in spec.modes], dtype=complex).reshape((N,) + (1,) * grid.dim)
    phi = mus * e
    factor = 0.5 if spec.ito_half_correction else 1.0
    if N:
        mu = factor * np.sum(np.abs(mus) ** 2 * e ** 2, axis=0)
        mu_hat = factor * np.sum((np.abs(mus) ** 2 + mus ** 2) * e ** 2, axis=0)
    else:
        mu = np.zeros(shape)
        mu_hat = np.zeros(shape, dtype=complex)
    for arr in (e, phi, grad_f, lap_f, mu, mu_hat):
        arr.setflags(write=False)
    return BoundNoise(spec, grid, e, phi, grad_f, lap_f, mu, mu_hat)


def damping_fields(spec: NoiseSpec, grid: GridSpec) -> DampingFields:
    """``mu = 1/2 sum |mu_j|^2 e_j^2``, ``mu_hat = 1/2 sum (|mu_j|^2 + mu_j^2) e_j^2``
    and ``phi_j = mu_j e_j`` (the 1/2 is dropped when the correction is off)."""
    b = bind(spec, grid)
    return DampingFields(b.mu.copy(), b.mu_hat.copy(), [p.copy() for p in b.phi])


def eval_W(spec: NoiseSpec, paths: BrownianPaths, t: float, grid: GridSpec, real_part: bool = False):
    b = bind(spec, grid)
    W = b.combine(paths.at(t)) if spec.n_modes else np.zeros(grid.shape, dtype=complex)
    if real_part:
        return W, W.real.copy()
    return W


def _h_exponent(b: BoundNoise, beta: np.ndarray, t: float, alpha: float) -> np.ndarray:
    reW = b.combine(beta).real
    return -(alpha - 1.0) * (b.mu_hat.real * t - reW)


def eval_h(spec: NoiseSpec, paths: BrownianPaths, t: float, alpha: float, grid: GridSpec) -> np.ndarray:
    """``h(t) = exp(-(alpha - 1)(Re mu_hat t - Re W(t)))``."""
    if not alpha > 1:
        raise ValueError("alpha must exceed 1")
    b = bind(spec, grid)
    expo = _h_exponent(b, paths.at(t), t, alpha)
    with np.errstate(over="ignore"):
        h = np.exp(expo)
    if np.any(np.isinf(h)):
        warnings.warn("h overflowed to +inf: parameters outside double range", RuntimeWarning)
    return h


def coefficient_fields(spec: NoiseSpec, paths: BrownianPaths, t: float, grid: GridSpec):
    """Return ``(b, c)`` with ``b = 2 grad W`` and
    ``c = sum_j (d_j W)^2 + lap W - i mu_hat``."""
    bnd = bind(spec, grid)
    beta = paths.at(t) if spec.n_modes else np.zeros(0)
    gW = bnd.grad_W(beta)
    c = np.sum(gW * gW, axis=0) + bnd.lap_W(beta) - 1j * bnd.mu_hat
    return [2.0 * g for g in gW], c


# ---------------------------------------------------------------------------
# Assumption (H) surrogate
# ---------------------------------------------------------------------------


@dataclass
class AssumptionReport:
    shell_metric: list[float]
    tol: float
    c1_margin: float | None = None
    passes: bool = True
    messages: list[str] = field(default_factory=list)


def _multi_indices(dim: int, max_order: int = 3):
    if dim == 1:
        return [(k,) for k in range(1, max_order + 1)]
    return [(a, b) for a in range(max_order + 1) for b in range(max_order + 1) if 1 <= a + b <= max_order]


def check_assumption_H(spec: NoiseSpec, grid: GridSpec, tol: float = 1e-6, check_c1: bool = False) -> AssumptionReport:
    """Decay surrogate on the outer 10% shell of the box.

    Per mode, reports ``max zeta * sum_{1<=|g|<=3} |d^g f_j|`` over points with
    ``max_j |xi_j| >= 0.9 L``.  With ``check_c1``, also requires
    ``c_1 > sup |f_1|``.
    """
    xs = grid.coordinates()
    r2 = sum(x * x for x in xs)
    zeta = 1.0 + r2
    if grid.dim == 2:
        zeta = zeta * np.log1p(r2) ** 2
    shell = np.max(np.abs(np.stack(xs)), axis=0) >= 0.9 * grid.half_width
    ks = grid.derivative_multipliers
    metrics = []
    for mode in spec.modes:
        if mode.spatially_constant:
            metrics.append(0.0)
            continue
        f_hat = np.fft.fftn(mode.profile.values(grid))
        total = np.zeros(grid.shape)
        for gamma in _multi_indices(grid.dim):
            mult = np.ones(grid.shape, dtype=complex)
            for ik, order in zip(ks, gamma):
                mult = mult * ik ** order
            total += np.abs(np.fft.ifftn(mult * f_hat).real)
        metrics.append(float(np.max(zeta[shell] * total[shell])))
    report = AssumptionReport(metrics, tol)
    for j, m in enumerate(metrics):
        if m > tol:
            report.passes = False
            report.messages.append(f"mode {j}: shell metric {m:.3e} exceeds {tol:.1e}")
    if check_c1 and spec.modes:
        m1 = spec.modes[0]
        margin = m1.offset - m1.profile.sup_abs(grid)
        report.c1_margin = margin
        if not margin > 0:
            report.passes = False
            report.messages.append("c_1 must exceed sup |f_1|")
    return report
