"""Split-step integrators for the stochastic NLS and its rescaled random PDE.

Sign conventions: the SPDE is ``i dX = (Delta X + lam |X|^{alpha-1} X) dt
- i mu X dt + i X dW``, so the free flow multiplies Fourier modes by
``exp(i |k|^2 t)``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional

import numpy as np

from . import noise as noisemod
from .grid import GridSpec
from .noise import BrownianPaths, NoiseSpec
from .observables import Diagnostics, diagnostics

SOLVERS = ("spde", "rpde")


class BlowUpReason(str, Enum):
    GRAD = "GradThreshold"
    AMP = "AmpThreshold"
    NONFINITE = "NonFinite"


@dataclass(frozen=True)
class SimConfig:
    lam: int = 1
    alpha: float = 3.0
    horizon: float = 1.0
    dt: float = 1e-3
    solver: str = "spde"
    blow_up_grad_factor: float = 1e4
    blow_up_amp_factor: float = 1e3
    diagnostics_stride: int = 1

    def __post_init__(self):
        if self.lam not in (-1, 0, 1):
            raise ValueError("lambda must be -1, 0 or 1")
        if self.alpha < 1:
            raise ValueError("alpha must be >= 1")
        if not (self.horizon > 0 and self.dt > 0):
            raise ValueError("horizon and dt must be positive")
        if self.dt > self.horizon * (1 + 1e-12):
            raise ValueError("dt must not exceed the horizon")
        if self.solver not in SOLVERS:
            raise ValueError(f"solver must be one of {SOLVERS}")
        if int(self.diagnostics_stride) < 1:
            raise ValueError("diagnostics_stride must be >= 1")

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))


def in_focusing_range(lam: int, alpha: float, d: int, alpha_cap: float = 9.0) -> bool:
    """``lam = 1`` and ``1 + 4/d <= alpha < 1 + 4/(d-2)^+`` (capped at 9 for d <= 2)."""
    if lam != 1:
        return False
    upper = np.inf if d <= 2 else 1.0 + 4.0 / (d - 2)
    return 1.0 + 4.0 / d <= alpha < upper and alpha <= alpha_cap


@dataclass
class TrajectoryRecord:
    times: np.ndarray
    diagnostics: list[Diagnostics]
    blow_up_time: Optional[float] = None
    blow_up_reason: Optional[BlowUpReason] = None
    terminal_field: Optional[np.ndarray] = None
    path_seed: int = 0
    snapshots: list[np.ndarray] = field(default_factory=list)
    step_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    @property
    def blew_up(self) -> bool:
        return self.blow_up_time is not None

    def series(self, name: str) -> np.ndarray:
        return np.array([getattr(d, name) for d in self.diagnostics])


# ---------------------------------------------------------------------------
# Sub-flows
# ---------------------------------------------------------------------------


def dispersion_flow(grid: GridSpec, x: np.ndarray, tau: float) -> np.ndarray:
    """Exact flow of ``i dX/dt = Delta X`` over time ``tau`` (any sign)."""
    return np.fft.ifftn(np.exp(1j * grid.k_squared * tau) * np.fft.fftn(x))


def nonlinear_flow(x: np.ndarray, lam: float, alpha: float, tau: float) -> np.ndarray:
    """Exact flow of ``i dX/dt = lam |X|^{alpha-1} X``; ``|X|`` is invariant."""
    if lam == 0:
        return x.copy()
    abs2 = x.real ** 2 + x.imag ** 2
    return x * np.exp(-1j * lam * tau * abs2 ** (0.5 * (alpha - 1.0)))


def noise_flow(x: np.ndarray, dW: np.ndarray, mu_hat: np.ndarray, tau: float) -> np.ndarray:
    """Exact pointwise solution of ``dX = -mu X dt + X dW`` over one step."""
    return x * np.exp(dW - mu_hat * tau)


class SplitStepSolver:
    """Per-(grid, noise, config) integrator with precomputed multipliers."""

    def __init__(self, grid: GridSpec, spec: NoiseSpec, cfg: SimConfig):
        self.grid = grid
        self.spec = spec
        self.cfg = cfg
        self.noise = noisemod.bind(spec, grid)
        self._half_cache: dict[float, np.ndarray] = {}
        self._const_noise = spec.spatially_constant

    def half_dispersion(self, dt: float) -> np.ndarray:
        m = self._half_cache.get(dt)
        if m is None:
            m = np.exp(0.5j * self.grid.k_squared * dt)
            self._half_cache[dt] = m
        return m

    # -- original SPDE -----------------------------------------------------

    def spde_step(self, x: np.ndarray, beta0: np.ndarray, beta1: np.ndarray, dt: float):
        """One Strang step; returns ``(x_new, fft(x_new))``."""
        half = self.half_dispersion(dt)
        cfg = self.cfg
        x = np.fft.ifftn(half * np.fft.fftn(x))
        x = nonlinear_flow(x, cfg.lam, cfg.alpha, dt)
        if self.spec.n_modes:
            dW = self.noise.combine(beta1 - beta0)
            x = noise_flow(x, dW, self.noise.mu_hat, dt)
        x_hat = half * np.fft.fftn(x)
        return np.fft.ifftn(x_hat), x_hat

    # -- rescaled random PDE -----------------------------------------------

    def _rpde_rhs(self, y, b, c, weight):
        grid = self.grid
        y_hat = np.fft.fftn(y)
        raw = c * y
        if b is not None:
            for bj, ik in zip(b, grid.derivative_multipliers):
                raw = raw + bj * np.fft.ifftn(ik * y_hat)
        raw = -1j * raw
        lam = self.cfg.lam
        if lam != 0:
            abs2 = y.real ** 2 + y.imag ** 2
            raw = raw - 1j * lam * weight * abs2 ** (0.5 * (self.cfg.alpha - 1.0)) * y
        return np.fft.ifftn(grid.dealias_mask * np.fft.fftn(raw))

    def rpde_step(self, y: np.ndarray, beta0: np.ndarray, beta1: np.ndarray, dt: float) -> np.ndarray:
        """One Strang step of the rescaled equation.

        The non-dispersive part is advanced by classical RK4 with ``b``, ``c``
        and the nonlinear weight frozen at the midpoint of the interval.
        """
        half = self.half_dispersion(dt)
        y = np.fft.ifftn(half * np.fft.fftn(y))
        nb = self.noise
        beta_mid = 0.5 * (beta0 + beta1)
        if self.spec.n_modes:
            gW = nb.grad_W(beta_mid)
            c = np.sum(gW * gW, axis=0) + nb.lap_W(beta_mid) - 1j * nb.mu_hat
            b = None if self._const_noise else [2.0 * g for g in gW]
            reW = nb.combine(beta_mid).real
        else:
            c = np.zeros(self.grid.shape, dtype=complex)
            b = None
            reW = 0.0
        weight = np.exp((self.cfg.alpha - 1.0) * reW)
        if self.spec.n_modes or self.cfg.lam != 0:
            f = lambda u: self._rpde_rhs(u, b, c, weight)  # noqa: E731
            k1 = f(y)
            k2 = f(y + 0.5 * dt * k1)
            k3 = f(y + 0.5 * dt * k2)
            k4 = f(y + dt * k3)
            y = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        return np.fft.ifftn(half * np.fft.fftn(y))


def _solver(grid, spec, cfg) -> SplitStepSolver:
    return SplitStepSolver(grid, spec, cfg)


def step_spde(state, spec: NoiseSpec, paths: BrownianPaths, t: float, dt: float, cfg: SimConfig, grid: GridSpec):
    s = _solver(grid, spec, cfg)
    beta0 = paths.at(t) if spec.n_modes else np.zeros(0)
    beta1 = paths.at(t + dt) if spec.n_modes else np.zeros(0)
    return s.spde_step(np.asarray(state, dtype=complex), beta0, beta1, dt)[0]


def step_rpde(y, spec: NoiseSpec, paths: BrownianPaths, t: float, dt: float, cfg: SimConfig, grid: GridSpec):
    s = _solver(grid, spec, cfg)
    beta0 = paths.at(t) if spec.n_modes else np.zeros(0)
    beta1 = paths.at(t + dt) if spec.n_modes else np.zeros(0)
    return s.rpde_step(np.asarray(y, dtype=complex), beta0, beta1, dt)


class Direction(str, Enum):
    TO_Y = "ToY"
    TO_X = "ToX"
    TO_Z = "ToZ"
    FROM_Z = "FromZ"


def transforms(u, spec: NoiseSpec, paths: BrownianPaths, t: float, direction, grid: GridSpec):
    """``ToY: y = e^{-W}X``, ``ToX: X = e^{W}y``, ``ToZ: z = e^{mu_hat t}y`` and
    ``FromZ`` its inverse."""
    direction = Direction(direction)
    u = np.asarray(u, dtype=complex)
    if spec.n_modes == 0:
        return u.copy()
    b = noisemod.bind(spec, grid)
    if direction in (Direction.TO_Y, Direction.TO_X):
        W = b.combine(paths.at(t))
        return u * np.exp(-W if direction is Direction.TO_Y else W)
    sign = 1.0 if direction is Direction.TO_Z else -1.0
    return u * np.exp(sign * b.mu_hat * t)


# ---------------------------------------------------------------------------
# Path driver
# ---------------------------------------------------------------------------


def run_path(
    x0: np.ndarray,
    cfg: SimConfig,
    spec: NoiseSpec,
    seed: int,
    grid: GridSpec,
    paths: Optional[BrownianPaths] = None,
    keep_snapshots: bool = False,
) -> TrajectoryRecord:
    """Integrate one trajectory and flag the first threshold crossing.

    Blow-up is declared when ``|grad X|^2 > g * max(|grad x0|^2, 1)``, when
    ``max |X| > a * max(max |x0|, 1)``, or on any non-finite value.  Diagnostics
    are recorded at multiples of the stride and at the last step, always for
    the physical field ``X``.
    """
    x0 = np.asarray(x0, dtype=complex)
    if not np.all(np.isfinite(x0)) or not np.any(x0):
        raise ValueError("initial state must be finite and nonzero")
    n_steps = cfg.n_steps
    dt = cfg.dt
    if paths is None:
        paths = noisemod.sample_brownian(spec.n_modes, noisemod.time_grid(cfg.horizon, dt), seed)
    elif spec.n_modes and paths.times.size != n_steps + 1:
        raise ValueError("path grid does not match horizon/dt")
    times = np.arange(n_steps + 1) * dt
    solver = SplitStepSolver(grid, spec, cfg)
    nb = solver.noise
    alpha = cfg.alpha
    stride = int(cfg.diagnostics_stride)

    d0 = diagnostics(x0, grid, alpha)
    grad_limit = cfg.blow_up_grad_factor * max(d0.grad_norm_sq, 1.0)
    amp_limit = cfg.blow_up_amp_factor * max(d0.sup_amp, 1.0)

    rec_t = [0.0]
    rec_d = [d0]
    rec_i = [0]
    snaps = [x0.copy()] if keep_snapshots else []
    values = paths.values if spec.n_modes else np.zeros((0, n_steps + 1))
    rpde = cfg.solver == "rpde"
    k2_grad = sum(ik.imag ** 2 for ik in grid.derivative_multipliers)
    state = x0.copy()
    X = x0
    blow_t = None
    reason = None
    with np.errstate(over="ignore", invalid="ignore"):
        for n in range(n_steps):
            b0 = values[:, n]
            b1 = values[:, n + 1]
            if rpde:
                state = solver.rpde_step(state, b0, b1, dt)
                X = state * np.exp(nb.combine(b1)) if spec.n_modes else state
                X_hat = np.fft.fftn(X)
            else:
                state, X_hat = solver.spde_step(state, b0, b1, dt)
                X = state
            t_new = times[n + 1]
            abs2 = X.real ** 2 + X.imag ** 2
            amp = float(np.sqrt(abs2.max()))
            grad2 = float(grid.cell_volume * np.sum(k2_grad * (X_hat.real ** 2 + X_hat.imag ** 2)) / X.size)
            if not (np.isfinite(amp) and np.isfinite(grad2) and np.all(np.isfinite(abs2))):
                blow_t, reason = t_new, BlowUpReason.NONFINITE
                break
            if grad2 > grad_limit:
                blow_t, reason = t_new, BlowUpReason.GRAD
                break
            if amp > amp_limit:
                blow_t, reason = t_new, BlowUpReason.AMP
                break
            if (n + 1) % stride == 0 or n + 1 == n_steps:
                rec_t.append(t_new)
                rec_d.append(diagnostics(X, grid, alpha, check=False))
                rec_i.append(n + 1)
                if keep_snapshots:
                    snaps.append(X.copy())
    return TrajectoryRecord(
        times=np.array(rec_t),
        diagnostics=rec_d,
        blow_up_time=None if blow_t is None else float(blow_t),
        blow_up_reason=reason,
        terminal_field=None if blow_t is not None else X.copy(),
        path_seed=int(seed),
        snapshots=snaps,
        step_indices=np.array(rec_i, dtype=int),
    )


# ---------------------------------------------------------------------------
# Binary field dump
# ---------------------------------------------------------------------------

FIELD_MAGIC = b"SNLSFLD1"


def write_field(path, u: np.ndarray, grid: GridSpec) -> None:
    """16-byte header ``SNLSFLD1 | u32 d | u32 n`` then little-endian (re, im) float64 pairs."""
    u = np.asarray(u, dtype=complex)
    if u.shape != grid.shape:
        raise ValueError("field shape does not match grid")
    header = FIELD_MAGIC + struct.pack("<II", grid.dim, grid.points_per_dim)
    body = np.ascontiguousarray(u).astype("<c16").tobytes()
    Path(path).write_bytes(header + body)


def read_field(path) -> tuple[np.ndarray, int, int]:
    raw = Path(path).read_bytes()
    if raw[:8] != FIELD_MAGIC:
        raise ValueError("not a field dump")
    d, n = struct.unpack("<II", raw[8:16])
    u = np.frombuffer(raw[16:], dtype="<c16").reshape((n,) * d)
    return u.astype(complex), d, n
