"""Periodic spatial grid with spectral differentiation and quadrature.

Fields are plain numpy arrays of shape ``(n,) * dim`` (row-major); the
:class:`GridSpec` they live on is passed alongside them.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np


def _check_finite(values: np.ndarray, what: str = "field") -> None:
    if not np.all(np.isfinite(values)):
        raise ValueError(f"non-finite {what}")


@dataclass(frozen=True)
class GridSpec:
    """Uniform periodic grid on ``[-L, L)^dim``.

    Attributes:
        dim: spatial dimension, 1 or 2
        half_width: L
        points_per_dim: n, a power of two with n >= 16
    """

    dim: int
    half_width: float
    points_per_dim: int

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError("dim must be 1 or 2")
        if not self.half_width > 0:
            raise ValueError("half_width must be positive")
        n = self.points_per_dim
        if n < 16 or n & (n - 1):
            raise ValueError("points_per_dim must be a power of two >= 16")

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.points_per_dim,) * self.dim

    @property
    def spacing(self) -> float:
        return 2.0 * self.half_width / self.points_per_dim

    @property
    def cell_volume(self) -> float:
        return self.spacing ** self.dim

    @cached_property
    def axis(self) -> np.ndarray:
        """1-D coordinates ``-L + m h``."""
        n = self.points_per_dim
        return -self.half_width + self.spacing * np.arange(n)

    @cached_property
    def wavenumbers(self) -> np.ndarray:
        """1-D wavenumbers ``pi m / L`` in FFT order (Nyquist entry at n/2)."""
        n = self.points_per_dim
        return np.fft.fftfreq(n, d=1.0 / n) * (np.pi / self.half_width)

    @cached_property
    def k_components(self) -> list[np.ndarray]:
        return np.meshgrid(*([self.wavenumbers] * self.dim), indexing="ij")

    @cached_property
    def k_squared(self) -> np.ndarray:
        return sum(k * k for k in self.k_components)

    @cached_property
    def derivative_multipliers(self) -> list[np.ndarray]:
        """``i k_j`` with the Nyquist mode zeroed."""
        n = self.points_per_dim
        k1 = self.wavenumbers.copy()
        k1[n // 2] = 0.0
        comps = np.meshgrid(*([k1] * self.dim), indexing="ij")
        return [1j * k for k in comps]

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        """Two-thirds rule: keep modes with ``|m| <= n/3`` in every direction."""
        n = self.points_per_dim
        m = np.abs(np.fft.fftfreq(n, d=1.0 / n))
        keep = m <= n / 3.0
        mask = keep
        for _ in range(self.dim - 1):
            mask = np.multiply.outer(mask, keep)
        return mask.astype(float)

    def coordinates(self) -> list[np.ndarray]:
        return coordinates(self)

    def radius_squared(self) -> np.ndarray:
        return sum(x * x for x in coordinates(self))

    def fft(self, u: np.ndarray) -> np.ndarray:
        return np.fft.fftn(u)

    def ifft(self, u_hat: np.ndarray) -> np.ndarray:
        return np.fft.ifftn(u_hat)

    def zeros(self) -> np.ndarray:
        return np.zeros(self.shape, dtype=complex)


def coordinates(grid: GridSpec) -> list[np.ndarray]:
    """Coordinate fields, component j at index m equal to ``-L + m h``."""
    return np.meshgrid(*([grid.axis] * grid.dim), indexing="ij")


def spectral_derivatives(grid: GridSpec, u: np.ndarray):
    """Return ``(laplacian, [d_1 u, ..., d_d u])`` computed via FFT."""
    _check_finite(u)
    u_hat = np.fft.fftn(u)
    lap = np.fft.ifftn(-grid.k_squared * u_hat)
    grad = [np.fft.ifftn(ik * u_hat) for ik in grid.derivative_multipliers]
    return lap, grad


def gradient(grid: GridSpec, u: np.ndarray) -> list[np.ndarray]:
    u_hat = np.fft.fftn(u)
    return [np.fft.ifftn(ik * u_hat) for ik in grid.derivative_multipliers]


def laplacian(grid: GridSpec, u: np.ndarray) -> np.ndarray:
    return np.fft.ifftn(-grid.k_squared * np.fft.fftn(u))


def real_gradient(grid: GridSpec, f: np.ndarray) -> list[np.ndarray]:
    """Spectral gradient of a real field, returned real."""
    return [g.real for g in gradient(grid, f)]


def integrate(grid: GridSpec, density: np.ndarray) -> float:
    """Rectangle rule ``h^d * sum(density)``; exact for trigonometric polynomials."""
    density = np.asarray(density)
    _check_finite(density, "density")
    if np.iscomplexobj(density):
        raise TypeError("integrate expects a real-valued density")
    return float(grid.cell_volume * density.sum())


def norm_sq(grid: GridSpec, u: np.ndarray) -> float:
    return integrate(grid, u.real ** 2 + u.imag ** 2)


def grad_norm_sq(grid: GridSpec, u: np.ndarray) -> float:
    """``|grad u|_2^2`` via Parseval on the FFT coefficients."""
    u_hat = np.fft.fftn(u)
    k2 = sum((ik.imag) ** 2 for ik in grid.derivative_multipliers)
    n_total = u.size
    return float(grid.cell_volume * np.sum(k2 * np.abs(u_hat) ** 2) / n_total)
