"""Scalar functionals, virial predictions, damping seminorms and Ito residuals."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import grid as gridmod
from . import noise as noisemod
from .grid import GridSpec, integrate
from .noise import BrownianPaths, NoiseSpec


@dataclass(frozen=True)
class Diagnostics:
    mass: float
    hamiltonian: float
    variance: float
    momentum: float
    p_functional: float
    grad_norm_sq: float
    lp_norm: float
    sup_amp: float

    @property
    def h1_norm(self) -> float:
        return math.sqrt(self.mass + self.grad_norm_sq)

    def hamiltonian_lam(self, lam: float, alpha: float) -> float:
        """``1/2 |grad X|^2 - lam/(alpha+1) |X|^{alpha+1}_{alpha+1}``."""
        return 0.5 * self.grad_norm_sq - lam * self.lp_norm / (alpha + 1.0)

    def p_lam(self, lam: float, alpha: float, d: int) -> float:
        return 0.5 * self.grad_norm_sq - lam * d * (alpha - 1.0) / (4.0 * (alpha + 1.0)) * self.lp_norm


DIAGNOSTIC_FIELDS = (
    "mass",
    "hamiltonian",
    "variance",
    "momentum",
    "p_functional",
    "grad_norm_sq",
    "lp_norm",
    "sup_amp",
)


def _momentum(grid: GridSpec, u: np.ndarray, grad: Sequence[np.ndarray]) -> float:
    """``Im int xi . u conj(grad u)``."""
    xs = grid.coordinates()
    dens = sum(x * (u * np.conj(g)).imag for x, g in zip(xs, grad))
    return integrate(grid, dens)


def diagnostics(u: np.ndarray, grid: GridSpec, alpha: float, check: bool = True) -> Diagnostics:
    if check and not np.all(np.isfinite(u)):
        raise ValueError("non-finite field")
    abs2 = u.real ** 2 + u.imag ** 2
    grad = gridmod.gradient(grid, u)
    grad2 = integrate(grid, sum(g.real ** 2 + g.imag ** 2 for g in grad))
    mass = integrate(grid, abs2)
    variance = integrate(grid, grid.radius_squared() * abs2)
    lp = integrate(grid, abs2 ** (0.5 * (alpha + 1.0)))
    ham = 0.5 * grad2 - lp / (alpha + 1.0)
    p = ham + (1.0 / (alpha + 1.0)) * (1.0 - grid.dim * (alpha - 1.0) / 4.0) * lp
    return Diagnostics(
        mass=mass,
        hamiltonian=ham,
        variance=variance,
        momentum=_momentum(grid, u, grad),
        p_functional=p,
        grad_norm_sq=grad2,
        lp_norm=lp,
        sup_amp=float(np.sqrt(abs2.max())) if abs2.size else 0.0,
    )


def variance_is_meaningful(u: np.ndarray, grid: GridSpec, fraction: float = 0.999) -> bool:
    """True when at least ``fraction`` of the mass sits inside ``|xi| <= L/2``."""
    abs2 = np.abs(u) ** 2
    total = abs2.sum()
    if total == 0:
        return True
    inner = abs2[grid.radius_squared() <= (grid.half_width / 2) ** 2].sum()
    ok = inner >= fraction * total
    if not ok:
        warnings.warn("less than 99.9% of the mass lies inside |xi| <= L/2; variance unreliable")
    return bool(ok)


# ---------------------------------------------------------------------------
# Virial bound
# ---------------------------------------------------------------------------


def coefficient_a(spec: NoiseSpec, mass0: float, grid: GridSpec, mu_power: int = 2) -> float:
    """``a = 4/3 sum_k |mu_k|^p |grad f_k|_inf^2 |x|_2^2`` (``p = 2`` by default)."""
    if mass0 < 0:
        raise ValueError("mass0 must be non-negative")
    if mu_power not in (1, 2):
        raise ValueError("mu_power must be 1 or 2")
    b = noisemod.bind(spec, grid)
    sups = []
    for j, mode in enumerate(spec.modes):
        if mode.spatially_constant:
            sups.append(0.0)
        else:
            sups.append(float(np.sqrt(np.max(np.sum(b.grad_f[j] ** 2, axis=0)))))
    return a_from_sup_norms([abs(m.mu) for m in spec.modes], sups, mass0, mu_power)


def a_from_sup_norms(mu_abs: Sequence[float], grad_sups: Sequence[float], mass0: float, mu_power: int = 2) -> float:
    return 4.0 / 3.0 * sum(m ** mu_power * g * g for m, g in zip(mu_abs, grad_sups)) * mass0


@dataclass
class VirialPrediction:
    a_coeff: float
    coefficients: tuple[float, float, float, float]  # V, 4G, 8H, a
    roots: tuple[float, ...] = ()
    t_star: Optional[float] = None
    t_tilde_star: Optional[float] = None
    t_crit: Optional[float] = None
    f_at_t_crit: Optional[float] = None

    def f(self, t):
        c0, c1, c2, c3 = self.coefficients
        t = np.asarray(t, dtype=float)
        return c0 + t * (c1 + t * (c2 + t * c3))

    def f_prime(self, t):
        _, c1, c2, c3 = self.coefficients
        return c1 + t * (2 * c2 + 3 * c3 * t)


def _polish(coeffs, t, iters=3):
    """Newton steps, each kept only if it lowers ``|f|`` (guards multiple roots)."""
    c0, c1, c2, c3 = coeffs

    def f(s):
        return c0 + s * (c1 + s * (c2 + s * c3))

    ft = f(t)
    for _ in range(iters):
        fp = c1 + t * (2 * c2 + 3 * c3 * t)
        if fp == 0 or ft == 0:
            break
        cand = t - ft / fp
        fc = f(cand)
        if not abs(fc) < abs(ft):
            break
        t, ft = cand, fc
    return t


def _quadratic_roots(a, b, c) -> list[float]:
    """Real roots of ``a t^2 + b t + c`` (stable form)."""
    if a == 0:
        return [] if b == 0 else [-c / b]
    disc = b * b - 4 * a * c
    if disc < 0:
        return []
    sq = math.sqrt(disc)
    q = -0.5 * (b + math.copysign(sq, b))
    if q == 0:
        return [0.0]
    return sorted({q / a, c / q})


def real_cubic_roots(c0: float, c1: float, c2: float, c3: float) -> list[float]:
    """Real roots of ``c0 + c1 t + c2 t^2 + c3 t^3``, closed form plus Newton polish."""
    if c3 == 0:
        return _quadratic_roots(c2, c1, c0)
    a, b, c = c2 / c3, c1 / c3, c0 / c3
    # depressed cubic t = s - a/3: s^3 + p s + q = 0
    p = b - a * a / 3.0
    q = 2 * a ** 3 / 27.0 - a * b / 3.0 + c
    disc = (q / 2) ** 2 + (p / 3) ** 3
    shift = -a / 3.0
    if disc > 0:
        sq = math.sqrt(disc)
        u = np.cbrt(-q / 2 + sq)
        v = np.cbrt(-q / 2 - sq)
        roots = [float(u + v + shift)]
    elif p == 0:
        roots = [shift]
    else:
        r = 2 * math.sqrt(-p / 3)
        arg = max(-1.0, min(1.0, 3 * q / (p * r)))
        theta = math.acos(arg) / 3
        roots = [r * math.cos(theta - 2 * math.pi * k / 3) + shift for k in range(3)]
    coeffs = (c0, c1, c2, c3)
    return sorted(_polish(coeffs, t) for t in roots)


def virial_prediction(diag0: Diagnostics, a: float) -> VirialPrediction:
    """Roots of ``f(t) = V + 4G t + 8H t^2 + a t^3`` and the a-independent ``t~*``.

    ``t_star`` is the largest positive root of ``f``.  ``t_crit`` is the
    largest positive critical point of ``f`` (where ``f' = 0``); when
    ``a > 0``, ``G != 0`` and ``16H^2 - 3aG > 0`` it is checked against
    ``2G / (-4H - sqrt(16H^2 - 3aG))``.
    """
    V, G, H = diag0.variance, diag0.momentum, diag0.hamiltonian
    coeffs = (V, 4.0 * G, 8.0 * H, float(a))
    pred = VirialPrediction(float(a), coeffs)
    roots = tuple(real_cubic_roots(*coeffs))
    pred.roots = roots
    positive = [r for r in roots if r > 0]
    if positive:
        pred.t_star = max(positive)
    if H < 0:
        rad = G * G - 1.5 * H * V
        if rad >= 0:
            pred.t_tilde_star = (-G - math.sqrt(rad)) / (2.0 * H)
    crit = [t for t in _quadratic_roots(3.0 * a, 16.0 * H, 4.0 * G) if t > 0]
    if crit:
        t_c = max(crit)
        pred.t_crit = t_c
        pred.f_at_t_crit = float(pred.f(t_c))
        rad = 16.0 * H * H - 3.0 * a * G
        if a > 0 and G != 0 and rad > 0:
            # rationalised when H < 0 to avoid cancellation for small a
            sq = math.sqrt(rad)
            ref = 2.0 * (-4.0 * H + sq) / (3.0 * a) if H < 0 else 2.0 * G / (-4.0 * H - sq)
            if abs(ref - t_c) > 1e-9 * abs(ref):
                raise ArithmeticError("critical-point cross-check failed")
    return pred


# ---------------------------------------------------------------------------
# Damping functional norms
# ---------------------------------------------------------------------------


def strichartz_exponents(alpha: float, d: int) -> tuple[float, float, float]:
    """``(p, q, v) = (alpha + 1, 4(alpha+1)/(d(alpha-1)), 1/(1 - 2/q))``."""
    if not alpha > 1:
        raise ValueError("alpha must exceed 1")
    p = alpha + 1.0
    q = 4.0 * (alpha + 1.0) / (d * (alpha - 1.0))
    if q <= 2:
        raise ValueError("exponent outside admissible range")
    return p, q, 1.0 / (1.0 - 2.0 / q)


@dataclass(frozen=True)
class AnalysisConstants:
    strichartz_C: float = 1.0
    sobolev_D: float = 1.0
    v_exponent: float = 1.5

    def __post_init__(self):
        if min(self.strichartz_C, self.sobolev_D) <= 0 or self.v_exponent <= 1:
            raise ValueError("analysis constants must be positive and v > 1")


def _trapz_cumulative(y: np.ndarray, t: np.ndarray) -> np.ndarray:
    out = np.zeros_like(y, dtype=float)
    out[1:] = np.cumsum(0.5 * (y[1:] + y[:-1]) * np.diff(t))
    return out


def h_sup_series(spec: NoiseSpec, paths: BrownianPaths, alpha: float, grid: GridSpec, upto: Optional[int] = None):
    """``sup_xi h(s_i)`` and ``sup_xi |grad h(s_i)|`` at the path nodes."""
    b = noisemod.bind(spec, grid)
    n = paths.times.size if upto is None else upto
    re_mu_hat = b.mu_hat.real
    grad_re_mu_hat = np.stack(gridmod.real_gradient(grid, re_mu_hat)) if not spec.spatially_constant else None
    sup_h = np.empty(n)
    sup_gh = np.zeros(n)
    re_mus = b.mus.real
    for i in range(n):
        s = paths.times[i]
        beta = paths.values[:, i] if spec.n_modes else np.zeros(0)
        expo = noisemod._h_exponent(b, beta, s, alpha) if spec.n_modes else np.zeros(grid.shape)
        with np.errstate(over="ignore"):
            h = np.exp(expo)
        sup_h[i] = h.max()
        if grad_re_mu_hat is not None:
            grad_reW = np.tensordot(re_mus * beta, b.grad_f, axes=1)
            gh = -(alpha - 1.0) * h * (s * grad_re_mu_hat - grad_reW)
            sup_gh[i] = np.sqrt(np.max(np.sum(gh ** 2, axis=0)))
    return sup_h, sup_gh


def h_seminorms(
    spec: NoiseSpec,
    paths: BrownianPaths,
    alpha: float,
    v: float,
    t: float,
    grid: GridSpec,
    sobolev_D: float = 1.0,
):
    """Return ``(|h|_{L^v(0,t;L^inf)}, |grad h|_{L^v(0,t;L^inf)}, D1, D2)``."""
    if not v > 1:
        raise ValueError("v must exceed 1")
    times = paths.times
    m = int(np.searchsorted(times, t + 1e-12 * max(1.0, t)))
    if m <= 1:
        return 0.0, 0.0, 0.0, 0.0
    sup_h, sup_gh = h_sup_series(spec, paths, alpha, grid, upto=m)
    tt = times[:m]
    h_lv = float(np.trapezoid(sup_h ** v, tt) ** (1.0 / v))
    g_lv = float(np.trapezoid(sup_gh ** v, tt) ** (1.0 / v))
    pref = alpha * sobolev_D ** (alpha - 1.0)
    return h_lv, g_lv, pref * h_lv, pref * (h_lv + g_lv)


def tau_indicator(
    constants: AnalysisConstants,
    diag0: Diagnostics,
    spec: NoiseSpec,
    paths: BrownianPaths,
    alpha: float,
    horizon: float,
    grid: GridSpec,
) -> Optional[float]:
    """First time ``2 3^alpha |x|_{H1}^{alpha-1} C^alpha D(t)`` exceeds 1.

    ``D`` is ``D1`` for spatially constant noise and ``D2`` otherwise.  The
    crossing is located between path nodes by linear interpolation of the
    cumulative trapezoid integral.  Returns ``None`` if no crossing occurs on
    ``[0, horizon]``.
    """
    v = constants.v_exponent
    times = paths.times
    m = int(np.searchsorted(times, horizon + 1e-12 * max(1.0, horizon)))
    sup_h, sup_gh = h_sup_series(spec, paths, alpha, grid, upto=m)
    tt = times[:m]
    I_h = _trapz_cumulative(sup_h ** v, tt)
    spatial = not spec.spatially_constant
    I_g = _trapz_cumulative(sup_gh ** v, tt) if spatial else np.zeros_like(I_h)
    pref = alpha * constants.sobolev_D ** (alpha - 1.0)
    K = 2.0 * 3.0 ** alpha * diag0.h1_norm ** (alpha - 1.0) * constants.strichartz_C ** alpha * pref
    D = I_h ** (1.0 / v) + (I_g ** (1.0 / v) if spatial else 0.0)
    excess = K * D - 1.0
    idx = np.nonzero(excess > 0)[0]
    if idx.size == 0:
        return None
    i = int(idx[0])
    if i == 0:
        return float(tt[0])

    def g(s):
        w = (s - tt[i - 1]) / (tt[i] - tt[i - 1])
        ih = (1 - w) * I_h[i - 1] + w * I_h[i]
        ig = (1 - w) * I_g[i - 1] + w * I_g[i]
        return K * (ih ** (1.0 / v) + (ig ** (1.0 / v) if spatial else 0.0)) - 1.0

    lo, hi = float(tt[i - 1]), float(tt[i])
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if g(mid) > 0:
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-15 * max(1.0, hi):
            break
    return hi


# ---------------------------------------------------------------------------
# Ito-formula residuals
# ---------------------------------------------------------------------------


@dataclass
class ItoResiduals:
    times: np.ndarray
    hamiltonian: np.ndarray
    variance: np.ndarray
    momentum: np.ndarray
    variance_expansion: np.ndarray

    def sup_norms(self) -> dict[str, float]:
        out = {}
        for name in ("hamiltonian", "variance", "momentum", "variance_expansion"):
            r = getattr(self, name)
            out[name] = float(np.max(np.abs(r))) if np.all(np.isfinite(r)) else float("nan")
        return out

    def as_columns(self) -> dict[str, np.ndarray]:
        return {
            "time": self.times,
            "residual_H": self.hamiltonian,
            "residual_V": self.variance,
            "residual_G": self.momentum,
            "residual_Vexp": self.variance_expansion,
        }


def _re_inner(grid, a, b) -> float:
    """``Re <a, b>_2 = Re int a conj(b)``."""
    return integrate(grid, (a * np.conj(b)).real)


def _left_sum(values: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Cumulative left-point sums ``sum_{i<m} F_i w_i``, starting at 0."""
    out = np.zeros(values.shape[-1] + 1)
    out[1:] = np.cumsum(values * weights)
    return out


def _weighted_left_sum(times, values, weights, power: int) -> np.ndarray:
    """``sum_{i<m} (t_m - s_i)^power F_i w_i`` for every ``m``."""
    s = times[:-1]
    t = times
    total = np.zeros(times.size)
    for q in range(power + 1):
        coef = math.comb(power, q) * (-1) ** q
        S = _left_sum(values * s ** q, weights)
        total += coef * t ** (power - q) * S
    return total


def ito_residuals(
    record,
    snapshots: Sequence[np.ndarray],
    spec: NoiseSpec,
    paths: BrownianPaths,
    alpha: float,
    grid: GridSpec,
    lam: float = 1.0,
) -> ItoResiduals:
    """Residual series of the Hamiltonian, variance, momentum and
    variance-expansion identities along one recorded trajectory.

    Lebesgue integrals use left Riemann sums and ``int F dbeta_j`` uses the
    left-point Ito sum on the snapshot grid.  The Hamiltonian carries the
    ``lam`` factor on its potential term.  The variance expansion assumes real
    ``mu_k`` and is ``nan`` otherwise.
    """
    times = np.asarray(record.times, dtype=float)
    if len(snapshots) != times.size:
        raise ValueError("snapshot count does not match record times")
    N = spec.n_modes
    if N:
        idx = np.array([paths.index_of(t) for t in times])
        beta = paths.values[:, idx]
    else:
        beta = np.zeros((0, times.size))
    dt = np.diff(times)
    dbeta = np.diff(beta, axis=1)
    nb = noisemod.bind(spec, grid)
    xs = grid.coordinates()
    r2 = grid.radius_squared()
    d = grid.dim
    m = times.size
    diag = [diagnostics(u, grid, alpha) for u in snapshots]
    H = np.array([q.hamiltonian_lam(lam, alpha) for q in diag])
    V = np.array([q.variance for q in diag])
    G = np.array([q.momentum for q in diag])
    P = np.array([q.p_lam(lam, alpha, d) for q in diag])
    lp = np.array([q.lp_norm for q in diag])

    # integrands evaluated on snapshots (left points use indices 0..m-2)
    h_drift = np.zeros(m)
    g_drift = np.zeros(m)
    vexp_drift2 = np.zeros(m)  # (t-s)^2 weight
    h_mart = np.zeros((N, m))
    v_mart = np.zeros((N, m))
    g_mart = np.zeros((N, m))
    ve_m2 = np.zeros((N, m))  # (t-s)^2 dbeta
    ve_m1 = np.zeros((N, m))  # (t-s) dbeta
    grad_mu = gridmod.real_gradient(grid, nb.mu) if not spec.spatially_constant else None
    for i, X in enumerate(snapshots):
        gX = gridmod.gradient(grid, X)
        abs2 = X.real ** 2 + X.imag ** 2
        absp = abs2 ** (0.5 * (alpha + 1.0))
        # -Re <grad(mu X), grad X>
        if grad_mu is None:
            gmuX = [nb.mu * g for g in gX]
        else:
            gmuX = [gm * X + nb.mu * g for gm, g in zip(grad_mu, gX)]
        drift = -sum(_re_inner(grid, a, g) for a, g in zip(gmuX, gX))
        xi_gradX_Xbar = sum(x * g for x, g in zip(xs, gX)) * np.conj(X)
        for j in range(N):
            phi = nb.phi[j]
            gphi = nb.mus[j] * nb.grad_f[j]
            g_phiX = [gp * X + phi * g for gp, g in zip(gphi, gX)]
            drift += 0.5 * integrate(grid, sum(np.abs(q) ** 2 for q in g_phiX))
            drift -= 0.5 * lam * (alpha - 1.0) * integrate(grid, phi.real ** 2 * absp)
            re_grad = sum(_re_inner(grid, q, g) for q, g in zip(g_phiX, gX))
            h_mart[j, i] = re_grad - lam * integrate(grid, phi.real * absp)
            v_mart[j, i] = 2.0 * integrate(grid, r2 * abs2 * phi.real)
            g_drift[i] -= integrate(grid, (sum(x * gp for x, gp in zip(xs, gphi)) * abs2 * np.conj(phi)).imag)
            g_mart[j, i] = d * integrate(grid, abs2 * phi.imag) - 2.0 * integrate(
                grid, (xi_gradX_Xbar * np.conj(phi)).imag
            )
            if spec.all_real:
                ph = phi.real
                vexp_drift2[i] += 4.0 * integrate(grid, sum(np.abs(gp.real * X) ** 2 for gp in gphi))
                vexp_drift2[i] -= 4.0 * lam * (alpha - 1.0) * integrate(grid, ph ** 2 * absp)
                ve_m2[j, i] = 8.0 * (re_grad - lam * integrate(grid, ph * absp))
                ve_m1[j, i] = -8.0 * integrate(grid, (xi_gradX_Xbar * ph).imag)
        h_drift[i] = drift

    left = slice(0, m - 1)
    rhs_H = H[0] + _left_sum(h_drift[left], dt)
    rhs_V = V[0] + _left_sum(4.0 * G[left], dt)
    rhs_G = G[0] + _left_sum(4.0 * P[left] + g_drift[left], dt)
    for j in range(N):
        rhs_H += _left_sum(h_mart[j, left], dbeta[j])
        rhs_V += _left_sum(v_mart[j, left], dbeta[j])
        rhs_G += _left_sum(g_mart[j, left], dbeta[j])

    if spec.all_real:
        kappa = (1.0 / (alpha + 1.0)) * (1.0 - d * (alpha - 1.0) / 4.0)
        rhs_E = V[0] + 4.0 * G[0] * times + 8.0 * H[0] * times ** 2
        rhs_E = rhs_E + _weighted_left_sum(times, vexp_drift2[left], dt, 2)
        rhs_E = rhs_E + _weighted_left_sum(times, 16.0 * lam * kappa * lp[left], dt, 1)
        for j in range(N):
            rhs_E = rhs_E + _weighted_left_sum(times, ve_m2[j, left], dbeta[j], 2)
            rhs_E = rhs_E + _weighted_left_sum(times, ve_m1[j, left], dbeta[j], 1)
            rhs_E = rhs_E + _left_sum(v_mart[j, left], dbeta[j])
        res_E = V - rhs_E
    else:
        res_E = np.full(m, np.nan)
    return ItoResiduals(times, H - rhs_H, V - rhs_V, G - rhs_G, res_E)
