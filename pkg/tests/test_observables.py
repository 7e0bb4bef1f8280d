import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from snls.dynamics import SimConfig, run_path
from snls.grid import GridSpec
from snls.noise import BrownianPaths, NoiseMode, NoiseSpec, Profile, time_grid
from snls.observables import (
    AnalysisConstants,
    Diagnostics,
    a_from_sup_norms,
    coefficient_a,
    diagnostics,
    h_seminorms,
    ito_residuals,
    real_cubic_roots,
    strichartz_exponents,
    tau_indicator,
    variance_is_meaningful,
    virial_prediction,
)

SQRT_PI = 1.7724538509055159
GRID10 = GridSpec(1, 10.0, 512)
SMALL = GridSpec(1, 1.0, 16)


def diag(V=1.0, G=0.0, H=-1.0, mass=1.0, grad=0.0):
    return Diagnostics(mass, H, V, G, 0.0, grad, 0.0, 0.0)


def zero_path_spec(mu=1.0, e=1.0):
    return NoiseSpec((NoiseMode(mu, Profile.constant(0.0), e),))


def zero_paths(horizon, dt):
    t = time_grid(horizon, dt)
    return BrownianPaths(t, np.zeros((1, t.size)))


def test_zero_field_diagnostics_vanish():
    d = diagnostics(np.zeros(GRID10.shape, dtype=complex), GRID10, 3.0)
    assert all(getattr(d, f) == 0.0 for f in ("mass", "hamiltonian", "variance", "momentum", "lp_norm", "sup_amp"))


def test_gaussian_diagnostics():
    x = GRID10.coordinates()[0]
    d = diagnostics(np.exp(-x * x / 2).astype(complex), GRID10, 3.0)
    assert abs(d.mass - SQRT_PI) <= 1e-8
    assert abs(d.grad_norm_sq - SQRT_PI / 2) <= 1e-8
    assert abs(d.variance - SQRT_PI / 2) <= 1e-8
    assert abs(d.momentum) <= 1e-8
    assert abs(d.lp_norm - math.sqrt(math.pi / 2)) <= 1e-8
    assert d.sup_amp == pytest.approx(1.0)
    assert d.hamiltonian == 0.5 * d.grad_norm_sq - d.lp_norm / 4.0
    assert d.p_functional == d.hamiltonian + 0.25 * (1 - 0.5) * d.lp_norm


def test_momentum_examples():
    x = GRID10.coordinates()[0]
    k = 1.0
    centred = diagnostics(np.exp(1j * k * x - x * x / 2), GRID10, 3.0)
    assert abs(centred.momentum) <= 1e-8
    shifted = diagnostics(np.exp(1j * k * x - (x - 1) ** 2 / 2), GRID10, 3.0)
    assert abs(shifted.momentum + k * SQRT_PI) <= 1e-8


def test_non_finite_field_is_rejected():
    u = np.ones(GRID10.shape, dtype=complex)
    u[0] = np.inf
    with pytest.raises(ValueError):
        diagnostics(u, GRID10, 3.0)


def test_lambda_aware_functionals():
    x = GRID10.coordinates()[0]
    d = diagnostics(1.2 * np.exp(-x * x / 2).astype(complex), GRID10, 5.0)
    assert d.hamiltonian_lam(1, 5.0) == pytest.approx(d.hamiltonian, rel=1e-15)
    assert d.hamiltonian_lam(0, 5.0) == 0.5 * d.grad_norm_sq
    assert d.hamiltonian_lam(-1, 5.0) == pytest.approx(0.5 * d.grad_norm_sq + d.lp_norm / 6.0)
    assert d.p_lam(1, 5.0, 1) == pytest.approx(d.p_functional, rel=1e-14)
    assert d.h1_norm == pytest.approx(math.sqrt(d.mass + d.grad_norm_sq))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(0.1, 3.0), st.sampled_from([3.0, 5.0, 7.0]))
def test_diagnostics_scaling(seed, c, alpha):
    rng = np.random.default_rng(seed)
    x = GRID10.coordinates()[0]
    u = (rng.normal() + 1j * rng.normal()) * np.exp(-((x - rng.uniform(-1, 1)) ** 2) / 2 + 1j * rng.uniform(-2, 2) * x)
    a = diagnostics(u, GRID10, alpha)
    b = diagnostics(c * u, GRID10, alpha)
    for name in ("mass", "grad_norm_sq", "variance"):
        assert getattr(b, name) == pytest.approx(c * c * getattr(a, name), rel=1e-12)
    assert b.momentum == pytest.approx(c * c * a.momentum, rel=1e-12, abs=1e-12 * a.mass * c * c)
    assert b.lp_norm == pytest.approx(c ** (alpha + 1) * a.lp_norm, rel=1e-12)


def test_variance_meaningful_warns_for_wide_fields():
    x = GRID10.coordinates()[0]
    assert variance_is_meaningful(np.exp(-x * x / 2), GRID10)
    with pytest.warns(UserWarning):
        assert not variance_is_meaningful(np.exp(-x * x / 50), GRID10)


def test_coefficient_a_examples():
    assert a_from_sup_norms([1.0], [0.1], 2.0) == pytest.approx(4 / 150, rel=1e-14)
    assert a_from_sup_norms([0.5], [0.1], 2.0, mu_power=1) == pytest.approx(2 / 150, rel=1e-14)
    two = a_from_sup_norms([1.0, 2.0], [0.1, 0.3], 2.0)
    assert two == pytest.approx(a_from_sup_norms([1.0], [0.1], 2.0) + a_from_sup_norms([2.0], [0.3], 2.0))
    assert coefficient_a(NoiseSpec((NoiseMode(1.0, Profile.constant(0.0), 2.0),)), 3.0, GRID10) == 0.0
    with pytest.raises(ValueError):
        coefficient_a(NoiseSpec(), -1.0, GRID10)
    with pytest.raises(ValueError):
        coefficient_a(NoiseSpec(), 1.0, GRID10, mu_power=3)


def test_coefficient_a_gaussian_profile():
    # sup |f'| = A / (w sqrt(e)) for A exp(-x^2 / (2 w^2))
    spec = NoiseSpec((NoiseMode(0.5j, Profile.gaussian(0.8, 1.0), 0.0),))
    expected = 4 / 3 * 0.25 * (0.8 / math.sqrt(math.e)) ** 2 * 2.0
    assert coefficient_a(spec, 2.0, GridSpec(1, 8.0, 1024)) == pytest.approx(expected, rel=1e-4)


def test_virial_examples():
    p = virial_prediction(diag(V=1, G=0, H=-1), 0.0)
    assert p.t_star == pytest.approx(1 / (2 * math.sqrt(2)), abs=1e-12)
    assert p.t_star == pytest.approx(0.3535534, abs=1e-7)
    assert p.t_tilde_star == pytest.approx(0.6123724, abs=1e-7)
    assert float(p.f(0.0)) == 1.0
    p = virial_prediction(diag(V=1, G=1, H=-1), 0.0)
    assert p.t_star == pytest.approx(0.6830127, abs=1e-7)


def test_virial_without_blow_up_window():
    p = virial_prediction(diag(V=1, G=0.5, H=0.5), 0.0)
    assert p.t_star is None and p.t_tilde_star is None


def test_virial_root_ordering_as_a_shrinks():
    d = diag(V=1.0, G=0.3, H=-0.8)
    preds = [virial_prediction(d, 10.0 ** -k) for k in range(2, 7)]
    tildes = {p.t_tilde_star for p in preds}
    assert len(tildes) == 1
    t_crit = [p.t_crit for p in preds]
    assert all(b > a for a, b in zip(t_crit, t_crit[1:]))
    assert all(p.t_tilde_star < p.t_crit for p in preds)
    assert all(p.t_star >= p.t_crit for p in preds)


def test_critical_point_matches_closed_form():
    V, G, H, a = 1.0, 0.3, -0.8, 1e-3
    p = virial_prediction(diag(V=V, G=G, H=H), a)
    ref = 2 * G / (-4 * H - math.sqrt(16 * H * H - 3 * a * G))
    assert p.t_crit == pytest.approx(ref, rel=1e-12)
    assert float(p.f_prime(p.t_crit)) == pytest.approx(0.0, abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-5, 5).filter(lambda r: abs(r) > 1e-3), min_size=3, max_size=3), st.floats(0.1, 4))
def test_cubic_roots_match_numpy(roots, lead):
    coeffs = np.poly(roots)[::-1] * lead  # c0 .. c3
    ours = real_cubic_roots(*coeffs)
    assert len(ours) in (1, 3)
    ref = np.sort(np.roots(coeffs[::-1]).real[np.abs(np.roots(coeffs[::-1]).imag) < 1e-9])
    for r in ours:
        assert abs(np.polyval(coeffs[::-1], r)) <= 1e-7 * max(1.0, np.max(np.abs(coeffs)) * (1 + abs(r)) ** 3)
    if len(ours) == 3 and len(ref) == 3:
        np.testing.assert_allclose(ours, ref, atol=1e-5)


def test_cubic_triple_root_survives_polish():
    coeffs = np.poly([3.0, 3.0, 3.0])[::-1] * 1.7
    roots = real_cubic_roots(*coeffs)
    assert all(abs(r - 3.0) < 1e-4 for r in roots)


def test_critical_point_cross_check_at_tiny_a():
    p = virial_prediction(diag(V=1.0, G=0.3, H=-0.8), 1e-9)
    assert p.t_crit == pytest.approx(2 * (3.2 + math.sqrt(10.24 - 9e-10)) / 3e-9, rel=1e-12)


def test_cubic_degenerates_to_quadratic():
    assert real_cubic_roots(1.0, 0.0, -8.0, 0.0) == pytest.approx([-1 / math.sqrt(8), 1 / math.sqrt(8)])
    assert real_cubic_roots(1.0, 1.0, 1.0, 0.0) == []


@pytest.mark.parametrize("alpha,d,expected", [(5, 1, (6, 6, 1.5)), (3, 2, (4, 4, 2)), (9, 1, (10, 5, 5 / 3))])
def test_strichartz_exponents(alpha, d, expected):
    assert strichartz_exponents(alpha, d) == pytest.approx(expected, rel=1e-15)


def test_strichartz_rejects_inadmissible():
    with pytest.raises(ValueError, match="admissible"):
        strichartz_exponents(5.0, 3)
    with pytest.raises(ValueError):
        strichartz_exponents(1.0, 1)


def test_analysis_constants_validation():
    with pytest.raises(ValueError):
        AnalysisConstants(0.0, 1.0, 1.5)
    with pytest.raises(ValueError):
        AnalysisConstants(1.0, 1.0, 1.0)


def test_h_seminorms_zero_time_and_constant_profile():
    paths = zero_paths(1.0, 0.01)
    assert h_seminorms(zero_path_spec(), paths, 5.0, 1.5, 0.0, SMALL) == (0.0, 0.0, 0.0, 0.0)
    h, g, d1, d2 = h_seminorms(zero_path_spec(), paths, 5.0, 1.5, 1.0, SMALL, sobolev_D=2.0)
    assert g == 0.0 and d1 == d2
    assert d1 == pytest.approx(5.0 * 2.0 ** 4 * h)


def test_h_seminorm_closed_form():
    v = 1.5
    h, _, _, _ = h_seminorms(zero_path_spec(), zero_paths(1.0, 5e-5), 5.0, v, 1.0, SMALL)
    assert abs(h ** v - (1 - math.exp(-4 * v)) / (4 * v)) <= 1e-8


def test_h_seminorm_gradient_for_gaussian_profile():
    grid = GridSpec(1, 8.0, 256)
    spec = NoiseSpec((NoiseMode(1.0, Profile.gaussian(0.5, 1.0), 1.0),))
    _, g, d1, d2 = h_seminorms(spec, zero_paths(0.5, 0.01), 3.0, 2.0, 0.5, grid)
    assert g > 0 and d2 > d1


def test_tau_none_when_h_suppressed():
    consts = AnalysisConstants(1e-3, 1.0, 1.5)
    assert tau_indicator(consts, diag(mass=1.0), zero_path_spec(), zero_paths(1.0, 0.01), 5.0, 1.0, SMALL) is None


def test_tau_matches_scalar_oracle():
    v, alpha, C = 1.5, 5.0, 0.3
    consts = AnalysisConstants(C, 1.0, v)
    d0 = diag(mass=1.0, grad=0.0)
    tau = tau_indicator(consts, d0, zero_path_spec(), zero_paths(1.0, 5e-5), alpha, 1.0, SMALL)
    K = 2 * 3 ** alpha * C ** alpha * alpha

    def g(t):
        return K * ((1 - math.exp(-4 * v * t)) / (4 * v)) ** (1 / v) - 1

    assert abs(tau - brentq(g, 1e-9, 1.0, xtol=1e-14)) <= 1e-8


def test_tau_non_increasing_in_strichartz_constant():
    d0 = diag(mass=1.0)
    paths = zero_paths(1.0, 1e-3)
    taus = []
    for C in (0.28, 0.56, 1.12):
        taus.append(tau_indicator(AnalysisConstants(C, 1.0, 1.5), d0, zero_path_spec(), paths, 5.0, 1.0, SMALL))
    assert all(t is not None for t in taus)
    assert taus[0] >= taus[1] >= taus[2]


def _residual_run(cfg, spec, x0, grid, seed=0):
    rec = run_path(x0, cfg, spec, seed, grid, keep_snapshots=True)
    from snls.noise import sample_brownian

    paths = sample_brownian(spec.n_modes, time_grid(cfg.horizon, cfg.dt), seed)
    return ito_residuals(rec, rec.snapshots, spec, paths, cfg.alpha, grid, lam=cfg.lam)


def test_linear_deterministic_hamiltonian_residual():
    grid = GridSpec(1, 8.0, 256)
    x = grid.coordinates()[0]
    x0 = np.exp(-x * x / 2 + 0.5j * x)
    cfg = SimConfig(lam=0, alpha=3.0, horizon=0.2, dt=1e-3)
    res = _residual_run(cfg, NoiseSpec(), x0, grid)
    assert res.sup_norms()["hamiltonian"] <= 1e-8


def test_deterministic_variance_residual_converges():
    grid = GridSpec(1, 8.0, 256)
    x = grid.coordinates()[0]
    x0 = np.exp(-x * x / 2) * np.exp(0.3j * x * x)
    sups = []
    for dt in (2e-3, 1e-3, 5e-4):
        cfg = SimConfig(lam=1, alpha=3.0, horizon=0.2, dt=dt)
        sups.append(_residual_run(cfg, NoiseSpec(), x0, grid).sup_norms()["variance"])
    assert sups[0] / sups[1] >= 1.8 and sups[1] / sups[2] >= 1.8


def test_ito_residuals_rejects_mismatched_snapshots():
    grid = GridSpec(1, 8.0, 64)
    x = grid.coordinates()[0]
    cfg = SimConfig(lam=0, alpha=3.0, horizon=0.01, dt=1e-3)
    rec = run_path(np.exp(-x * x / 2).astype(complex), cfg, NoiseSpec(), 0, grid, keep_snapshots=True)
    with pytest.raises(ValueError):
        ito_residuals(rec, rec.snapshots[:-1], NoiseSpec(), zero_paths(0.01, 1e-3), 3.0, grid)


def test_variance_expansion_is_nan_for_complex_mu():
    grid = GridSpec(1, 8.0, 128)
    x = grid.coordinates()[0]
    spec = NoiseSpec((NoiseMode(0.1 + 0.1j, Profile.constant(0.0), 1.0),))
    cfg = SimConfig(lam=1, alpha=3.0, horizon=0.01, dt=1e-3)
    res = _residual_run(cfg, spec, np.exp(-x * x / 2).astype(complex), grid)
    norms = res.sup_norms()
    assert math.isnan(norms["variance_expansion"])
    assert math.isfinite(norms["hamiltonian"])
    assert set(res.as_columns()) == {"time", "residual_H", "residual_V", "residual_G", "residual_Vexp"}
