import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import binom, gamma

from snls import montecarlo as mc
from snls.dynamics import SimConfig
from snls.grid import GridSpec
from snls.noise import NoiseMode, NoiseSpec, Profile

GRID = GridSpec(1, 8.0, 128)
DESK = GridSpec(1, 8.0, 512)

# exact tail of int_0^inf exp(kappa rho beta - kappa rho^2 s) ds for
# kappa = 6, c = 0.5 and rho = 1, 2, 4, 8 (gamma law of the perpetuity)
PERPETUITY_TAIL = {
    1.0: 0.523874141891834,
    2.0: 0.3368127302516927,
    4.0: 0.21328052387334354,
    8.0: 0.13453312623940913,
}


def gaussian(grid, amp=1.0):
    x = grid.coordinates()[0]
    return (amp * np.exp(-x * x / 2)).astype(complex)


def const_spec(mu, e, ito=True):
    return NoiseSpec((NoiseMode(mu, Profile.constant(0.0), e),), ito)


def test_wilson_full_success_bound():
    lo, hi = mc.wilson_interval(100, 100)
    assert lo == pytest.approx(0.9630065017930143, abs=1e-12)
    assert hi == 1.0
    assert mc.wilson_interval(0, 100)[0] == 0.0


@given(st.integers(1, 500), st.data())
def test_wilson_brackets_estimate(n, data):
    k = data.draw(st.integers(0, n))
    lo, hi = mc.wilson_interval(k, n)
    assert 0.0 <= lo <= k / n <= hi <= 1.0


def test_wilson_rejects_bad_counts():
    with pytest.raises(ValueError):
        mc.wilson_interval(3, 0)
    with pytest.raises(ValueError):
        mc.wilson_interval(5, 4)


def test_wilson_exact_coverage():
    cover = [k for k in range(101) if mc.wilson_interval(k, 100)[0] <= 0.7 <= mc.wilson_interval(k, 100)[1]]
    assert binom.pmf(cover, 100, 0.7).sum() >= 0.93


def test_wilson_coverage():
    rng = np.random.default_rng(7)
    hits = 0
    for k in rng.binomial(100, 0.7, size=1000):
        lo, hi = mc.wilson_interval(int(k), 100)
        hits += lo <= 0.7 <= hi
    assert hits >= 930


def test_mean_and_stderr():
    m, se = mc.mean_and_stderr([1.0, 2.0, 3.0, 4.0])
    assert m == 2.5 and se == pytest.approx(math.sqrt(5 / 3 / 4))
    assert math.isnan(mc.mean_and_stderr([1.0])[1])
    assert all(math.isnan(v) for v in mc.mean_and_stderr([]))


@settings(max_examples=30)
@given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=50), st.randoms())
def test_mean_is_order_independent(values, rnd):
    shuffled = list(values)
    rnd.shuffle(shuffled)
    assert mc.mean_and_stderr(values)[0] == mc.mean_and_stderr(shuffled)[0]


def test_path_seeds():
    a = mc.derive_path_seed(7, 3)
    assert a == mc.derive_path_seed(7, 3)
    assert a != mc.derive_path_seed(7, 4) and a != mc.derive_path_seed(8, 3)
    assert a != mc.derive_path_seed(7, 3, 1)
    assert 0 <= a < 2 ** 63


def test_worker_count_respects_env(monkeypatch):
    monkeypatch.setenv("SNLS_THREADS", "2")
    assert mc.worker_count(8) == 2
    assert mc.worker_count(1) == 1
    monkeypatch.setenv("SNLS_THREADS", "zero")
    with pytest.raises(ValueError):
        mc.worker_count(4)


def test_linear_survival_is_certain():
    cfg = SimConfig(lam=0, alpha=3.0, horizon=0.1, dt=1e-3)
    frac, (lo, hi) = mc.estimate_survival(gaussian(GRID), cfg, const_spec(1.0, 1.0), 100, 7, GRID)
    assert frac == 1.0 and hi == 1.0 and lo > 0.96


def test_deterministic_collapse_never_survives():
    cfg = SimConfig(lam=1, alpha=5.0, horizon=0.4, dt=1e-3, blow_up_grad_factor=100.0)
    spec = const_spec(0.0, 1.0)
    row = mc.survival_row(gaussian(DESK, 1.5), cfg, spec, 10, 7, DESK)
    assert row.survival_fraction == 0.0 and row.n_blowups == 10
    assert len(set(row.blow_up_times)) == 1


def test_estimate_survival_rejects_small_ensembles():
    cfg = SimConfig(lam=0, horizon=0.01, dt=1e-3)
    with pytest.raises(ValueError):
        mc.estimate_survival(gaussian(GRID), cfg, NoiseSpec(), 5, 7, GRID)


def test_run_ensemble_independent_of_workers():
    cfg = SimConfig(lam=1, alpha=3.0, horizon=0.05, dt=1e-3)
    seeds = [mc.derive_path_seed(1, m) for m in range(6)]
    spec = const_spec(0.8, 1.0)
    serial = mc.run_ensemble(gaussian(GRID), cfg, spec, seeds, GRID, t_samples=(0.02, 0.05), workers=1)
    pooled = mc.run_ensemble(gaussian(GRID), cfg, spec, seeds, GRID, t_samples=(0.02, 0.05), workers=2)
    assert serial == pooled
    assert [s.index for s in pooled] == list(range(6))


def test_sample_times_must_be_on_grid():
    cfg = SimConfig(lam=0, horizon=0.01, dt=1e-3)
    with pytest.raises(ValueError):
        mc.run_ensemble(gaussian(GRID), cfg, NoiseSpec(), [1], GRID, t_samples=(0.0015,))


def _sweep(**kw):
    base = dict(
        base_sim=SimConfig(lam=0, alpha=3.0, horizon=0.05, dt=1e-3),
        base_noise=const_spec(1.0, 0.0),
        c1_values=(0.0, 1.0),
        n_paths=10,
        master_seed=3,
        grid=GRID,
    )
    base.update(kw)
    return mc.SweepConfig(**base)


def test_sweep_config_validation():
    for kw in (dict(c1_values=(1.0, 0.5)), dict(c1_values=()), dict(c1_values=(-1.0,)), dict(n_paths=5),
               dict(mode_index=2)):
        with pytest.raises(ValueError):
            _sweep(**kw)
    noise = NoiseSpec((NoiseMode(1.0, Profile.gaussian(1.0, 1.0), 0.0),))
    with pytest.raises(ValueError):
        _sweep(base_noise=noise, c1_values=(0.5, 2.0), gate_assumption=True)
    _sweep(base_noise=noise, c1_values=(1.5, 2.0), gate_assumption=True)


def test_crn_seeds():
    crn = _sweep()
    assert crn.seeds_for(0) == crn.seeds_for(1)
    indep = _sweep(common_random_numbers=False)
    assert set(indep.seeds_for(0)).isdisjoint(indep.seeds_for(1))
    assert crn.spec_for(4.0).modes[0].offset == 4.0


def test_singleton_sweep_matches_estimate():
    sw = _sweep(c1_values=(2.0,), base_sim=SimConfig(lam=1, alpha=5.0, horizon=0.3, dt=1e-3, blow_up_grad_factor=100.0),
                n_paths=10, grid=DESK)
    x0 = gaussian(DESK, 1.5)
    res = mc.sweep_c1(sw, x0)
    frac, ci = mc.estimate_survival(x0, sw.base_sim, sw.spec_for(2.0), 10, 3, DESK)
    assert res.row(2.0).survival_fraction == frac and res.row(2.0).wilson_ci == ci


def test_sweep_table_shape_and_invariants():
    sw = _sweep(c1_values=(0.0, 1.0, 2.0), t_samples=(0.01, 0.02, 0.05))
    res = mc.sweep_c1(sw, gaussian(GRID))
    rows = res.table()
    assert len(rows) == 9
    assert all(set(r) == set(mc.SWEEP_COLUMNS) for r in rows)
    for r in res.rows:
        assert r.wilson_ci[0] <= r.survival_fraction <= r.wilson_ci[1]
        assert r.n_blowups + r.n_survivors == r.n_paths
        assert r.seeds_used == tuple(sw.seeds_for(0))
    with pytest.raises(KeyError):
        res.row(3.0)


def _row(c1, k, n=100):
    return mc.SurvivalRow(c1, n, n - k, k / n, mc.wilson_interval(k, n), (), ())


def test_trend_report():
    rep = mc.trend_report([_row(0, 0), _row(1, 50), _row(2, 48), _row(4, 90)])
    assert rep.n_decreases == 1 and rep.n_significant == 0 and rep.monotone()
    assert rep.decreasing_pairs == ((1, 2),)
    rep = mc.trend_report([_row(0, 90), _row(1, 10)])
    assert rep.n_significant == 1 and not rep.monotone()
    rep = mc.trend_report([_row(0, 50), _row(1, 48), _row(2, 47)])
    assert not rep.monotone(allowed_inversions=1) and rep.monotone(allowed_inversions=2)


def test_martingale_conservative_pathwise():
    cfg = SimConfig(lam=1, alpha=3.0, horizon=0.1, dt=1e-3)
    rep = mc.martingale_check(gaussian(GRID), cfg, const_spec(1j, 1.5), 20, (0.05, 0.1), 7, GRID)
    assert rep.pathwise_ok and rep.passed
    assert rep.pathwise_max_deviation <= 1e-10
    assert all(s.stderr < 1e-12 for s in rep.samples)


def test_martingale_negative_control_fails():
    cfg = SimConfig(lam=0, alpha=3.0, horizon=0.5, dt=1e-3)
    spec = const_spec(1.0, 2.0, ito=False)
    rep = mc.martingale_check(gaussian(GRID), cfg, spec, 50, (0.5,), 7, GRID)
    assert not rep.passed and rep.failed_at() == [0.5]
    assert rep.samples[0].mean < rep.mass0


def test_martingale_flags_unassessable_times():
    cfg = SimConfig(lam=1, alpha=5.0, horizon=0.3, dt=1e-3, blow_up_grad_factor=100.0)
    rep = mc.martingale_check(gaussian(DESK, 1.5), cfg, const_spec(1j, 1.0), 10, (0.1, 0.3), 7, DESK)
    early, late = rep.samples
    assert early.assessable and early.n_alive == 10
    assert not late.assessable and late.n_alive == 0
    assert rep.passed


def test_virial_check_exact_at_time_zero():
    cfg = SimConfig(lam=1, alpha=5.0, horizon=0.05, dt=1e-3)
    rep = mc.virial_bound_check(gaussian(GRID), cfg, const_spec(1.0, 1.0), 10, (0.0,), 7, GRID)
    s = rep.samples[0]
    assert s.mean == s.reference and s.passed
    assert rep.a == 0.0


def test_virial_check_deterministic_critical_case():
    cfg = SimConfig(lam=1, alpha=5.0, horizon=0.3, dt=1e-3)
    x0 = gaussian(DESK, 1.0)
    rep = mc.virial_bound_check(x0, cfg, NoiseSpec(), 10, (0.1, 0.2, 0.3), 7, DESK)
    for s in rep.samples:
        assert abs(s.mean - s.reference) <= 1e-4 * abs(rep.samples[0].reference)
    assert rep.blow_up_fraction == 0.0


def test_virial_check_rejects_complex_mu():
    cfg = SimConfig(lam=1, alpha=5.0, horizon=0.05, dt=1e-3)
    with pytest.raises(ValueError):
        mc.virial_bound_check(gaussian(GRID), cfg, const_spec(1 + 1j, 1.0), 10, (0.0,), 7, GRID)


def test_tail_time_grid():
    t = mc.tail_time_grid(5.0)
    assert t[0] == 0.0 and t[-1] == 5.0
    assert np.all(np.diff(t) > 0) and np.max(np.diff(t)) <= 2e-3 + 1e-15
    np.testing.assert_allclose(np.diff(t[:100]), 2.5e-5, rtol=1e-9)
    with pytest.raises(ValueError):
        mc.tail_time_grid(0.0)


def test_htail_conservative_template():
    tab = mc.h_tail_probability(const_spec(1j, 1.0), 5.0, 1.5, 4.0, [1.0, 2.0], 5.0, 50, 1)
    assert [r.exceedance for r in tab.rows] == [1.0, 1.0]
    assert all(r.mean_integral == pytest.approx(5.0, rel=1e-12) for r in tab.rows)
    assert all(r.domination_violations is None for r in tab.rows)
    tab = mc.h_tail_probability(const_spec(1j, 1.0), 5.0, 1.5, 6.0, [1.0], 5.0, 50, 1)
    assert tab.rows[0].exceedance == 0.0


def test_htail_gross_bound():
    horizon, alpha, v = 1.0, 5.0, 1.5
    c = 10 * horizon * math.exp((alpha - 1) * v * 3 * math.sqrt(horizon))
    tab = mc.h_tail_probability(const_spec(1.0, 1.0), alpha, v, c, [0.5, 1.0], horizon, 2000, 3)
    assert all(r.n_exceed == 0 for r in tab.rows)


def test_htail_rejects_bad_arguments():
    with pytest.raises(ValueError):
        mc.h_tail_probability(const_spec(1.0, 1.0), 5.0, 1.5, 0.0, [1.0], 1.0, 10, 1)
    spatial = NoiseSpec((NoiseMode(1.0, Profile.gaussian(1.0, 1.0), 1.0),))
    with pytest.raises(ValueError):
        mc.h_tail_probability(spatial, 5.0, 1.5, 1.0, [1.0], 1.0, 10, 1)


def test_perpetuity_reference_values():
    kappa, c = 6.0, 0.5
    for rho, p in PERPETUITY_TAIL.items():
        assert gamma.cdf(2 / (kappa ** 2 * rho ** 2 * c), 2 / kappa) == pytest.approx(p, rel=1e-12)


def test_htail_matches_perpetuity_law():
    n = 4000
    tab = mc.h_tail_probability(const_spec(1.0, 0.0), 5.0, 1.5, 0.5, [1.0, 8.0], 5.0, n, 11)
    for r in tab.rows:
        p = PERPETUITY_TAIL[r.c1]
        se = math.sqrt(p * (1 - p) / n)
        assert abs(r.exceedance - p) <= 4 * se
        assert r.domination_violations == 0


def test_htail_two_mode_domination_and_crn():
    template = NoiseSpec((NoiseMode(1.0, Profile.constant(0.0), 0.0), NoiseMode(0.3, Profile.constant(0.0), 1.0)))
    tab = mc.h_tail_probability(template, 5.0, 1.5, 0.5, [1.0, 2.0, 4.0], 2.0, 500, 5)
    assert all(r.domination_violations == 0 for r in tab.rows)
    assert tab.strictly_decreasing()
    again = mc.h_tail_probability(template, 5.0, 1.5, 0.5, [1.0, 2.0, 4.0], 2.0, 500, 5, block=64)
    assert again == tab


def test_htail_integral_is_not_pathwise_monotone():
    # d/drho of -kappa (rho^2 s - rho beta) is positive wherever beta > 2 rho s,
    # so some coupled paths gain mass as c1 grows even though the tail falls
    tab = mc.h_tail_probability(const_spec(1.0, 0.0), 5.0, 1.5, 0.5, [1.0, 2.0], 5.0, 2000, 11)
    assert tab.pathwise_increases > 0
    assert tab.rows[1].exceedance < tab.rows[0].exceedance
    indep = mc.h_tail_probability(const_spec(1.0, 0.0), 5.0, 1.5, 0.5, [1.0, 2.0], 5.0, 200, 11,
                                  common_random_numbers=False)
    assert indep.pathwise_increases == 0


def test_htail_rows_schema():
    tab = mc.h_tail_probability(const_spec(1j, 1.0), 5.0, 1.5, 4.0, [1.0], 5.0, 10, 1)
    rows = mc.htail_table_rows(tab)
    assert set(rows[0]) == set(mc.HTAIL_COLUMNS) and rows[0]["domination_violations"] == -1
