"""Ensemble drivers: survival sweeps, martingale and virial-bound checks, h tails.

Every ensemble member is identified by its path index.  Its seed is derived
from the master seed and that index alone, so results do not depend on how
members are distributed over worker processes or in which order they finish.
Means are accumulated with ``math.fsum`` (exactly rounded, hence order-free).
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from scipy.stats import norm

from . import noise as noisemod
from .dynamics import SimConfig, run_path
from .grid import GridSpec
from .noise import NoiseSpec
from .observables import coefficient_a, diagnostics

Z95 = float(norm.ppf(0.975))


# ---------------------------------------------------------------------------
# Small statistics helpers
# ---------------------------------------------------------------------------


def wilson_interval(successes: int, n: int, z: float = Z95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if n <= 0:
        raise ValueError("n must be positive")
    if not 0 <= successes <= n:
        raise ValueError("successes must lie in [0, n]")
    p = successes / n
    z2 = z * z
    denom = 1.0 + z2 / n
    centre = (p + z2 / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z2 / (4 * n * n)) / denom
    lo = 0.0 if successes == 0 else max(0.0, centre - half)
    hi = 1.0 if successes == n else min(1.0, centre + half)
    return lo, hi


def mean_and_stderr(values: Sequence[float]) -> tuple[float, float]:
    """Sample mean and ``std(ddof=1)/sqrt(n)``; NaN when undefined."""
    vals = [float(v) for v in values]
    n = len(vals)
    if n == 0:
        return math.nan, math.nan
    mean = math.fsum(vals) / n
    if n == 1:
        return mean, math.nan
    var = math.fsum((v - mean) ** 2 for v in vals) / (n - 1)
    return mean, math.sqrt(var / n)


def derive_path_seed(master_seed: int, *key: int) -> int:
    """63-bit seed for ensemble member ``key`` under ``master_seed``."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


def worker_count(requested: Optional[int] = None) -> int:
    """Number of worker processes, capped by ``SNLS_THREADS`` when set."""
    n = requested if requested is not None else (os.cpu_count() or 1)
    env = os.environ.get("SNLS_THREADS")
    if env:
        try:
            cap = int(env)
        except ValueError as exc:
            raise ValueError("SNLS_THREADS must be a positive integer") from exc
        if cap < 1:
            raise ValueError("SNLS_THREADS must be a positive integer")
        n = min(n, cap)
    return max(1, int(n))


def _parallel_map(fn: Callable, tasks: list, workers: Optional[int]) -> list:
    n = worker_count(workers)
    if n == 1 or len(tasks) < 2:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(n, len(tasks))) as pool:
        return list(pool.map(fn, tasks, chunksize=max(1, len(tasks) // (4 * n))))


# ---------------------------------------------------------------------------
# Per-path runs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PathSummary:
    """What an ensemble keeps from one trajectory."""

    index: int
    seed: int
    blow_up_time: Optional[float]
    blow_up_reason: Optional[str]
    sample_mass: tuple[float, ...]
    sample_variance: tuple[float, ...]
    max_mass_deviation: float

    @property
    def blew_up(self) -> bool:
        return self.blow_up_time is not None


@dataclass(frozen=True)
class _Task:
    index: int
    seed: int
    x0: np.ndarray
    cfg: SimConfig
    spec: NoiseSpec
    grid: GridSpec
    sample_steps: tuple[int, ...]


def _sample_steps(cfg: SimConfig, t_samples: Sequence[float]) -> tuple[int, ...]:
    steps = []
    for t in t_samples:
        k = int(round(float(t) / cfg.dt))
        if k < 0 or k > cfg.n_steps or abs(k * cfg.dt - float(t)) > 1e-9 * max(1.0, float(t)):
            raise ValueError(f"sample time {t} is not on the step grid")
        steps.append(k)
    return tuple(steps)


def _stride_for(steps: Sequence[int], every_step: bool) -> int:
    if every_step:
        return 1
    g = 0
    for k in steps:
        g = math.gcd(g, k)
    return g if g > 0 else 10 ** 9


def _run_task(task: _Task) -> PathSummary:
    rec = run_path(task.x0, task.cfg, task.spec, task.seed, task.grid)
    index_of = {int(k): i for i, k in enumerate(rec.step_indices)}
    mass, var = [], []
    for k in task.sample_steps:
        i = index_of.get(k)
        if i is None:
            mass.append(math.nan)
            var.append(math.nan)
        else:
            mass.append(rec.diagnostics[i].mass)
            var.append(rec.diagnostics[i].variance)
    m0 = rec.diagnostics[0].mass
    dev = max(abs(d.mass - m0) for d in rec.diagnostics)
    return PathSummary(
        index=task.index,
        seed=task.seed,
        blow_up_time=rec.blow_up_time,
        blow_up_reason=None if rec.blow_up_reason is None else rec.blow_up_reason.value,
        sample_mass=tuple(mass),
        sample_variance=tuple(var),
        max_mass_deviation=float(dev),
    )


def run_ensemble(
    x0: np.ndarray,
    cfg: SimConfig,
    spec: NoiseSpec,
    seeds: Sequence[int],
    grid: GridSpec,
    t_samples: Sequence[float] = (),
    every_step: bool = False,
    workers: Optional[int] = None,
) -> list[PathSummary]:
    """Run one trajectory per seed; summaries come back in seed order."""
    steps = _sample_steps(cfg, t_samples)
    run_cfg = replace(cfg, diagnostics_stride=_stride_for(steps, every_step))
    x0 = np.asarray(x0, dtype=complex)
    tasks = [_Task(i, int(s), x0, run_cfg, spec, grid, steps) for i, s in enumerate(seeds)]
    return _parallel_map(_run_task, tasks, workers)


# ---------------------------------------------------------------------------
# Survival
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SurvivalRow:
    """Ensemble outcome at one value of the noise offset ``c1``."""

    c1: float
    n_paths: int
    n_blowups: int
    survival_fraction: float
    wilson_ci: tuple[float, float]
    seeds_used: tuple[int, ...]
    blow_up_times: tuple[Optional[float], ...]
    t_samples: tuple[float, ...] = ()
    n_alive: tuple[int, ...] = ()
    mean_mass: tuple[float, ...] = ()
    se_mass: tuple[float, ...] = ()
    mean_variance: tuple[float, ...] = ()
    se_variance: tuple[float, ...] = ()
    f_bound: tuple[float, ...] = ()

    @property
    def n_survivors(self) -> int:
        return self.n_paths - self.n_blowups


def _summarise(
    c1: float,
    summaries: list[PathSummary],
    t_samples: Sequence[float],
    f_values: Sequence[float],
) -> SurvivalRow:
    n = len(summaries)
    n_blow = sum(1 for s in summaries if s.blew_up)
    alive, mm, sm, mv, sv = [], [], [], [], []
    for j in range(len(t_samples)):
        masses = [s.sample_mass[j] for s in summaries if not math.isnan(s.sample_mass[j])]
        variances = [s.sample_variance[j] for s in summaries if not math.isnan(s.sample_variance[j])]
        alive.append(len(masses))
        m, se = mean_and_stderr(masses)
        v, sev = mean_and_stderr(variances)
        mm.append(m)
        sm.append(se)
        mv.append(v)
        sv.append(sev)
    return SurvivalRow(
        c1=float(c1),
        n_paths=n,
        n_blowups=n_blow,
        survival_fraction=(n - n_blow) / n,
        wilson_ci=wilson_interval(n - n_blow, n),
        seeds_used=tuple(s.seed for s in summaries),
        blow_up_times=tuple(s.blow_up_time for s in summaries),
        t_samples=tuple(float(t) for t in t_samples),
        n_alive=tuple(alive),
        mean_mass=tuple(mm),
        se_mass=tuple(sm),
        mean_variance=tuple(mv),
        se_variance=tuple(sv),
        f_bound=tuple(float(f) for f in f_values),
    )


def virial_f(x0: np.ndarray, cfg: SimConfig, spec: NoiseSpec, grid: GridSpec, t_samples: Sequence[float], a: Optional[float] = None):
    """``f(t) = V + 4G t + 8H t^2 + a t^3`` at the sample times, with ``H`` for ``cfg.lam``."""
    d0 = diagnostics(np.asarray(x0, dtype=complex), grid, cfg.alpha)
    if a is None:
        a = coefficient_a(spec, d0.mass, grid)
    H = d0.hamiltonian_lam(cfg.lam, cfg.alpha)
    t = np.asarray(t_samples, dtype=float)
    return d0.variance + 4.0 * d0.momentum * t + 8.0 * H * t ** 2 + a * t ** 3, float(a)


def survival_row(
    x0: np.ndarray,
    cfg: SimConfig,
    spec: NoiseSpec,
    n_paths: int,
    master_seed: int,
    grid: GridSpec,
    t_samples: Sequence[float] = (),
    c1: float = math.nan,
    seeds: Optional[Sequence[int]] = None,
    workers: Optional[int] = None,
) -> SurvivalRow:
    if n_paths < 10:
        raise ValueError("n_paths must be at least 10")
    if seeds is None:
        seeds = [derive_path_seed(master_seed, m) for m in range(n_paths)]
    summaries = run_ensemble(x0, cfg, spec, seeds, grid, t_samples, workers=workers)
    f_vals, _ = virial_f(x0, cfg, spec, grid, t_samples) if len(t_samples) else ((), 0.0)
    return _summarise(c1, summaries, t_samples, f_vals)


def estimate_survival(
    x0: np.ndarray,
    cfg: SimConfig,
    spec: NoiseSpec,
    n_paths: int,
    master_seed: int,
    grid: GridSpec,
    workers: Optional[int] = None,
) -> tuple[float, tuple[float, float]]:
    """Fraction of ``n_paths`` trajectories with no blow-up flag on ``[0, T]``."""
    row = survival_row(x0, cfg, spec, n_paths, master_seed, grid, workers=workers)
    return row.survival_fraction, row.wilson_ci


@dataclass(frozen=True)
class SweepConfig:
    base_sim: SimConfig
    base_noise: NoiseSpec
    c1_values: tuple[float, ...]
    n_paths: int
    master_seed: int
    grid: GridSpec
    common_random_numbers: bool = True
    mode_index: int = 0
    t_samples: tuple[float, ...] = ()
    gate_assumption: bool = False

    def __post_init__(self):
        c1 = tuple(float(c) for c in self.c1_values)
        object.__setattr__(self, "c1_values", c1)
        object.__setattr__(self, "t_samples", tuple(float(t) for t in self.t_samples))
        if not c1:
            raise ValueError("c1_values must be non-empty")
        if any(c < 0 for c in c1):
            raise ValueError("c1_values must be >= 0")
        if any(b <= a for a, b in zip(c1, c1[1:])):
            raise ValueError("c1_values must be strictly ascending")
        if self.n_paths < 10:
            raise ValueError("n_paths must be at least 10")
        if not 0 <= self.mode_index < self.base_noise.n_modes:
            raise ValueError("mode_index out of range for the noise template")
        if self.gate_assumption:
            sup_f = self.base_noise.modes[self.mode_index].profile.sup_abs(self.grid)
            if any(c <= sup_f for c in c1):
                raise ValueError("every c1 must exceed sup|f_1|")

    def spec_for(self, c1: float) -> NoiseSpec:
        return self.base_noise.with_offset(self.mode_index, c1)

    def seeds_for(self, k: int) -> list[int]:
        if self.common_random_numbers:
            return [derive_path_seed(self.master_seed, m) for m in range(self.n_paths)]
        return [derive_path_seed(self.master_seed, m, k + 1) for m in range(self.n_paths)]


@dataclass(frozen=True)
class TrendReport:
    """Adjacent-pair decreases of the survival curve.

    A decrease is significant when the two Wilson intervals do not overlap.
    """

    n_decreases: int
    n_significant: int
    decreasing_pairs: tuple[tuple[float, float], ...]

    def monotone(self, allowed_inversions: int = 1) -> bool:
        return self.n_significant == 0 and self.n_decreases <= allowed_inversions


def trend_report(rows: Sequence[SurvivalRow]) -> TrendReport:
    dec, sig, pairs = 0, 0, []
    for a, b in zip(rows, rows[1:]):
        if b.survival_fraction < a.survival_fraction:
            dec += 1
            pairs.append((a.c1, b.c1))
            if b.wilson_ci[1] < a.wilson_ci[0]:
                sig += 1
    return TrendReport(dec, sig, tuple(pairs))


@dataclass(frozen=True)
class EnsembleResult:
    rows: tuple[SurvivalRow, ...]
    trend: TrendReport
    master_seed: int
    common_random_numbers: bool

    def row(self, c1: float) -> SurvivalRow:
        for r in self.rows:
            if r.c1 == float(c1):
                return r
        raise KeyError(c1)

    def table(self) -> list[dict]:
        """One record per ``(c1, t_sample)``; a row with ``t = T`` when no samples."""
        out = []
        for r in self.rows:
            lo, hi = r.wilson_ci
            if not r.t_samples:
                out.append(dict(c1=r.c1, t=math.nan, survival=r.survival_fraction, ci_lo=lo, ci_hi=hi,
                                mean_mass=math.nan, mean_V=math.nan, f_bound=math.nan, n_alive=r.n_survivors))
                continue
            for j, t in enumerate(r.t_samples):
                out.append(dict(c1=r.c1, t=t, survival=r.survival_fraction, ci_lo=lo, ci_hi=hi,
                                mean_mass=r.mean_mass[j], mean_V=r.mean_variance[j],
                                f_bound=r.f_bound[j], n_alive=r.n_alive[j]))
        return out


SWEEP_COLUMNS = ("c1", "t", "survival", "ci_lo", "ci_hi", "mean_mass", "mean_V", "f_bound", "n_alive")


def sweep_c1(sweep: SweepConfig, x0: np.ndarray, workers: Optional[int] = None) -> EnsembleResult:
    """One survival estimate per ``c1``; with CRN every value reuses the same paths."""
    rows = []
    for k, c1 in enumerate(sweep.c1_values):
        rows.append(
            survival_row(
                x0,
                sweep.base_sim,
                sweep.spec_for(c1),
                sweep.n_paths,
                sweep.master_seed,
                sweep.grid,
                t_samples=sweep.t_samples,
                c1=c1,
                seeds=sweep.seeds_for(k),
                workers=workers,
            )
        )
    return EnsembleResult(tuple(rows), trend_report(rows), int(sweep.master_seed), sweep.common_random_numbers)


# ---------------------------------------------------------------------------
# Martingale and virial checks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SampleCheck:
    t: float
    n_alive: int
    mean: float
    stderr: float
    reference: float
    assessable: bool
    passed: bool

    @property
    def deviation(self) -> float:
        return self.mean - self.reference


@dataclass(frozen=True)
class MartingaleReport:
    mass0: float
    samples: tuple[SampleCheck, ...]
    n_paths: int
    pathwise_max_deviation: Optional[float] = None
    pathwise_tol: float = 1e-10

    @property
    def pathwise_ok(self) -> Optional[bool]:
        if self.pathwise_max_deviation is None:
            return None
        return self.pathwise_max_deviation <= self.pathwise_tol

    @property
    def passed(self) -> bool:
        assessed = [s for s in self.samples if s.assessable]
        ok = bool(assessed) and all(s.passed for s in assessed)
        return ok and self.pathwise_ok is not False

    def failed_at(self) -> list[float]:
        return [s.t for s in self.samples if s.assessable and not s.passed]


def martingale_check(
    x0: np.ndarray,
    cfg: SimConfig,
    spec: NoiseSpec,
    n_paths: int,
    t_samples: Sequence[float],
    master_seed: int,
    grid: GridSpec,
    min_alive_fraction: float = 0.95,
    pathwise_tol: float = 1e-10,
    workers: Optional[int] = None,
) -> MartingaleReport:
    """Ensemble mean of mass against ``mass(x0)`` within three standard errors.

    Means are over paths alive at each sample time; a time with fewer than
    ``min_alive_fraction * n_paths`` survivors is reported as unassessable.
    Conservative constant-noise specs are additionally checked pathwise at
    every step.
    """
    seeds = [derive_path_seed(master_seed, m) for m in range(n_paths)]
    pathwise = spec.conservative and spec.spatially_constant
    summaries = run_ensemble(x0, cfg, spec, seeds, grid, t_samples, every_step=pathwise, workers=workers)
    m0 = diagnostics(np.asarray(x0, dtype=complex), grid, cfg.alpha).mass
    checks = []
    for j, t in enumerate(t_samples):
        masses = [s.sample_mass[j] for s in summaries if not math.isnan(s.sample_mass[j])]
        mean, se = mean_and_stderr(masses)
        assessable = len(masses) >= min_alive_fraction * n_paths and len(masses) >= 2
        if assessable:
            tol = 3.0 * se
            # a degenerate (zero-variance) ensemble still needs float slack
            passed = abs(mean - m0) <= max(tol, 1e-12 * abs(m0))
        else:
            passed = False
        checks.append(SampleCheck(float(t), len(masses), mean, se, m0, assessable, passed))
    dev = max(s.max_mass_deviation for s in summaries) if pathwise else None
    return MartingaleReport(m0, tuple(checks), n_paths, dev, pathwise_tol)


@dataclass(frozen=True)
class VirialBoundReport:
    a: float
    samples: tuple[SampleCheck, ...]
    n_paths: int
    n_blowups: int

    @property
    def blow_up_fraction(self) -> float:
        return self.n_blowups / self.n_paths

    @property
    def margins(self) -> list[float]:
        return [s.reference + 3.0 * s.stderr - s.mean for s in self.samples]

    @property
    def passed(self) -> bool:
        assessed = [s for s in self.samples if s.assessable]
        return bool(assessed) and all(s.passed for s in assessed)


def virial_bound_check(
    x0: np.ndarray,
    cfg: SimConfig,
    spec: NoiseSpec,
    n_paths: int,
    t_samples: Sequence[float],
    master_seed: int,
    grid: GridSpec,
    a: Optional[float] = None,
    min_alive_fraction: float = 0.5,
    workers: Optional[int] = None,
) -> VirialBoundReport:
    """Ensemble-mean variance against ``f(t) + 3 stderr`` over surviving paths."""
    if not spec.all_real:
        raise ValueError("virial bound check needs real mu_k")
    seeds = [derive_path_seed(master_seed, m) for m in range(n_paths)]
    summaries = run_ensemble(x0, cfg, spec, seeds, grid, t_samples, workers=workers)
    f_vals, a = virial_f(x0, cfg, spec, grid, t_samples, a)
    checks = []
    for j, t in enumerate(t_samples):
        vs = [s.sample_variance[j] for s in summaries if not math.isnan(s.sample_variance[j])]
        mean, se = mean_and_stderr(vs)
        assessable = len(vs) >= max(2, min_alive_fraction * n_paths)
        f = float(f_vals[j])
        if not assessable:
            passed = False
        elif math.isnan(se):
            passed = mean <= f + 1e-12 * max(1.0, abs(f))
        else:
            passed = mean <= f + 3.0 * se + 1e-12 * max(1.0, abs(f))
        checks.append(SampleCheck(float(t), len(vs), mean, se, f, assessable, passed))
    n_blow = sum(1 for s in summaries if s.blew_up)
    return VirialBoundReport(float(a), tuple(checks), n_paths, n_blow)


# ---------------------------------------------------------------------------
# Scalar tail of the damping functional
# ---------------------------------------------------------------------------


def tail_time_grid(
    horizon: float,
    fine_dt: float = 2.5e-5,
    fine_until: float = 0.25,
    max_dt: float = 2e-3,
    growth: float = 1.02,
) -> np.ndarray:
    """Uniform fine steps on ``[0, fine_until]``, then geometric growth capped at ``max_dt``."""
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    t_fine = min(fine_until, horizon)
    n_fine = max(1, int(round(t_fine / fine_dt)))
    ts = list(np.linspace(0.0, t_fine, n_fine + 1))
    dt = t_fine / n_fine
    t = t_fine
    while t < horizon - 1e-12:
        dt = min(dt * growth, max_dt)
        t = min(t + dt, horizon)
        ts.append(t)
    return np.array(ts)


def _trapezoid_rows(y: np.ndarray, t: np.ndarray) -> np.ndarray:
    return np.trapezoid(y, t, axis=-1)


@dataclass(frozen=True)
class HTailRow:
    c1: float
    c: float
    n_paths: int
    n_exceed: int
    exceedance: float
    wilson_ci: tuple[float, float]
    domination_violations: Optional[int]
    mean_integral: float


@dataclass(frozen=True)
class HTailTable:
    rows: tuple[HTailRow, ...]
    alpha: float
    v: float
    horizon: float
    seed: int
    # path pairs (m, adjacent c1 values) where the integral grew with c1
    pathwise_increases: int

    def exceedances(self) -> list[float]:
        return [r.exceedance for r in self.rows]

    def strictly_decreasing(self) -> bool:
        e = self.exceedances()
        return all(b < a for a, b in zip(e, e[1:]))


HTAIL_COLUMNS = ("c1", "c", "exceedance", "ci_lo", "ci_hi", "n_paths", "n_exceed", "mean_integral", "domination_violations")


def _scalar_modes(spec: NoiseSpec) -> tuple[np.ndarray, np.ndarray]:
    """Per-mode ``Re phi_k`` and drift ``Re mu_hat_k`` for constant modes."""
    if not spec.spatially_constant:
        raise ValueError("h-tail computation needs spatially constant modes")
    re_phi, drift = [], []
    factor = 1.0 if spec.ito_half_correction else 2.0
    for m in spec.modes:
        e = m.profile.amplitude + m.offset
        rp = m.mu.real * e
        re_phi.append(rp)
        drift.append(factor * rp * rp)
    return np.array(re_phi, dtype=float), np.array(drift, dtype=float)


def _tail_block(seeds: Sequence[int], n_modes: int, times: np.ndarray) -> np.ndarray:
    """Brownian values, shape ``(n_paths, n_modes, n_times)``, one Philox stream per path and mode."""
    dts = np.sqrt(np.diff(times))
    out = np.zeros((len(seeds), n_modes, times.size))
    for i, s in enumerate(seeds):
        for j in range(n_modes):
            z = noisemod._stream(int(s), j, 0).standard_normal(times.size - 1)
            np.cumsum(z * dts, out=out[i, j, 1:])
    return out


def h_tail_probability(
    template: NoiseSpec,
    alpha: float,
    v: float,
    c: float,
    c1_values: Sequence[float],
    horizon: float,
    n_paths: int,
    seed: int,
    mode_index: int = 0,
    common_random_numbers: bool = True,
    times: Optional[np.ndarray] = None,
    block: int = 256,
) -> HTailTable:
    """Exceedance fractions of ``int_0^horizon h(s)^v ds >= c`` across ``c1``.

    ``h^v = exp(-(alpha-1) v sum_k (Re mu_hat_k s - Re phi_k beta_k(s)))``; no PDE
    is solved.  On every path the integral is compared with the bound
    ``C^N * int exp(-(alpha-1) v (Re mu_hat_1 s - Re phi_1 beta_1(s))) ds`` with
    ``C = max(1, max_{k>=2} sup_s h_k^v)``; violations are counted per ``c1``.
    """
    if c <= 0:
        raise ValueError("c must be positive")
    if n_paths < 1:
        raise ValueError("n_paths must be positive")
    c1_values = [float(x) for x in c1_values]
    t = tail_time_grid(horizon) if times is None else np.asarray(times, dtype=float)
    kappa = (alpha - 1.0) * v
    n_modes = template.n_modes
    specs = [template.with_offset(mode_index, c1) for c1 in c1_values]
    modes = [_scalar_modes(s) for s in specs]

    integrals = np.zeros((len(c1_values), n_paths))
    violations = [0] * len(c1_values)
    check_dom = [abs(rp[mode_index]) > 0 for rp, _ in modes]
    shared = [derive_path_seed(seed, m) for m in range(n_paths)]
    for start in range(0, n_paths, block):
        idx = range(start, min(n_paths, start + block))
        crn_beta = _tail_block([shared[m] for m in idx], n_modes, t) if common_random_numbers else None
        for k, (re_phi, drift) in enumerate(modes):
            if crn_beta is None:
                beta = _tail_block([derive_path_seed(seed, m, k + 1) for m in idx], n_modes, t)
            else:
                beta = crn_beta
            # per-mode log h^v, shape (paths, modes, times)
            logs = -kappa * (drift[None, :, None] * t[None, None, :] - re_phi[None, :, None] * beta)
            with np.errstate(over="ignore"):
                total = _trapezoid_rows(np.exp(logs.sum(axis=1)), t)
                integrals[k, idx.start : idx.stop] = total
                if check_dom[k]:
                    if n_modes == 1:
                        bound = total
                    else:
                        first = _trapezoid_rows(np.exp(logs[:, mode_index, :]), t)
                        others = np.delete(logs, mode_index, axis=1)
                        big_c = np.maximum(0.0, others.max(axis=2).max(axis=1))
                        bound = np.exp(n_modes * big_c) * first
                    violations[k] += int(np.sum(total > bound * (1.0 + 1e-12)))
    rows = []
    for k, c1 in enumerate(c1_values):
        vals = integrals[k]
        if not np.all(np.isfinite(vals)):
            raise FloatingPointError("non-finite damping integral")
        hits = int(np.sum(vals >= c))
        rows.append(
            HTailRow(
                c1=c1,
                c=float(c),
                n_paths=n_paths,
                n_exceed=hits,
                exceedance=hits / n_paths,
                wilson_ci=wilson_interval(hits, n_paths),
                domination_violations=violations[k] if check_dom[k] else None,
                mean_integral=math.fsum(vals.tolist()) / n_paths,
            )
        )
    increases = 0
    if common_random_numbers:
        increases = int(np.sum(np.diff(integrals, axis=0) > 0))
    return HTailTable(tuple(rows), float(alpha), float(v), float(horizon), int(seed), increases)


def htail_table_rows(table: HTailTable) -> list[dict]:
    out = []
    for r in table.rows:
        out.append(dict(c1=r.c1, c=r.c, exceedance=r.exceedance, ci_lo=r.wilson_ci[0], ci_hi=r.wilson_ci[1],
                        n_paths=r.n_paths, n_exceed=r.n_exceed, mean_integral=r.mean_integral,
                        domination_violations=-1 if r.domination_violations is None else r.domination_violations))
    return out
