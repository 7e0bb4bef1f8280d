"""Command-line front end.

    snls <subcommand> [CONFIG] [--key=value ...]

Subcommands: ``simulate``, ``sweep``, ``verify``, ``h-tail``, ``predict`` and
``default-config`` (prints the shipped defaults).  Exit codes: 0 success,
2 configuration error, 3 numerical or I/O failure, 4 failed verification.
Errors are printed to stderr as ``ERROR <code> <message>``.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
import time
from typing import Optional, Sequence

from . import config as cfgmod
from . import montecarlo as mc
from .config import ConfigError, RunConfig
from .dynamics import run_path, write_field
from .io import Table, write_outputs
from .observables import DIAGNOSTIC_FIELDS, coefficient_a, diagnostics, virial_prediction

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_VERIFY = 4

SUBCOMMANDS = ("simulate", "sweep", "verify", "h-tail", "predict")

TRAJECTORY_COLUMNS = ("time",) + DIAGNOSTIC_FIELDS
PREDICT_COLUMNS = ("a", "V", "G", "H", "t_star", "t_tilde_star", "t_crit", "f_at_t_crit")
VERIFY_COLUMNS = ("criterion", "title", "passed", "seconds", "metrics")


def _workers(rc: RunConfig) -> Optional[int]:
    w = rc.values["montecarlo.workers"]
    if w is None:
        return None
    if isinstance(w, bool) or not isinstance(w, int) or w < 1:
        raise ConfigError("montecarlo.workers must be a positive integer or null")
    return w


def _floats(rc: RunConfig, key: str) -> list[float]:
    return cfgmod._float_list(rc.values, key)


def run_simulate(rc: RunConfig) -> tuple[list[Table], dict]:
    rec = run_path(rc.x0(), rc.sim, rc.noise, rc.master_seed, rc.grid)
    rows = []
    for t, d in zip(rec.times, rec.diagnostics):
        row = {"time": float(t)}
        row.update({f: getattr(d, f) for f in DIAGNOSTIC_FIELDS})
        rows.append(row)
    extra = {"blow_up_time": rec.blow_up_time,
             "blow_up_reason": None if rec.blow_up_reason is None else rec.blow_up_reason.value}
    if rec.terminal_field is not None:
        os.makedirs(rc.output_dir, exist_ok=True)
        write_field(os.path.join(rc.output_dir, "terminal_field.bin"), rec.terminal_field, rc.grid)
    return [Table("trajectory", TRAJECTORY_COLUMNS, rows)], extra


def run_sweep(rc: RunConfig) -> tuple[list[Table], dict]:
    sweep = mc.SweepConfig(
        base_sim=rc.sim,
        base_noise=rc.noise,
        c1_values=tuple(_floats(rc, "montecarlo.c1_values")),
        n_paths=cfgmod._number(rc.values, "montecarlo.n_paths", int),
        master_seed=rc.master_seed,
        grid=rc.grid,
        common_random_numbers=bool(rc.values["montecarlo.common_random_numbers"]),
        mode_index=cfgmod._number(rc.values, "montecarlo.mode_index", int),
        t_samples=tuple(_floats(rc, "montecarlo.t_samples")),
        gate_assumption=bool(rc.values["montecarlo.gate_assumption"]),
    )
    res = mc.sweep_c1(sweep, rc.x0(), workers=_workers(rc))
    trend = {"n_decreases": res.trend.n_decreases, "n_significant": res.trend.n_significant}
    return [Table("sweep", mc.SWEEP_COLUMNS, res.table())], {"trend": trend}


def run_htail(rc: RunConfig) -> tuple[list[Table], dict]:
    tab = mc.h_tail_probability(
        rc.noise,
        rc.sim.alpha,
        rc.analysis.v_exponent,
        cfgmod._number(rc.values, "htail.c"),
        _floats(rc, "htail.c1_values"),
        cfgmod._number(rc.values, "htail.horizon"),
        cfgmod._number(rc.values, "htail.n_paths", int),
        rc.master_seed,
        mode_index=cfgmod._number(rc.values, "montecarlo.mode_index", int),
        common_random_numbers=bool(rc.values["montecarlo.common_random_numbers"]),
    )
    return [Table("htail", mc.HTAIL_COLUMNS, mc.htail_table_rows(tab))], {"pathwise_increases": tab.pathwise_increases}


def run_predict(rc: RunConfig) -> tuple[list[Table], dict]:
    x0 = rc.x0()
    d0 = diagnostics(x0, rc.grid, rc.sim.alpha)
    H = d0.hamiltonian_lam(rc.sim.lam, rc.sim.alpha)
    d0 = dataclasses.replace(d0, hamiltonian=H)
    a_values = _floats(rc, "predict.a_values")
    if not a_values:
        power = cfgmod._number(rc.values, "predict.a_mu_power", int)
        try:
            a_values = [coefficient_a(rc.noise, d0.mass, rc.grid, mu_power=power)]
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    rows = []
    for a in a_values:
        p = virial_prediction(d0, a)
        rows.append(dict(a=a, V=d0.variance, G=d0.momentum, H=H, t_star=p.t_star, t_tilde_star=p.t_tilde_star,
                         t_crit=p.t_crit, f_at_t_crit=p.f_at_t_crit))
    return [Table("predict", PREDICT_COLUMNS, rows)], {}


def run_verify(rc: RunConfig, echo=print) -> tuple[list[Table], dict]:
    from . import acceptance

    raw = rc.values["verify.criteria"]
    if not isinstance(raw, list) or any(isinstance(n, bool) or not isinstance(n, int) for n in raw):
        raise ConfigError("verify.criteria must be a list of integers")
    unknown = [n for n in raw if n not in acceptance.CRITERIA]
    if unknown:
        raise ConfigError(f"no acceptance criterion {unknown[0]}")
    results = acceptance.run_suite(raw or None, seed=rc.master_seed, workers=_workers(rc), echo=echo)
    rows = [dict(criterion=r.number, title=r.title, passed=r.passed, seconds=round(r.seconds, 3),
                 metrics=acceptance._fmt_metrics(r.metrics)) for r in results]
    failed = [r.number for r in results if not r.passed]
    return [Table("verify", VERIFY_COLUMNS, rows)], {"failed": failed}


RUNNERS = {
    "simulate": run_simulate,
    "sweep": run_sweep,
    "h-tail": run_htail,
    "predict": run_predict,
    "verify": run_verify,
}


class _ArgError(Exception):
    pass


class _QuietParser(argparse.ArgumentParser):
    def error(self, message):
        raise _ArgError(message)


def run_command(argv: Optional[Sequence[str]] = None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    argv = list(sys.argv[1:] if argv is None else argv)
    overrides = [a for a in argv if a.startswith("--") and "=" in a]
    positional = [a for a in argv if a not in overrides]
    parser = _QuietParser(prog="snls", description="Stochastic NLS numerical laboratory")
    parser.add_argument("command", choices=SUBCOMMANDS + ("default-config",))
    parser.add_argument("config", nargs="?", default=None)

    def fail(code: int, message: str) -> int:
        print(f"ERROR {code} {' '.join(str(message).split())}", file=err)
        return code

    try:
        args = parser.parse_args(positional)
    except _ArgError as exc:
        return fail(EXIT_CONFIG, exc)
    if args.command == "default-config":
        out.write(cfgmod.default_text())
        return EXIT_OK
    started = time.time()
    try:
        rc = cfgmod.load(args.config, [*overrides, f"--experiment={args.command}"])
    except ConfigError as exc:
        return fail(EXIT_CONFIG, exc)
    try:
        if args.command == "verify":
            tables, extra = run_verify(rc, echo=lambda line: print(line, file=out))
        else:
            tables, extra = RUNNERS[args.command](rc)
    except ConfigError as exc:
        return fail(EXIT_CONFIG, exc)
    except (FloatingPointError, ArithmeticError, ValueError) as exc:
        return fail(EXIT_NUMERIC, f"numerical failure: {exc}")
    except OSError as exc:
        return fail(EXIT_NUMERIC, f"cannot write outputs: {exc}")
    try:
        write_outputs(tables, rc.output_dir, args.command, rc.values, cfgmod.config_hash(rc.values),
                      rc.master_seed, started, extra)
    except OSError as exc:
        return fail(EXIT_NUMERIC, f"cannot write outputs: {exc}")
    for t in tables:
        print(f"wrote {len(t.rows)} rows to {os.path.join(rc.output_dir, t.name + '.csv')}", file=out)
    if args.command == "verify" and extra.get("failed"):
        return fail(EXIT_VERIFY, f"verification failed for criteria {extra['failed']}")
    return EXIT_OK


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
