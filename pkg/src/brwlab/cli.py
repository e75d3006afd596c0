"""Batch command line front-end: ``brwlab {analyze,moments,simulate,vaccinate-sweep}``.

Exit codes: 0 success, 1 configuration error, 2 numerical failure,
3 particle-cap abort.
"""
from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import io
from .analysis import classify_regime, duality_check, fit_growth_rate, largest_box_eigenvalue, predicted_growth_law
from .config import RunConfig, load_config
from .errors import BrwError, ConfigError, NumericalError, ParticleCapExceeded
from .moments import (
    evolve_higher_moments,
    integral_moment_oracle,
    solve_generating_function,
    time_grid,
)
from .montecarlo import InitialCondition, default_workers, estimate_moments, run
from .operators import LatticeBox, SourceLanczos, build_operator, critical_intensity, transition_probabilities
from .vaccination import vaccinated_model

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_CAP = 0, 1, 2, 3
SEED_ENV = "BRWLAB_SEED"
_DENSE_TRANSITION_LIMIT = 5000


class _Parser(argparse.ArgumentParser):
    # usage errors are configuration errors, not numerical ones
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _seed(cfg: RunConfig) -> int:
    env = os.environ.get(SEED_ENV)
    if env is None or env.strip() == "":
        return cfg.seed
    try:
        return int(env)
    except ValueError:
        raise ConfigError(f"{SEED_ENV} must be an integer, got {env!r}") from None


def _box(cfg: RunConfig) -> LatticeBox:
    return LatticeBox(cfg.dimension, cfg.half_width)


def cmd_analyze(cfg: RunConfig, args) -> None:
    model = cfg.model
    crit = critical_intensity(model, cfg.schedule)
    regime = classify_regime(model, criticality=crit)
    out = Path(args.out)

    if cfg.betas is not None:
        betas = list(cfg.betas)
    else:
        top = 2.0 * max(crit.boxes[-1].beta_c, model.beta, 0.05)
        betas = list(np.linspace(0.0, top, 21))
    rows = []
    for L in cfg.schedule:
        lanczos = SourceLanczos(build_operator(model, LatticeBox(cfg.dimension, L)))
        rows += [(L, b, lanczos.top_eigenvalue(b)) for b in betas]
    io.write_eigenvalue_vs_beta(out / "eigenvalue_vs_beta.csv", rows)
    io.write_critical_boxes(out / "critical_boxes.csv", crit)
    io.write_regime_summary(out / "regime_summary.csv", regime)

    if args.transition:
        box = _box(cfg)
        if box.size > _DENSE_TRANSITION_LIMIT:
            raise ConfigError(
                f"box.half_width: {box.size} sites is too many for dense transition probabilities"
            )
        walk = build_operator(model, box)
        mats = [transition_probabilities(walk, t) for t in args.transition]
        io.write_transition_kernel(out / "transition_kernel.csv", box, args.transition, mats, cfg.sites)

    if args.fit:
        box = _box(cfg)
        times = time_grid(cfg.t_max, cfg.steps)
        origin = (0,) * cfg.dimension
        local = evolve_higher_moments(model, box, "local", cfg.max_order, times, target=origin)
        total = evolve_higher_moments(model, box, "total", cfg.max_order, times)
        fit_rows = []
        for n in range(1, cfg.max_order + 1):
            law = predicted_growth_law(regime.regime, cfg.dimension, n)
            for tag, form, field in (("u", law.local, local[n - 1]), ("v", law.total, total[n - 1])):
                fit = fit_growth_rate(times, field.at(origin), cfg.fit_window, form)
                fit_rows.append(
                    (law.regime, cfg.dimension, n, f"{tag}={form.describe()}", fit.estimate, fit.stderr, fit.r2)
                )
        io.write_growth_fit(out / "growth_fit.csv", fit_rows)

    print(f"dimension        {cfg.dimension}")
    print(f"beta             {model.beta:.17g}")
    print(f"beta_c           {crit.extrapolated:.17g}")
    print(f"beta_c (Green)   {crit.green_extrapolated:.17g}")
    print(f"lambda0 (L={regime.half_width})  {regime.lambda0:.17g}")
    print(f"regime           {regime.regime}")


def cmd_moments(cfg: RunConfig, args) -> None:
    model = cfg.model
    box = _box(cfg)
    out = Path(args.out)
    times = time_grid(cfg.t_max, cfg.steps)
    target = cfg.target if cfg.flavor == "local" else None
    fields = evolve_higher_moments(model, box, cfg.flavor, cfg.max_order, times, target=target)

    oracle = None
    if args.oracle == "integral":
        oracle = {
            n: integral_moment_oracle(model, box, cfg.flavor, n, times, target=target)
            for n in range(1, cfg.max_order + 1)
        }
    gaps = None
    if args.duality:
        report = duality_check(model, box, times)
        gaps = report.gaps
        io.write_duality_report(out / "duality_report.csv", report)
        print(f"duality max gap  {report.max_gap:.17g} ({'pass' if report.passed else 'FAIL'})")
    io.write_moments(out / "moments.csv", fields, cfg.sites, oracle=oracle, duality_gaps=gaps)
    if oracle is not None:
        idx = box.indices(cfg.sites)
        worst = max(
            float(np.max(np.abs(f.values[:, idx] - oracle[f.order].values[:, idx]) / np.abs(oracle[f.order].values[:, idx])))
            for f in fields
        )
        print(f"max relative ODE/integral discrepancy  {worst:.17g}")

    if args.extinction:
        gf = [
            solve_generating_function(model, box, z, cfg.flavor, times, target=target)
            for z in cfg.z_values
        ]
        io.write_extinction(out / "extinction.csv", gf, cfg.sites)


def cmd_simulate(cfg: RunConfig, args) -> None:
    model = cfg.model
    seed = _seed(cfg)
    if cfg.initial == "single":
        ic = InitialCondition.single(cfg.start)
    else:
        ic = InitialCondition.windowed(cfg.window, cfg.dimension)
    checkpoints = time_grid(cfg.t_max, cfg.steps)
    stats = run(
        model, ic, cfg.t_max, cfg.replicas, seed,
        checkpoints=checkpoints, sites=cfg.sites, cap=cfg.cap, workers=args.threads,
    )
    est = estimate_moments(stats, range(1, cfg.mc_max_order + 1))
    io.write_mc_moments(Path(args.out) / "mc_moments.csv", est, ic.label)
    n_capped = int(stats.capped.sum())
    print(f"replicas {stats.replicas} (capped {n_capped}), seed {seed}")
    print(f"mean population at t={cfg.t_max:g}: {est.population[0, -1]:.17g} +- {est.population_se[0, -1]:.3g}")


def cmd_vaccinate_sweep(cfg: RunConfig, args) -> None:
    alphas = args.alphas if args.alphas else list(np.round(np.linspace(1.0, 0.1, 10), 12))
    rows = []
    for alpha in alphas:
        vm = vaccinated_model(cfg.base_model, alpha)
        rows.append((alpha, vm.beta, largest_box_eigenvalue(vm, cfg.half_width)))
    io.write_vaccination_sweep(Path(args.out) / "vaccination_sweep.csv", rows)
    signs = [r[2] > 0 for r in rows]
    changes = sum(a != b for a, b in zip(signs, signs[1:]))
    print(f"{len(rows)} alphas, lambda0 sign changes: {changes}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="brwlab", description="Branching random walks with one branching source on Z^d.")
    parser.add_argument(
        "--threads", type=int, default=default_workers(),
        help="worker processes for simulations (default: available CPUs)",
    )
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config", help="key = value configuration file")
        p.add_argument("-o", "--out", default=".", help="output directory (default: current)")
        p.set_defaults(func=func)
        return p

    p = add("analyze", cmd_analyze, "critical intensity, eigenvalue curve and regime")
    p.add_argument("--transition", type=_floats, default=None, metavar="T1,T2,...",
                   help="also write transition probabilities between output.sites at these times")
    p.add_argument("--fit", action="store_true", help="also fit growth rates of the moments")

    p = add("moments", cmd_moments, "moment equations on a truncated box")
    p.add_argument("--oracle", choices=["integral"], default=None,
                   help="add columns from the integral-equation oracle")
    p.add_argument("--duality", action="store_true", help="add the forward/backward gap column")
    p.add_argument("--extinction", action="store_true", help="also write generating functions for moments.z")

    add("simulate", cmd_simulate, "Monte Carlo moments")

    p = add("vaccinate-sweep", cmd_vaccinate_sweep, "principal eigenvalue over a vaccination grid")
    p.add_argument("--alphas", type=_floats, default=None, metavar="A1,A2,...",
                   help="vaccination levels (default: 1.0, 0.9, ..., 0.1)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be positive")
        cfg = load_config(args.config)
        args.func(cfg, args)
    except ParticleCapExceeded as exc:
        print(f"brwlab: particle cap: {exc}", file=sys.stderr)
        return EXIT_CAP
    except ConfigError as exc:
        print(f"brwlab: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"brwlab: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except BrwError as exc:
        print(f"brwlab: error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
