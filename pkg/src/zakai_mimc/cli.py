"""Experiment command line: rates, theta, estimate, complexity, profit.

Every run is reproducible from (config, global seed); all numeric CSV output
uses 17 significant digits so values round-trip losslessly.

Exit codes: 0 success, 2 config error, 3 stability violation, 4 budget
exceeded.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import analysis, coupling, estimators
from .config import ExperimentConfig
from .coupling import BaseMesh, LevelPair
from .errors import BudgetExceeded, ConfigError, StabilityViolation, ZakaiMimcError
from .spde import Functional, ModelParams, Scheme

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STABILITY = 3
EXIT_BUDGET = 4


def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.17g}"
    return str(x)


def write_csv(path: Path, header: list, rows: list) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(header)]
    lines += [",".join(_fmt(x) for x in row) for row in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def measure_rate_table(
    cfg: ExperimentConfig,
    l1_range,
    l2_range,
    samples: int,
) -> dict:
    """Sample mean/variance/cost of the mixed difference on a level grid."""
    params = ModelParams(mu=cfg.mu, rho=cfg.rho, T=cfg.T, x0=cfg.x0)
    base = BaseMesh(cfg.x_min, cfg.x_max, cfg.h0, cfg.k0_value)
    table = {}
    for l1 in l1_range:
        for l2 in l2_range:
            pair = LevelPair(l1, l2)
            grid = base.grid(params, l1, l2)
            chunk = max(16, min(samples, (1 << 23) // grid.n_steps))
            vals = []
            done = 0
            cost = 0.0
            while done < samples:
                take = min(chunk, samples - done)
                deltas, _, cost = coupling.mixed_difference_batch(
                    pair, params, base, Scheme(cfg.scheme),
                    Functional(cfg.functional), cfg.global_seed, done, take,
                )
                vals.append(deltas)
                done += take
            table[pair] = estimators.LevelStats.from_samples(
                pair, np.concatenate(vals), cost
            )
    return table


def diagonal_slopes(table: dict) -> tuple:
    """Least-squares slopes of log2|mean| and log2 var against l1 + l2."""
    xs, ms, vs = [], [], []
    for pair, st in table.items():
        if st.mean == 0.0 or st.variance <= 0.0:
            continue
        xs.append(pair.l1 + pair.l2)
        ms.append(np.log2(abs(st.mean)))
        vs.append(np.log2(st.variance))
    mean_slope = float(np.polyfit(xs, ms, 1)[0])
    var_slope = float(np.polyfit(xs, vs, 1)[0])
    return mean_slope, var_slope


def cmd_rates(cfg: ExperimentConfig, out: Path, samples: int, lmin: int, lmax: int) -> int:
    levels = range(lmin, lmax + 1)
    table = measure_rate_table(cfg, levels, levels, samples)
    header = ["l1"] + [str(l2) for l2 in levels]
    mean_rows, var_rows = [], []
    for l1 in levels:
        mean_rows.append([l1] + [np.log2(abs(table[LevelPair(l1, l2)].mean)) for l2 in levels])
        var_rows.append([l1] + [np.log2(table[LevelPair(l1, l2)].variance) for l2 in levels])
    write_csv(out / "rates_mean_log2.csv", header, mean_rows)
    write_csv(out / "rates_var_log2.csv", header, var_rows)
    ms, vs = diagonal_slopes(table)
    write_csv(
        out / "rates_slopes.csv",
        ["quantity", "slope"],
        [["log2_abs_mean_per_diagonal", ms], ["log2_variance_per_diagonal", vs]],
    )
    write_csv(
        out / "rates_levels.csv",
        ["l1", "l2", "count", "mean", "variance", "avg_cost"],
        [
            [p.l1, p.l2, st.count, st.mean, st.variance, st.avg_cost]
            for p, st in sorted(table.items())
        ],
    )
    print(f"rates: diagonal slopes mean={ms:.3f} var={vs:.3f} -> {out}")
    return EXIT_OK


def cmd_theta(cfg: ExperimentConfig, out: Path) -> int:
    rhos = [round(0.05 * i, 10) for i in range(1, 15)]
    rows = []
    for rho in rhos:
        res = analysis.compute_theta(rho, cfg.T, k0=cfg.k0_reference)
        rows.append([rho, res.theta, res.n_steps, int(res.converged)])
    write_csv(out / "theta_vs_rho.csv", ["rho", "theta", "n_steps", "converged"], rows)
    own = analysis.compute_theta(cfg.rho, cfg.T, k0=cfg.k0_reference)
    print(f"theta(rho={cfg.rho}) = {own.theta:.6f} -> {out}")
    return EXIT_OK


def _report_rows(report) -> list:
    return [
        [
            report.method,
            report.scheme,
            report.functional,
            report.epsilon,
            report.value,
            report.est_variance,
            report.est_bias,
            report.total_work,
            report.calibration_work,
            report.wall_seconds,
            report.alpha,
            report.theta,
            report.k0,
            report.constants[0],
            report.constants[1],
            report.constants[2],
            report.seed,
        ]
    ]


_REPORT_HEADER = [
    "method", "scheme", "functional", "epsilon", "value", "est_variance",
    "est_bias", "work_units", "calibration_work_units", "wall_seconds",
    "alpha", "theta", "k0", "c1", "c2", "c3", "seed",
]


def _write_levels(path: Path, report) -> None:
    write_csv(
        path,
        ["l1", "l2", "count", "mean", "variance", "avg_cost"],
        [
            [st.pair.l1, st.pair.l2, st.count, st.mean, st.variance, st.avg_cost]
            for st in report.per_level
        ],
    )


def cmd_estimate(cfg: ExperimentConfig, out: Path) -> int:
    runner = estimators.run_mlmc if cfg.method == "mlmc" else estimators.run_mimc
    report = runner(cfg)
    write_csv(out / "estimate_report.csv", _REPORT_HEADER, _report_rows(report))
    _write_levels(out / "estimate_levels.csv", report)
    print(
        f"{report.method} estimate = {report.value:.6e} "
        f"(target rmse {report.epsilon:g}, work {report.total_work:.3e}) -> {out}"
    )
    return EXIT_OK


def cmd_complexity(cfg: ExperimentConfig, out: Path) -> int:
    eps_list = cfg.epsilon_list
    if len(eps_list) < 2:
        raise ConfigError("complexity needs an epsilon sweep (>= 2 values)")
    runner = estimators.run_mlmc if cfg.method == "mlmc" else estimators.run_mimc
    rows = []
    for eps in eps_list:
        sub = ExperimentConfig(**{**cfg.__dict__, "epsilon": eps})
        t0 = time.perf_counter()
        report = runner(sub)
        wall = time.perf_counter() - t0
        rows.append(
            [
                cfg.method, cfg.scheme, cfg.functional, eps,
                report.total_work, wall, eps * eps * report.total_work,
                report.calibration_work,
            ]
        )
    write_csv(
        out / "complexity.csv",
        [
            "method", "scheme", "functional", "epsilon", "work_units",
            "wall_seconds", "eps2_work", "calibration_work_units",
        ],
        rows,
    )
    print(f"complexity sweep over {len(eps_list)} targets -> {out}")
    return EXIT_OK


def cmd_profit(cfg: ExperimentConfig, out: Path, samples: int, lmax: int) -> int:
    table = measure_rate_table(cfg, range(lmax + 1), range(lmax + 1), samples)
    rows = []
    for pair, st in sorted(table.items()):
        if pair == LevelPair(0, 0) or st.mean == 0.0 or st.variance <= 0.0:
            continue
        profit = abs(st.mean) / np.sqrt(st.variance * st.avg_cost)
        rows.append([pair.l1, pair.l2, np.log2(profit)])
    write_csv(out / "profit_log2.csv", ["l1", "l2", "log2_profit"], rows)
    print(f"profit grid up to ({lmax},{lmax}) -> {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="zakai-mimc",
        description="SPDE loss estimation experiments (MIMC / MLMC).",
    )
    p.add_argument("--config", type=Path, help="YAML config file")
    p.add_argument("--seed", type=int, help="global seed override")
    p.add_argument("--out", type=Path, help="output directory override")
    p.add_argument("--scheme", choices=["a", "b"], help="scheme override")
    p.add_argument(
        "--functional", choices=["trap", "rect"], help="loss functional override"
    )
    p.add_argument("--method", choices=["mimc", "mlmc"], help="method override")
    p.add_argument(
        "--epsilon", type=str, help="RMSE target or comma-separated sweep"
    )
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("rates", help="mixed-difference mean/variance tables")
    sp.add_argument("--samples", type=int, default=10_000)
    sp.add_argument("--lmin", type=int, default=1)
    sp.add_argument("--lmax", type=int, default=5)

    sub.add_parser("theta", help="high-wave decay constant vs correlation")
    sub.add_parser("estimate", help="one estimator run at the first epsilon")
    sub.add_parser("complexity", help="epsilon sweep with work accounting")

    sp = sub.add_parser("profit", help="measured profit grid")
    sp.add_argument("--samples", type=int, default=2000)
    sp.add_argument("--lmax", type=int, default=4)
    return p


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg.global_seed = args.seed
    if args.out is not None:
        cfg.output_dir = str(args.out)
    if args.scheme is not None:
        cfg.scheme = args.scheme
    if args.functional is not None:
        cfg.functional = args.functional
    if args.method is not None:
        cfg.method = args.method
    if args.epsilon is not None:
        parts = [float(tok) for tok in args.epsilon.split(",") if tok]
        cfg.epsilon = parts[0] if len(parts) == 1 else parts
    return cfg.validate()


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load_config(args)
        out = Path(cfg.output_dir)
        if args.command == "rates":
            return cmd_rates(cfg, out, args.samples, args.lmin, args.lmax)
        if args.command == "theta":
            return cmd_theta(cfg, out)
        if args.command == "estimate":
            return cmd_estimate(cfg, out)
        if args.command == "complexity":
            return cmd_complexity(cfg, out)
        if args.command == "profit":
            return cmd_profit(cfg, out, args.samples, args.lmax)
        raise ConfigError(f"unknown command {args.command!r}")
    except StabilityViolation as exc:
        print(f"stability violation: {exc}", file=sys.stderr)
        return EXIT_STABILITY
    except BudgetExceeded as exc:
        print(f"budget exceeded: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (ConfigError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ZakaiMimcError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
