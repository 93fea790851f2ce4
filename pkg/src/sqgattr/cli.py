"""Command line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 numerical blow-up,
3 a gating (exact-constant) check reported ``violated``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable

from sqgattr.config import ExperimentConfig, config_from_dict, load_config
from sqgattr.convergence import ConvergenceRun, check_spectral_lemma, run_convergence
from sqgattr.errors import BlowUpError, ConfigurationError, InsufficientSamplingError, UndefinedRatioError
from sqgattr.estimates import (
    VIOLATED,
    BoundReport,
    EstimateLedger,
    absorbing_radii,
    beta_exponent,
    check_absorbing_entry,
    check_decay_l2,
    check_decay_linf,
    check_energy_inequality,
    check_holder_absorbing,
    check_sobolev_inequality,
    is_nonincreasing,
    k_infty,
    xi_weight,
)
from sqgattr.grid import SpectrumRecipe, generate_field, linf_norm, read_checkpoint, write_checkpoint
from sqgattr.quadrature import (
    QuadratureScheme,
    cordoba_residual,
    lower_bound_ratio,
    riesz_bound_ratio,
    write_constant_report,
)
from sqgattr.solver import initial_state, integrate

EXIT_OK, EXIT_CONFIG, EXIT_BLOWUP, EXIT_VIOLATED = 0, 1, 2, 3

TRAJECTORY_CSV = "trajectory.csv"
log = logging.getLogger("sqgattr")


def _outdir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.write_resolved(out)
    return out


def _write_reports(out: Path, reports: list[BoundReport]) -> None:
    rdir = out / "reports"
    rdir.mkdir(exist_ok=True)
    for rep in reports:
        (rdir / f"{rep.name}.json").write_text(rep.to_json())
    (out / "reports.json").write_text(json.dumps([r.to_dict() for r in reports], indent=2))


def _map(fn: Callable, items, threads: int) -> list:
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def _simulate_into(cfg: ExperimentConfig, out: Path) -> int:
    theta0, f = cfg.initial_field(), cfg.forcing_field()
    state = initial_state(theta0, cfg.gamma, f, cfg.epsilon)
    write_checkpoint(out / "initial.sqgf", state.theta, cfg.gamma, 0.0)
    write_checkpoint(out / "forcing.sqgf", state.forcing, cfg.gamma, 0.0)
    ledger = EstimateLedger(cfg.gamma)
    try:
        traj = integrate(
            state,
            cfg.scheme,
            cfg.T,
            sample_every=cfg.output.interval,
            checkpoint_times=cfg.output.checkpoints,
            checkpoint_dir=out / "checkpoints",
            **ledger.hooks(),
        )
    except BlowUpError as exc:
        ledger.to_csv(out / TRAJECTORY_CSV)
        last = exc.state
        info = {"error": str(exc), "t": None if last is None else last.t}
        (out / "blowup.json").write_text(json.dumps(info, indent=2))
        log.error("blow-up: %s", exc)
        return EXIT_BLOWUP
    ledger.to_csv(out / TRAJECTORY_CSV)
    write_checkpoint(out / "final.sqgf", traj.final.theta, cfg.gamma, traj.final.t)
    log.info("simulated to t=%g in %d steps", traj.final.t, len(traj.dts))
    return EXIT_OK


def cmd_simulate(cfg: ExperimentConfig, args: argparse.Namespace) -> int:
    return _simulate_into(cfg, _outdir(cfg))


def _verify_dir(cfg: ExperimentConfig, run_dir: Path, out: Path) -> int:
    theta0, gamma, _ = read_checkpoint(run_dir / "initial.sqgf")
    f, _, _ = read_checkpoint(run_dir / "forcing.sqgf")
    ledger = EstimateLedger.from_csv(run_dir / TRAJECTORY_CSV, gamma)
    kappa = cfg.kappa
    exact = [
        check_decay_l2(ledger, theta0, f, kappa),
        check_decay_linf(ledger, theta0, f, kappa),
        check_energy_inequality(ledger, theta0, f, kappa),
    ]
    fields = [theta0]
    if (run_dir / "final.sqgf").exists():
        fields.append(read_checkpoint(run_dir / "final.sqgf")[0])
    for m, s in ((0.0, gamma - 1), (0.0, 1.0), (1.0, 1.0)):
        for i, phi in enumerate(fields):
            rep = check_spectral_lemma(phi, gamma, m, s)
            rep.name += "_initial" if i == 0 else "_final"
            exact.append(rep)
    advisory: list[BoundReport] = []
    k_inf = k_infty(theta0, f, kappa)
    if k_inf > 0:
        try:
            advisory.append(check_sobolev_inequality(ledger, 2 - gamma, gamma, k_inf, f))
        except InsufficientSamplingError as exc:
            log.warning("Sobolev inequality skipped: %s", exc)
    radii = absorbing_radii(gamma, f, kappa, beta=beta_exponent(k_inf, gamma, cfg.c3) if k_inf > 0 else 0.25)
    if radii.R_inf > 0:
        advisory.append(
            check_absorbing_entry(
                [(ledger.times, ledger.series("linf"))], radii.R_inf, "linf", confinement=1.05, formula_radius=radii.R_inf
            )
        )
    (out / "radii.json").write_text(json.dumps(radii.__dict__, indent=2))
    _write_reports(out, exact + advisory)
    bad = [r.name for r in exact if r.status == VIOLATED]
    for r in exact + advisory:
        log.info("%-40s %s", r.name, r.status)
    if bad:
        log.error("violated: %s", ", ".join(bad))
        return EXIT_VIOLATED
    return EXIT_OK


def cmd_verify(cfg: ExperimentConfig, args: argparse.Namespace) -> int:
    if args.trajectory is not None:
        run_dir = Path(args.trajectory)
        needed = [TRAJECTORY_CSV, "initial.sqgf", "forcing.sqgf"]
        missing = [name for name in needed if not (run_dir / name).exists()]
        if missing:
            log.error("%s: missing %s", run_dir, ", ".join(missing))
            return EXIT_CONFIG
        out = Path(args.out) if args.out else run_dir
        out.mkdir(parents=True, exist_ok=True)
        return _verify_dir(cfg, run_dir, out)
    out = _outdir(cfg)
    code = _simulate_into(cfg, out)
    if code != EXIT_OK:
        return code
    return _verify_dir(cfg, out, out)


def cmd_holder(cfg: ExperimentConfig, args: argparse.Namespace) -> int:
    out = _outdir(cfg)
    theta0, f = cfg.initial_field(), cfg.forcing_field()
    k_inf = k_infty(theta0, f, cfg.kappa)
    beta = cfg.holder.beta if cfg.holder.beta is not None else beta_exponent(k_inf, cfg.gamma, cfg.c3)
    ledger = EstimateLedger(cfg.gamma, beta=beta, xi=lambda t: xi_weight(t, cfg.gamma, beta))
    state = initial_state(theta0, cfg.gamma, f, cfg.epsilon)
    integrate(state, cfg.scheme, cfg.T, sample_every=cfg.output.interval, **ledger.hooks())
    ledger.to_csv(out / TRAJECTORY_CSV)
    report = check_holder_absorbing(ledger, k_inf, cfg.gamma, beta)
    report.details["psi_monotone"] = is_nonincreasing(ledger.series("psi"))
    _write_reports(out, [report])
    log.info("beta=%g c_psi=%g holder monotone=%s", beta, report.constant, report.details["holder_monotone"])
    return EXIT_OK


def cmd_converge(cfg: ExperimentConfig, args: argparse.Namespace) -> int:
    out = _outdir(cfg)
    conv = cfg.convergence
    f = cfg.forcing_field()
    run = ConvergenceRun(
        cfg.initial_field(),
        conv.gammas,
        forcing=f if linf_norm(f) > 0 else None,
        T=conv.T,
        scheme=cfg.scheme,
        sample_every=conv.sample_every,
        epsilon=cfg.epsilon,
        transient=conv.transient,
        spread_limit=conv.spread_limit,
    )
    report = run_convergence(run, threads=args.threads)
    report.to_csv(out / "convergence.csv")
    report.write_summary(out / "summary.json")
    log.info("max ratios %s, spread %.4g", report.max_ratios, report.spread_factor)
    return EXIT_OK if report.within_spread else EXIT_VIOLATED


def cmd_lowerbounds(cfg: ExperimentConfig, args: argparse.Namespace) -> int:
    out = _outdir(cfg)
    lb = cfg.lowerbounds
    scheme = QuadratureScheme(K=lb.K)
    k_min, k_max = cfg.spectrum.band
    grid = cfg.grid

    def rows_for(i: int) -> list[dict]:
        recipe = SpectrumRecipe(cfg.spectrum.a, k_min, k_max, cfg.spectrum.amplitude, seed=cfg.seed + i)
        phi = generate_field(recipe, grid)
        base = {"gamma": cfg.gamma, "n": cfg.n, "K": lb.K, "h": f"{lb.h[0]}:{lb.h[1]}"}
        try:
            lower = lower_bound_ratio(phi, cfg.gamma, scheme, lb.h)
        except UndefinedRatioError:
            lower = float("nan")
        return [
            {**base, "quantity": "lower_bound_ratio", "value": lower},
            {**base, "quantity": "riesz_bound_ratio", "value": riesz_bound_ratio(phi, cfg.gamma, scheme, lb.h)},
            {**base, "quantity": "cordoba_residual", "value": cordoba_residual(phi, cfg.gamma, scheme)},
        ]

    rows = [r for chunk in _map(rows_for, range(lb.fields), args.threads) for r in chunk]
    write_constant_report(out / "constants.csv", rows)
    lowers = [r["value"] for r in rows if r["quantity"] == "lower_bound_ratio"]
    ok = all(v > 0 for v in lowers)
    log.info("lower bound ratios: %s", ", ".join(f"{v:.4g}" for v in lowers))
    return EXIT_OK if ok else EXIT_VIOLATED


COMMANDS = {
    "simulate": cmd_simulate,
    "verify": cmd_verify,
    "holder": cmd_holder,
    "converge": cmd_converge,
    "lowerbounds": cmd_lowerbounds,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sqgattr", description="Forced subcritical SQG solver and estimate checks.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="TOML experiment config")
        p.add_argument("--out", help="output directory (overrides output.dir)")
        p.add_argument("--seed", type=int, help="random seed (overrides seed)")
        p.add_argument("--threads", type=int, default=1, help="worker threads for ensemble members")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "verify":
            p.add_argument("--trajectory", help="verify an existing simulate output directory")
    return parser


def _resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    if args.config is not None:
        return load_config(args.config, seed=args.seed, out=args.out)
    trajectory = getattr(args, "trajectory", None)
    if trajectory is not None and (Path(trajectory) / "config.json").exists():
        data = json.loads((Path(trajectory) / "config.json").read_text())
        if args.seed is not None:
            data["seed"] = args.seed
        if args.out is not None:
            data.setdefault("output", {})["dir"] = args.out
        return config_from_dict(data)
    raise ConfigurationError("--config is required", key="config")


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = _resolve_config(args)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](cfg, args)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BlowUpError as exc:
        print(f"error: numerical blow-up: {exc}", file=sys.stderr)
        return EXIT_BLOWUP


if __name__ == "__main__":
    sys.exit(main())
