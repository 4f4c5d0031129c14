"""Command-line entry point.

Subcommands: classify (schedule summability), verify (candidate-function
checks on a grid), construct (integral certificate with fitted constants),
run (path ensembles with summaries and drift ledgers), sweep (grid over
schedule exponent and noise level).

Exit codes: 0 success / all checks pass, 1 at least one check failed,
2 configuration error, 3 certificate construction infeasible.  Given the
same config and master seed, every command writes byte-identical output.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import analysis as an
from . import lyapunov as lyap
from .config import (ConfigError, build_bounded_schedule, build_comparator,
                     build_field, build_grid, build_noise, build_schedule,
                     build_V, load_config)
from .core import _as_vector
from .ode import NoDecayError
from .sa_engine import (
    NoiseModel,
    ScheduleClassification,
    classify_power_law,
    classify_schedule,
    classify_values,
    run_ensemble,
)

__all__ = ["main"]


def _classification_lines(cls) -> list[str]:
    tag = " (heuristic)" if cls.heuristic else ""
    return [
        f"sum of squared steps finite:  {'holds' if cls.square_summable else 'fails'}{tag}",
        f"sum of steps infinite:        {'holds' if cls.non_summable else 'fails'}{tag}",
    ]


def cmd_classify(args) -> int:
    """Summability is scale-free, so any c > 0 and t0 >= 1 is classifiable
    even when alpha_0 >= 1 would make the schedule unusable for a run."""
    family = {"power": "power_law"}.get(args.family, args.family)
    try:
        if family == "power_law":
            if not (args.c > 0.0 and args.t0 >= 1.0):
                raise ValueError("need c > 0 and t0 >= 1")
            cls = classify_power_law(args.p)
        elif family == "constant":
            if not args.c > 0.0:
                raise ValueError("need c > 0")
            cls = ScheduleClassification(square_summable=False, non_summable=True)
        elif family == "custom":
            if not args.values:
                raise ValueError("custom family needs --values")
            cls = classify_values([float(v) for v in args.values.split(",")])
        else:
            raise ValueError(f"unknown family {args.family!r}")
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    for line in _classification_lines(cls):
        print(line)
    return 0


def _resolve_center(cfg, field):
    if cfg.theta_star is not None:
        return _as_vector(cfg.theta_star, field.dim)
    if field.equilibrium is not None:
        return field.equilibrium
    raise ConfigError("field declares no equilibrium; set theta_star")


def cmd_verify(args) -> int:
    cfg = load_config(args.config)
    if not cfg.checks:
        raise ConfigError(f"{args.config}: [lyapunov] checks is empty")
    field = build_field(cfg)
    theta_star = _resolve_center(cfg, field)
    V = build_V(cfg, field.dim, theta_star)
    grid = build_grid(cfg, theta_star)
    phi = build_comparator(cfg.phi, cfg.phi_params)
    eta = build_comparator(cfg.eta, cfg.eta_params)
    psi = build_comparator(cfg.psi, cfg.psi_params)

    def need(value, key):
        if value is None:
            raise ConfigError(f"{args.config}: check needs [lyapunov] {key}")
        return value

    reports = []
    for check in cfg.checks:
        try:
            if check == "sandwich":
                rep = lyap.check_sandwich(need(V, "v"), theta_star,
                                          need(cfg.sandwich_a, "sandwich_a"),
                                          need(cfg.sandwich_b, "sandwich_b"), grid)
            elif check == "generalized_sandwich":
                rep = lyap.check_generalized_sandwich(need(V, "v"), theta_star,
                                                      need(eta, "eta"),
                                                      need(psi, "psi"), grid)
            elif check == "decay":
                rep = lyap.check_decay(need(V, "v"), field, need(phi, "phi"),
                                       theta_star=theta_star, grid=grid)
            elif check == "hessian_bound":
                rep = lyap.check_hessian_bound(need(V, "v"),
                                               need(cfg.hessian_M, "hessian_m"), grid)
            elif check == "F4":
                rep = lyap.check_F4(field, need(cfg.f4_K, "f4_k"), grid)
            else:  # gradient_linear_bound
                rep = lyap.check_gradient_linear_bound(need(V, "v"), theta_star,
                                                       need(cfg.grad_L, "grad_l"), grid)
        except ValueError as exc:
            raise ConfigError(f"{args.config}: {check}: {exc}") from None
        reports.append(rep)

    width = max(len(r.condition_id) for r in reports)
    for r in reports:
        status = "ok  " if r.ok else "FAIL"
        print(f"{r.condition_id:<{width}}  {status}  worst_margin={r.worst_margin!r} "
              f"samples={r.samples} skipped={r.skipped}")
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lyap.write_reports_csv(reports, out_dir / "checks.csv")
    return 0 if all(r.ok for r in reports) else 1


def cmd_construct(args) -> int:
    cfg = load_config(args.config)
    field = build_field(cfg)
    theta_star = _resolve_center(cfg, field)
    params = None
    if cfg.kappa is not None or cfg.horizon is not None:
        for key in ("kappa", "horizon", "mu", "gamma"):
            if getattr(cfg, key) is None:
                raise ConfigError(
                    f"{args.config}: explicit construction needs kappa, horizon, mu, gamma")
        try:
            params = lyap.ConverseParams(kappa=cfg.kappa, T=cfg.horizon, mu=cfg.mu,
                                         gamma=cfg.gamma, quad_nodes=cfg.quad_nodes)
        except ValueError as exc:
            raise ConfigError(f"{args.config}: {exc}") from None

    fit_grid = build_grid(cfg, theta_star)
    try:
        V = lyap.construct_converse_V(field, theta_star, params=params,
                                      fit_grid=fit_grid, estimate_grid=fit_grid)
    except ValueError as exc:
        raise ConfigError(f"{args.config}: {exc}") from None

    used = V.converse_params
    consts = V.constants
    print(f"kappa={used.kappa!r} T={used.T!r} mu={used.mu!r} gamma={used.gamma!r} "
          f"quad_nodes={used.quad_nodes}")
    print(f"a={consts.a!r} b={consts.b!r} c={consts.c!r} M={consts.M!r}")

    # snapshot along the first axis: r, V, directional derivative, Hessian norm
    radii = np.geomspace(cfg.grid_r_min, cfg.grid_r_max, cfg.grid_shells)
    e1 = np.zeros(field.dim)
    e1[0] = 1.0
    pts = theta_star[None, :] + radii[:, None] * e1[None, :]
    vals = V.value_batch(pts)
    vdots = lyap.vdot_batch(V, field, pts)
    hnorms = np.array([lyap.spectral_norm_power(H) for H in V.hess_batch(pts)])
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "converse_table.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["r", "V", "vdot", "hessian_norm"])
        for r, v, vd, hn in zip(radii, vals, vdots, hnorms):
            writer.writerow([repr(float(r)), repr(float(v)), repr(float(vd)),
                             repr(float(hn))])
    with open(out_dir / "constants.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["key", "value"])
        for key, val in [("a", consts.a), ("b", consts.b), ("c", consts.c),
                         ("M", consts.M), ("kappa", used.kappa), ("T", used.T),
                         ("mu", used.mu), ("gamma", used.gamma)]:
            writer.writerow([key, repr(float(val))])
    print(f"wrote {out_dir / 'converse_table.csv'}")
    return 0


def _write_summary_csv(path, blocks) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["run", "key", "value"])
        for label, summary in blocks:
            for key, value in summary.as_rows():
                writer.writerow([label, key, value])


def _summary_text(label, summary, cls) -> list[str]:
    lines = [f"[{label}]"]
    if cls is not None:
        lines += ["  " + ln for ln in _classification_lines(cls)]
    lines += [f"  {k} = {v}" for k, v in summary.as_rows()]
    return lines


def _run_one(cfg, field, schedule, noise, theta_star, V, checkpoints):
    record_times = checkpoints if (cfg.rs_paths > 0 and V is not None) else None
    return run_ensemble(field, cfg.theta0, schedule, noise, cfg.T_steps,
                        cfg.n_seeds, master_seed=cfg.master_seed,
                        stride=cfg.stride, V=V if cfg.record_v else None,
                        theta_star=theta_star, record_times=record_times)


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.seeds is not None:
        if args.seeds < 1:
            raise ConfigError("--seeds must be >= 1")
        cfg.n_seeds = args.seeds
    if args.noise is not None:
        cfg.noise = args.noise
        if args.noise == "zero":
            cfg.sigma = 0.0
    field = build_field(cfg)
    theta_star = _resolve_center(cfg, field)
    noise = build_noise(cfg)
    V = build_V(cfg, field.dim, theta_star)
    solutions = field.solution_set
    if solutions is None:
        raise ConfigError(f"{args.config}: field declares no solution set")
    cap = cfg.cap_factor * (1.0 + float(np.linalg.norm(
        _as_vector(cfg.theta0, field.dim) - theta_star)))
    checkpoints = an.log_spaced_checkpoints(cfg.T_steps, cfg.checkpoints)

    runs = []  # (label, schedule, paths)
    sched = build_schedule(cfg)
    if cfg.mode == "division_of_labor":
        sched_b = build_bounded_schedule(cfg)
        runs.append(("bounded", sched_b,
                     _run_one(cfg, field, sched_b, noise, theta_star, V, checkpoints)))
        runs.append(("converge", sched,
                     _run_one(cfg, field, sched, noise, theta_star, V, checkpoints)))
    else:
        runs.append(("run", sched,
                     _run_one(cfg, field, sched, noise, theta_star, V, checkpoints)))

    rs_consts = None
    if cfg.rs_paths > 0 and V is not None:
        if field.lipschitz is None:
            raise ConfigError(f"{args.config}: field declares no Lipschitz constant")
        phi = build_comparator(cfg.phi, cfg.phi_params)
        try:
            fitted = lyap.fit_envelope_constants(V, field, theta_star)
        except RuntimeError as exc:
            raise ConfigError(f"{args.config}: envelope fit failed: {exc}") from None
        rs_consts = an.RSConstants(M=fitted.M * cfg.M_scale, a=fitted.a,
                                   L=field.lipschitz, sigma_sq=noise.sigma ** 2,
                                   phi=phi)

    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    blocks = []
    text_lines = []
    for label, schedule, paths in runs:
        sub = out_dir / label
        sub.mkdir(parents=True, exist_ok=True)
        for i, path in enumerate(paths):
            path.write_csv(sub / f"path_{i:04d}.csv")
        summary = an.summarize_ensemble(paths, solutions, cap)
        blocks.append((label, summary))
        text_lines += _summary_text(label, summary, classify_schedule(schedule))

        if rs_consts is not None:
            subset = paths[: cfg.rs_paths]
            an.attach_rs_ledgers(subset, field, V, schedule, noise, rs_consts,
                                 checkpoints, n_resamples=cfg.n_resamples,
                                 theta_star=theta_star)
            an.write_ledger_csv(subset, sub / "ledger.csv")
            n_ok = sum(e.ok for p in subset for e in p.rs_ledger)
            n_all = sum(len(p.rs_ledger) for p in subset)
            text_lines.append(f"  drift_checkpoints_ok = {n_ok}/{n_all}")

    _write_summary_csv(out_dir / "summary.csv", blocks)
    (out_dir / "summary.txt").write_text("\n".join(text_lines) + "\n")
    print("\n".join(text_lines))
    print(f"wrote {out_dir / 'summary.csv'}")
    return 0


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    if cfg.schedule != "power_law":
        raise ConfigError(f"{args.config}: sweep needs a power_law schedule")
    p_values = cfg.sweep_p or [cfg.p]
    sigma_values = cfg.sweep_sigma or [cfg.sigma]
    field = build_field(cfg)
    theta_star = _resolve_center(cfg, field)
    V = build_V(cfg, field.dim, theta_star)
    solutions = field.solution_set
    if solutions is None:
        raise ConfigError(f"{args.config}: field declares no solution set")
    cap = cfg.cap_factor * (1.0 + float(np.linalg.norm(
        _as_vector(cfg.theta0, field.dim) - theta_star)))

    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for p in p_values:
        sched = build_schedule(cfg, p=float(p))
        cls = classify_schedule(sched)
        for sigma in sigma_values:
            sigma = float(sigma)
            noise = _noise_at_sigma(cfg, sigma)
            paths = run_ensemble(field, cfg.theta0, sched, noise, cfg.T_steps,
                                 cfg.n_seeds, master_seed=cfg.master_seed,
                                 stride=cfg.stride, V=V if cfg.record_v else None,
                                 theta_star=theta_star)
            s = an.summarize_ensemble(paths, solutions, cap)
            rows.append([repr(float(p)), repr(sigma),
                         str(cls.square_summable), str(cls.non_summable),
                         repr(s.bounded_fraction), repr(s.diverged_fraction),
                         repr(s.final_distance_quantiles["q50"]),
                         repr(s.final_distance_quantiles["q95"])])
            print(f"p={p} sigma={sigma}: bounded={s.bounded_fraction!r} "
                  f"q95={s.final_distance_quantiles['q95']!r}")
    with open(out_dir / "sweep.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["p", "sigma", "square_summable", "non_summable",
                         "bounded_fraction", "diverged_fraction", "q50", "q95"])
        writer.writerows(rows)
    print(f"wrote {out_dir / 'sweep.csv'}")
    return 0


def _noise_at_sigma(cfg, sigma: float):
    """Noise model for a sweep point; sigma 0 means the deterministic
    recursion, a positive sigma on a zero-noise config upgrades the kind."""
    if sigma == 0.0:
        kind = "zero"
    elif cfg.noise == "zero":
        kind = "gaussian_state_scaled"
    else:
        kind = cfg.noise
    try:
        return NoiseModel(kind=kind, sigma=sigma)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="salyap",
        description="Simulate the stochastic approximation recursion and "
                    "verify Lyapunov-style convergence certificates.")
    sub = parser.add_subparsers(dest="command", required=True)

    cls = sub.add_parser("classify", help="classify a step-size schedule")
    cls.add_argument("--family", default="power_law",
                     help="power_law (alias: power), constant, or custom")
    cls.add_argument("--c", type=float, default=0.5, help="scale c > 0")
    cls.add_argument("--t0", type=float, default=1.0, help="offset t0 >= 1")
    cls.add_argument("--p", type=float, default=1.0, help="decay exponent p > 0")
    cls.add_argument("--values", default="",
                     help="comma-separated step sizes (custom family)")
    cls.set_defaults(func=cmd_classify)

    for name, func, hlp in [
        ("verify", cmd_verify, "run the configured grid checks"),
        ("construct", cmd_construct, "build the integral certificate"),
        ("run", cmd_run, "run path ensembles and summarize"),
        ("sweep", cmd_sweep, "sweep schedule exponent and noise level"),
    ]:
        sp = sub.add_parser(name, help=hlp)
        sp.add_argument("config", help="path to an experiment config file")
        if name == "run":
            sp.add_argument("--seeds", type=int, default=None,
                            help="override the configured number of seeds")
            sp.add_argument("--noise", default=None,
                            help="override the configured noise kind "
                                 "(zero also clears sigma)")
        sp.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NoDecayError as exc:
        print(f"construction infeasible: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
