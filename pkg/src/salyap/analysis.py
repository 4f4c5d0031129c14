"""Empirical verification of the almost-supermartingale drift inequality and
Monte Carlo boundedness/convergence statistics over path ensembles.

The drift check resamples the one-step conditional expectation of V: at a
checkpoint state theta_t it draws fresh noises (from the path's lane-1
stream, so the path's own draws are untouched), forms the sample mean of
V(theta_{t+1}), and compares it against
(1 + eta_t) V(theta_t) + gamma_t - psi_t plus three standard errors, with
    eta_t   = alpha_t^2 (M / a) (L^2 + sigma^2)
    gamma_t = alpha_t^2 M sigma^2
    psi_t   = alpha_t phi(||theta_t - theta*||)    (0 in boundedness-only mode).
A failure means an envelope constant is violated or the update is wrong;
both are actionable.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import ComparatorFunction, SolutionSet, VectorField, _as_vector, distance_to_set
from .lyapunov import LyapunovFunction
from .sa_engine import (NoiseModel, SamplePath, ScheduleClassification,
                        StepSchedule, _standard_chunk, classify_schedule,
                        run_ensemble)

__all__ = [
    "RSConstants",
    "RSLedgerEntry",
    "rs_checkpoint",
    "log_spaced_checkpoints",
    "attach_rs_ledgers",
    "EnsembleSummary",
    "summarize_ensemble",
    "default_cap",
    "DivisionOfLaborReport",
    "division_of_labor_experiment",
    "write_ledger_csv",
]


@dataclass(frozen=True)
class RSConstants:
    """Constants feeding the drift inequality.

    M and a come from the candidate function's fitted envelopes, L from the
    field's Lipschitz constant, sigma_sq from the noise model.  phi is the
    decay comparator; None switches the check to boundedness-only mode
    (psi_t = 0).
    """

    M: float
    a: float
    L: float
    sigma_sq: float
    phi: ComparatorFunction | None = None

    def __post_init__(self):
        for name in ("M", "a", "L"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be > 0")
        if self.sigma_sq < 0.0:
            raise ValueError("sigma_sq must be >= 0")

    def eta(self, alpha: float) -> float:
        return alpha ** 2 * (self.M / self.a) * (self.L ** 2 + self.sigma_sq)

    def gamma(self, alpha: float) -> float:
        return alpha ** 2 * self.M * self.sigma_sq

    def psi(self, alpha: float, r: float) -> float:
        return alpha * float(self.phi(r)) if self.phi is not None else 0.0


@dataclass(frozen=True)
class RSLedgerEntry:
    """One checkpoint of the drift inequality on one path."""

    t: int
    z_t: float
    eta_t: float
    gamma_t: float
    psi_t: float
    conditional_mean_estimate: float
    standard_error: float
    ok: bool

    CSV_HEADER = ["t", "z_t", "eta_t", "gamma_t", "psi_t",
                  "conditional_mean_estimate", "standard_error", "ok"]

    def csv_row(self) -> list:
        return [str(self.t)] + [repr(float(v)) for v in
                                (self.z_t, self.eta_t, self.gamma_t, self.psi_t,
                                 self.conditional_mean_estimate, self.standard_error)] \
            + [str(self.ok)]


def rs_checkpoint(field: VectorField, V: LyapunovFunction, theta_t, alpha_t: float,
                  noise: NoiseModel, n_resamples: int, constants: RSConstants,
                  t: int = 0, theta_star=None, resample_seed: int | None = None) -> RSLedgerEntry:
    """Resample the one-step conditional mean of V at a frozen state.

    Noise draws come from the (seed, t) slot of lane 1, where seed is
    resample_seed if given, else noise.rng_seed: re-running a checkpoint is
    deterministic and independent of the path's own lane-0 stream.
    """
    if n_resamples < 1000:
        raise ValueError("need at least 1000 resamples")
    if not 0.0 < alpha_t < 1.0:
        raise ValueError("alpha_t must lie in (0, 1)")
    theta_t = _as_vector(theta_t, field.dim)
    if theta_star is None:
        theta_star = field.equilibrium
    if theta_star is None:
        raise ValueError("drift check needs a reference point theta_star")
    theta_star = _as_vector(theta_star, field.dim)

    r = float(np.linalg.norm(theta_t - theta_star))
    z_t = float(V.value(theta_t))
    eta_t = constants.eta(alpha_t)
    gamma_t = constants.gamma(alpha_t)
    psi_t = constants.psi(alpha_t, r)

    drift = field.at(theta_t)
    if noise.needs_draws:
        seed = noise.rng_seed if resample_seed is None else resample_seed
        Z = _standard_chunk(seed, t, 1, field.dim, rows=n_resamples)
        xi = noise.transform(Z, (theta_t - theta_star)[None, :])
        nxt = theta_t[None, :] + alpha_t * (drift[None, :] + xi)
        vals = V.value_batch(nxt)
        mean = float(vals.mean())
        se = float(vals.std(ddof=1) / math.sqrt(n_resamples))
    else:
        # the one-step map is deterministic; the conditional mean is exact
        mean = float(V.value(theta_t + alpha_t * drift))
        se = 0.0
    rhs = (1.0 + eta_t) * z_t + gamma_t - psi_t + 3.0 * se
    return RSLedgerEntry(t=int(t), z_t=z_t, eta_t=eta_t, gamma_t=gamma_t,
                         psi_t=psi_t, conditional_mean_estimate=mean,
                         standard_error=se, ok=mean <= rhs)


def log_spaced_checkpoints(T_steps: int, n: int = 20, include_zero: bool = False) -> np.ndarray:
    """n (or fewer, after deduplication) integer checkpoints, log-spaced over
    [1, T_steps]."""
    if T_steps < 1:
        raise ValueError("T_steps must be >= 1")
    pts = np.unique(np.rint(np.geomspace(1, T_steps, n)).astype(int))
    if include_zero:
        pts = np.union1d(pts, [0])
    return pts


def attach_rs_ledgers(paths: Sequence[SamplePath], field: VectorField,
                      V: LyapunovFunction, schedule: StepSchedule,
                      noise: NoiseModel, constants: RSConstants,
                      checkpoints, n_resamples: int = 1000,
                      theta_star=None) -> list[SamplePath]:
    """Run rs_checkpoint at each checkpoint step of each path and attach the
    entries.  Checkpoint steps must be among the path's recorded times."""
    checkpoints = np.asarray(list(checkpoints), dtype=int)
    out = []
    for path in paths:
        pos = np.searchsorted(path.times, checkpoints)
        if np.any(pos >= path.times.size) or np.any(path.times[pos] != checkpoints):
            missing = [int(c) for c in checkpoints
                       if c not in set(int(x) for x in path.times)]
            raise ValueError(f"checkpoints {missing} not recorded on path {path.seed}")
        entries = []
        for idx, t in zip(pos, checkpoints):
            entries.append(rs_checkpoint(
                field, V, path.thetas[idx], schedule.alpha(int(t)), noise,
                n_resamples, constants, t=int(t), theta_star=theta_star,
                resample_seed=path.seed))
        path.rs_ledger = tuple(entries)
        out.append(path)
    return out


def write_ledger_csv(paths: Sequence[SamplePath], path) -> None:
    """All attached drift-check entries, one row per (seed, checkpoint)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["seed"] + RSLedgerEntry.CSV_HEADER)
        for p in paths:
            for entry in (p.rs_ledger or ()):
                writer.writerow([str(p.seed)] + entry.csv_row())


# ---------------------------------------------------------------------------
# ensemble statistics

@dataclass(frozen=True)
class EnsembleSummary:
    """Monte Carlo surrogate for the almost-sure claims.

    bounded_fraction counts paths whose running sup distance stayed under
    the cap and that never hit the divergence guard; the two fractions sum
    to at most 1.  Final-distance quantiles use the distance to the nearest
    listed solution.  v_limit_spread is the pooled interquartile range of
    recorded V values over the final tenth of steps, a finite-horizon proxy
    for per-path settling of V (a limit cannot be certified from finite
    data); None when V was not recorded.
    """

    n_paths: int
    bounded_fraction: float
    diverged_fraction: float
    final_distance_quantiles: dict
    v_limit_spread: float | None
    cap: float

    def as_rows(self) -> list[tuple[str, str]]:
        rows = [
            ("n_paths", str(self.n_paths)),
            ("cap", repr(float(self.cap))),
            ("bounded_fraction", repr(float(self.bounded_fraction))),
            ("diverged_fraction", repr(float(self.diverged_fraction))),
            ("final_distance_q05", repr(float(self.final_distance_quantiles["q05"]))),
            ("final_distance_q50", repr(float(self.final_distance_quantiles["q50"]))),
            ("final_distance_q95", repr(float(self.final_distance_quantiles["q95"]))),
        ]
        if self.v_limit_spread is not None:
            rows.append(("v_limit_spread", repr(float(self.v_limit_spread))))
        return rows


def default_cap(theta0, theta_star) -> float:
    """Boundedness cap 1e6 * (1 + ||theta0 - theta*||): far beyond any sane
    excursion yet finite, so cap crossings and guard hits stay distinguishable."""
    theta0 = np.asarray(theta0, dtype=float)
    theta_star = np.asarray(theta_star, dtype=float)
    return 1e6 * (1.0 + float(np.linalg.norm(theta0 - theta_star)))


def summarize_ensemble(paths: Sequence[SamplePath], solutions: SolutionSet,
                       cap: float) -> EnsembleSummary:
    """Reduce an ensemble to fractions and final-distance quantiles.

    Deterministic given input order; quantiles and fractions are themselves
    permutation-invariant.
    """
    if not paths:
        raise ValueError("empty path list")
    if not cap > 0.0:
        raise ValueError("cap must be > 0")
    n = len(paths)
    diverged = np.array([p.diverged for p in paths])
    sups = np.array([p.sup_norm for p in paths])
    bounded = (~diverged) & (sups < cap)
    finals = np.array([distance_to_set(p.final_theta, solutions) for p in paths])
    q05, q50, q95 = np.quantile(finals, [0.05, 0.50, 0.95])

    spread = None
    if all(p.v_values is not None for p in paths):
        pooled = []
        for p in paths:
            t_lo = 0.9 * p.times[-1]
            pooled.append(p.v_values[p.times >= t_lo])
        pooled = np.concatenate(pooled)
        if pooled.size:
            hi, lo = np.quantile(pooled, [0.75, 0.25])
            spread = float(hi - lo)

    return EnsembleSummary(
        n_paths=n,
        bounded_fraction=float(bounded.mean()),
        diverged_fraction=float(diverged.mean()),
        final_distance_quantiles={"q05": float(q05), "q50": float(q50), "q95": float(q95)},
        v_limit_spread=spread,
        cap=float(cap),
    )


# ---------------------------------------------------------------------------
# paired experiment

@dataclass(frozen=True)
class DivisionOfLaborReport:
    """Paired ensembles separating the two step-size conditions: the
    boundedness run's schedule is square-summable only, the convergence
    run's is square-summable and non-summable."""

    boundedness_run: EnsembleSummary
    convergence_run: EnsembleSummary
    boundedness_classification: ScheduleClassification
    convergence_classification: ScheduleClassification


def division_of_labor_experiment(field: VectorField, theta0,
                                 schedule_bounded: StepSchedule,
                                 schedule_converge: StepSchedule,
                                 noise: NoiseModel, T_steps: int, n_seeds: int,
                                 master_seed: int = 0, V: LyapunovFunction | None = None,
                                 theta_star=None, cap: float | None = None,
                                 solutions: SolutionSet | None = None,
                                 stride: int | None = None) -> DivisionOfLaborReport:
    """Run the same field and noise under both schedules and summarize.

    Requires the classifications to actually separate: schedule_bounded must
    be (square-summable, not non-summable) and schedule_converge
    (square-summable, non-summable); otherwise the pairing proves nothing
    and construction fails.
    """
    cls_b = classify_schedule(schedule_bounded)
    cls_c = classify_schedule(schedule_converge)
    if not (cls_b.square_summable and not cls_b.non_summable):
        raise ValueError(
            "boundedness schedule must be square-summable with summable steps")
    if not (cls_c.square_summable and cls_c.non_summable):
        raise ValueError(
            "convergence schedule must be square-summable with non-summable steps")
    if solutions is None:
        solutions = field.solution_set
    if solutions is None:
        raise ValueError("field declares no solution set; pass one explicitly")
    ref = theta_star if theta_star is not None else field.equilibrium
    if ref is None:
        raise ValueError("need theta_star for the boundedness cap")
    if cap is None:
        cap = default_cap(theta0, ref)

    runs = {}
    for label, sched in (("bounded", schedule_bounded), ("converge", schedule_converge)):
        paths = run_ensemble(field, theta0, sched, noise, T_steps, n_seeds,
                             master_seed=master_seed, stride=stride, V=V,
                             theta_star=theta_star)
        runs[label] = summarize_ensemble(paths, solutions, cap)
    return DivisionOfLaborReport(
        boundedness_run=runs["bounded"],
        convergence_run=runs["converge"],
        boundedness_classification=cls_b,
        convergence_classification=cls_c,
    )
