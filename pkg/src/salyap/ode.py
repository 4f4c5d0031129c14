"""Flow-map integration and exponential-stability estimation.

The integrator is an embedded Runge-Kutta 4(5) pair with per-step error
control.  Steps are truncated to land exactly on requested output times, so
recorded states carry no interpolation error.  A fixed-step RK4 driver is
exposed for reproducibility runs and for smooth evaluation maps.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .core import SampleGrid, VectorField, _as_vector

__all__ = [
    "IntegrationError",
    "NoDecayError",
    "FlowResult",
    "StabilityEstimate",
    "GronwallReport",
    "integrate_flow",
    "integrate_flow_rk4",
    "check_gronwall_lower_bound",
    "estimate_stability_constants",
]


class IntegrationError(RuntimeError):
    """Step-size underflow or non-finite state during integration."""


class NoDecayError(RuntimeError):
    """Sampled trajectories do not exhibit exponential decay."""


# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4

_MIN_STEP_FRACTION = 1e-13
_MAX_GROWTH = 5.0
_MIN_SHRINK = 0.1
_SAFETY = 0.9


@dataclass(frozen=True)
class FlowResult:
    """Flow snapshots at requested times.

    max_local_error_estimate is the largest scaled local error norm among
    accepted steps (dimensionless; at most 1 when the controller is healthy).
    """

    times: np.ndarray
    states: np.ndarray
    accepted_steps: int
    rejected_steps: int
    max_local_error_estimate: float

    def write_csv(self, path) -> None:
        d = self.states.shape[1]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t"] + [f"x_{i + 1}" for i in range(d)])
            for t, row in zip(self.times, self.states):
                writer.writerow([repr(float(t))] + [repr(float(v)) for v in row])


@dataclass(frozen=True)
class StabilityEstimate:
    """Fitted envelope ||s(t, theta) - theta*|| <= mu_hat ||theta - theta*|| exp(-gamma_hat t)."""

    mu_hat: float
    gamma_hat: float
    fit_residual: float
    sample_count: int

    def __post_init__(self):
        if not self.mu_hat >= 1.0:
            raise ValueError("mu_hat must be >= 1")
        if not self.gamma_hat > 0.0:
            raise ValueError("gamma_hat must be > 0")


@dataclass(frozen=True)
class GronwallReport:
    min_ratio: float
    ok: bool
    argmin_time: float


def _validate_tolerances(rel_tol: float, abs_tol: float) -> None:
    if not (0.0 < rel_tol <= 1e-2) or not (0.0 < abs_tol <= 1e-2):
        raise ValueError("tolerances must lie in (0, 1e-2]")


def _initial_step(f0: np.ndarray, y0: np.ndarray, horizon: float,
                  rel_tol: float, abs_tol: float) -> float:
    scale = abs_tol + rel_tol * np.abs(y0)
    d0 = float(np.sqrt(np.mean((y0 / scale) ** 2)))
    d1 = float(np.sqrt(np.mean((f0 / scale) ** 2)))
    if d0 < 1e-5 or d1 < 1e-5:
        h = horizon / 100.0
    else:
        h = 0.01 * d0 / d1
    return min(h, horizon / 10.0)


def integrate_flow(field: VectorField, theta0, horizon: float,
                   rel_tol: float = 1e-8, abs_tol: float = 1e-10,
                   t_eval=None, max_steps: int = 10_000_000) -> FlowResult:
    """Integrate dtheta/dt = f(theta) from theta0 over [0, horizon].

    t_eval lists the requested output times (0 is always recorded first and
    states[0] equals theta0 exactly).  Raises IntegrationError("integration
    failure at t=...") on step underflow or non-finite states.
    """
    theta0 = _as_vector(theta0, field.dim)
    if not horizon > 0.0:
        raise ValueError("horizon must be positive")
    _validate_tolerances(rel_tol, abs_tol)

    if t_eval is None:
        t_eval = np.linspace(0.0, horizon, 101)
    t_eval = np.asarray(t_eval, dtype=float)
    if t_eval.ndim != 1 or t_eval.size == 0:
        raise ValueError("t_eval must be a nonempty 1-d array")
    if np.any(np.diff(t_eval) <= 0) or t_eval[0] < 0 or t_eval[-1] > horizon * (1 + 1e-12):
        raise ValueError("t_eval must be strictly increasing within [0, horizon]")
    if t_eval[0] != 0.0:
        t_eval = np.concatenate(([0.0], t_eval))

    out_states = np.empty((t_eval.size, field.dim))
    out_states[0] = theta0
    out_ptr = 1

    t = 0.0
    y = theta0.copy()
    k1 = field.at(y)
    if not np.all(np.isfinite(k1)):
        raise IntegrationError(f"integration failure at t={t!r}")
    h = _initial_step(k1, y, horizon, rel_tol, abs_tol)
    h_min = _MIN_STEP_FRACTION * max(1.0, horizon)

    accepted = 0
    rejected = 0
    max_err = 0.0
    t_end = float(t_eval[-1])
    ks = np.empty((7, field.dim))

    steps = 0
    while out_ptr < t_eval.size:
        steps += 1
        if steps > max_steps:
            raise IntegrationError(f"integration failure at t={t!r}")
        next_out = t_eval[out_ptr]
        h_step = min(h, t_end - t)
        landing = t + h_step >= next_out - 1e-14 * max(1.0, abs(next_out))
        if landing:
            h_step = next_out - t
        if h_step < h_min:
            raise IntegrationError(f"integration failure at t={t!r}")

        ks[0] = k1
        failed = False
        for i in range(1, 6):
            yi = y + h_step * (ks[:i].T @ _A[i])
            if not np.all(np.isfinite(yi)):
                failed = True
                break
            ks[i] = field.at(yi)
        # stage 7 evaluates at the 5th-order solution (first-same-as-last)
        if not failed:
            y5 = y + h_step * (ks[:6].T @ _B5[:6])
            if np.all(np.isfinite(y5)):
                ks[6] = field.at(y5)
            else:
                failed = True
        if not failed:
            err = h_step * (ks.T @ _E)
            scale = abs_tol + rel_tol * np.maximum(np.abs(y), np.abs(y5))
            err_norm = float(np.sqrt(np.mean((err / scale) ** 2)))
            if not np.isfinite(err_norm):
                failed = True

        if failed:
            rejected += 1
            h = max(h_step * 0.5, h_min)
            if h_step * 0.5 < h_min:
                raise IntegrationError(f"integration failure at t={t!r}")
            continue

        if err_norm <= 1.0:
            t = float(next_out) if landing else t + h_step
            y = y5
            k1 = ks[6]
            accepted += 1
            max_err = max(max_err, err_norm)
            if landing:
                out_states[out_ptr] = y
                out_ptr += 1
            factor = _SAFETY * err_norm ** -0.2 if err_norm > 0.0 else _MAX_GROWTH
            h = h_step * min(_MAX_GROWTH, max(_MIN_SHRINK, factor))
        else:
            rejected += 1
            factor = _SAFETY * err_norm ** -0.2
            h = h_step * min(1.0, max(_MIN_SHRINK, factor))

    return FlowResult(times=t_eval, states=out_states, accepted_steps=accepted,
                      rejected_steps=rejected, max_local_error_estimate=max_err)


def integrate_flow_rk4(field: VectorField, theta0, horizon: float,
                       n_steps: int = 256) -> FlowResult:
    """Fixed-step classical RK4 over a uniform grid; for reproducibility runs."""
    theta0 = _as_vector(theta0, field.dim)
    if not horizon > 0.0 or n_steps < 1:
        raise ValueError("need horizon > 0 and n_steps >= 1")
    h = horizon / n_steps
    times = np.linspace(0.0, horizon, n_steps + 1)
    states = np.empty((n_steps + 1, field.dim))
    states[0] = theta0
    y = theta0.copy()
    for i in range(n_steps):
        k1 = field.at(y)
        k2 = field.at(y + 0.5 * h * k1)
        k3 = field.at(y + 0.5 * h * k2)
        k4 = field.at(y + h * k3)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(y)):
            raise IntegrationError(f"integration failure at t={times[i + 1]!r}")
        states[i + 1] = y
    return FlowResult(times=times, states=states, accepted_steps=n_steps,
                      rejected_steps=0, max_local_error_estimate=0.0)


def check_gronwall_lower_bound(field: VectorField, theta0, horizon: float,
                               L: float | None = None, n_times: int = 201,
                               rel_tol: float = 1e-10, abs_tol: float = 1e-12,
                               slack: float = 1e-6) -> GronwallReport:
    """Check ||s(t, theta0) - theta*|| >= exp(-L t) ||theta0 - theta*||.

    The ratio ||s(t) - theta*|| * exp(L t) / ||theta0 - theta*|| is evaluated
    on a dense time grid; ok iff its minimum is >= 1 - slack.  L defaults to
    the field's declared Lipschitz constant.
    """
    if field.equilibrium is None:
        raise ValueError("field has no declared equilibrium")
    if L is None:
        L = field.lipschitz
    if L is None or not L >= 0.0:
        raise ValueError("need a nonnegative Lipschitz constant")
    theta0 = _as_vector(theta0, field.dim)
    dist0 = float(np.linalg.norm(theta0 - field.equilibrium))
    if dist0 < 1e-15 * (1.0 + float(np.linalg.norm(field.equilibrium))):
        raise ValueError("degenerate initial condition")
    t_eval = np.linspace(0.0, horizon, n_times)
    flow = integrate_flow(field, theta0, horizon, rel_tol=rel_tol, abs_tol=abs_tol,
                          t_eval=t_eval)
    dists = np.linalg.norm(flow.states - field.equilibrium, axis=1)
    ratios = dists * np.exp(L * flow.times) / dist0
    i = int(np.argmin(ratios))
    min_ratio = float(ratios[i])
    return GronwallReport(min_ratio=min_ratio, ok=min_ratio >= 1.0 - slack,
                          argmin_time=float(flow.times[i]))


def estimate_stability_constants(field: VectorField, grid: SampleGrid,
                                 horizon: float = 5.0, tol: float = 1e-8,
                                 n_times: int = 41, min_rate: float = 1e-3,
                                 safety: float = 0.98) -> StabilityEstimate:
    """Fit a conservative exponential-decay envelope from sampled flows.

    The log distance profile of every sampled trajectory is computed on a
    uniform time grid; the decay rate is fitted by least squares on the
    upper envelope over the second half of the horizon (the slowest mode
    governs there), deflated by ``safety``; mu_hat is then inflated until the
    envelope holds on every sample, so the estimate satisfies
    ||s(t, theta)|| <= mu_hat ||theta|| exp(-gamma_hat t) on all of them.

    Raises NoDecayError("no exponential decay detected") when any sampled
    trajectory ends farther from the equilibrium than it started, or when the
    fitted tail rate does not exceed ``min_rate`` (sub-exponential decay over
    the horizon; the stated ratio test alone cannot flag monotone fields).
    """
    if field.equilibrium is None:
        raise ValueError("field has no declared equilibrium")
    theta_star = field.equilibrium
    pts = grid.points()
    t_eval = np.linspace(0.0, horizon, n_times)

    logs = np.empty((pts.shape[0], n_times))
    for j, p in enumerate(pts):
        flow = integrate_flow(field, p, horizon, rel_tol=tol, abs_tol=tol * 1e-2,
                              t_eval=t_eval)
        dists = np.linalg.norm(flow.states - theta_star, axis=1)
        d0 = dists[0]
        if d0 <= 0.0:
            raise ValueError("degenerate initial condition")
        if dists[-1] > d0:
            raise NoDecayError("no exponential decay detected")
        logs[j] = np.log(np.maximum(dists, 1e-300) / d0)

    envelope = logs.max(axis=0)
    tail = t_eval >= horizon / 2.0
    slope, intercept = np.polyfit(t_eval[tail], envelope[tail], 1)
    gamma_tail = -float(slope)
    if gamma_tail <= min_rate:
        raise NoDecayError("no exponential decay detected")

    gamma_hat = safety * gamma_tail
    mu_hat = max(1.0, float(np.exp(np.max(logs + gamma_hat * t_eval[None, :]))))
    fit = intercept + slope * t_eval[tail]
    residual = float(np.sqrt(np.mean((envelope[tail] - fit) ** 2)))
    return StabilityEstimate(mu_hat=mu_hat, gamma_hat=gamma_hat,
                             fit_residual=residual,
                             sample_count=int(pts.shape[0] * n_times))
