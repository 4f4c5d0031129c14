"""Candidate function checks and the integral construction of a certificate.

A LyapunovFunction wraps a scalar function with optional analytic gradient
and Hessian; missing derivatives fall back to central differences whose step
scales with the distance to a designated center.  Checkers certify the
quadratic sandwich, comparator sandwich, decay, Hessian bound, gradient
bound, and the per-component curvature-times-radius bound on grids, each
returning a CheckReport.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field as dc_field
from typing import Callable

import numpy as np

from .core import (ComparatorFunction, SampleGrid, VectorField, _as_vector,
                   as_points, check_class_membership)
from .ode import integrate_flow

__all__ = [
    "LyapunovFunction",
    "LyapunovConstants",
    "ConverseParams",
    "CheckReport",
    "vdot",
    "vdot_batch",
    "check_sandwich",
    "check_generalized_sandwich",
    "check_decay",
    "check_hessian_bound",
    "check_F4",
    "check_gradient_linear_bound",
    "construct_converse_V",
    "fit_envelope_constants",
    "solve_lyapunov_matrix_equation",
    "spectral_norm_power",
    "make_lyapunov",
    "LYAPUNOV_BUILDERS",
    "default_fit_grid",
]


@dataclass(frozen=True)
class LyapunovConstants:
    """Envelope constants: a ||u||^2 <= V <= b ||u||^2, Vdot <= -c ||u||^2,
    spectral Hessian norm <= 2 M.  Fitted constants are grid-relative."""

    a: float
    b: float
    c: float
    M: float

    def as_dict(self) -> dict:
        return {"a": self.a, "b": self.b, "c": self.c, "M": self.M}


@dataclass(frozen=True)
class ConverseParams:
    """Parameters of the integral construction.

    kappa must lie in (0, gamma); T must cover ln(mu) / (gamma - kappa),
    otherwise the tail of the flow is not dominated and construction refuses
    with "horizon too short".  quad_nodes is the step count of the fixed-step
    evaluator of the augmented system (the time quadrature and the flow
    integration are a single pass).
    """

    kappa: float
    T: float
    mu: float
    gamma: float
    quad_nodes: int = 256

    def __post_init__(self):
        if not self.mu >= 1.0:
            raise ValueError("mu must be >= 1")
        if not self.gamma > 0.0:
            raise ValueError("gamma must be > 0")
        if not 0.0 < self.kappa < self.gamma:
            raise ValueError("kappa must lie in (0, gamma)")
        if self.quad_nodes < 1:
            raise ValueError("quad_nodes must be >= 1")
        if self.T < math.log(self.mu) / (self.gamma - self.kappa):
            raise ValueError("horizon too short")


@dataclass(frozen=True, eq=False)
class LyapunovFunction:
    """Scalar candidate function with derivative access.

    fn maps an (n, d) batch to (n,) values when ``vectorized``, else a (d,)
    point to a float.  grad_fn / hess_fn are optional pointwise callables;
    when absent, central differences of fn are used with step
    max(fd_rel * ||theta - fd_center||, fd_floor) if fd_center is set, and
    fd_abs * (1 + ||theta||) otherwise.
    """

    dim: int
    fn: Callable
    grad_fn: Callable | None = None
    hess_fn: Callable | None = None
    vectorized: bool = False
    fd_center: np.ndarray | None = None
    fd_rel: float = 1e-4
    fd_floor: float = 1e-6
    fd_abs: float = 1e-5
    constants: LyapunovConstants | None = None
    converse_params: ConverseParams | None = None
    name: str = ""

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.fd_center is not None:
            object.__setattr__(self, "fd_center", _as_vector(self.fd_center, self.dim))

    # -- evaluation ---------------------------------------------------------

    def value(self, theta) -> float:
        theta = _as_vector(theta, self.dim)
        if self.vectorized:
            return float(np.asarray(self.fn(theta[None, :]))[0])
        return float(self.fn(theta))

    def value_batch(self, thetas: np.ndarray) -> np.ndarray:
        thetas = np.asarray(thetas, dtype=float)
        if self.vectorized:
            return np.asarray(self.fn(thetas), dtype=float)
        return np.array([float(self.fn(row)) for row in thetas])

    def _step(self, theta: np.ndarray) -> float:
        if self.fd_center is not None:
            r = float(np.linalg.norm(theta - self.fd_center))
            return max(self.fd_rel * r, self.fd_floor)
        return self.fd_abs * (1.0 + float(np.linalg.norm(theta)))

    # -- gradient -----------------------------------------------------------

    def grad(self, theta) -> np.ndarray:
        theta = _as_vector(theta, self.dim)
        if self.grad_fn is not None:
            return _as_vector(self.grad_fn(theta), self.dim)
        return self.grad_batch(theta[None, :])[0]

    def grad_batch(self, thetas: np.ndarray) -> np.ndarray:
        thetas = np.asarray(thetas, dtype=float)
        if self.grad_fn is not None:
            return np.stack([_as_vector(self.grad_fn(row), self.dim) for row in thetas])
        n, d = thetas.shape
        steps = np.array([self._step(row) for row in thetas])
        # stencil: theta +/- h e_i for every i, one batched evaluation
        eye = np.eye(d)
        plus = thetas[:, None, :] + steps[:, None, None] * eye[None, :, :]
        minus = thetas[:, None, :] - steps[:, None, None] * eye[None, :, :]
        stacked = np.concatenate([plus.reshape(-1, d), minus.reshape(-1, d)])
        vals = self.value_batch(stacked)
        vp = vals[: n * d].reshape(n, d)
        vm = vals[n * d:].reshape(n, d)
        return (vp - vm) / (2.0 * steps[:, None])

    # -- Hessian ------------------------------------------------------------

    def hess(self, theta) -> np.ndarray:
        theta = _as_vector(theta, self.dim)
        if self.hess_fn is not None:
            H = np.atleast_2d(np.asarray(self.hess_fn(theta), dtype=float))
            return 0.5 * (H + H.T)
        return self.hess_batch(theta[None, :])[0]

    def hess_batch(self, thetas: np.ndarray) -> np.ndarray:
        thetas = np.asarray(thetas, dtype=float)
        if self.hess_fn is not None:
            out = []
            for row in thetas:
                H = np.atleast_2d(np.asarray(self.hess_fn(row), dtype=float))
                out.append(0.5 * (H + H.T))
            return np.stack(out)
        n, d = thetas.shape
        steps = np.array([self._step(row) for row in thetas])
        pts, index = _hessian_stencil(thetas, steps)
        vals = self.value_batch(pts)
        return _assemble_hessians(vals, index, steps, n, d)


def _hessian_stencil(thetas: np.ndarray, steps: np.ndarray):
    """Build the central-difference Hessian stencil for a batch of points.

    Returns the stacked stencil points and an index map describing the
    layout: center, +/- h e_i pairs, then (+/- h e_i +/- h e_j) quadruples
    for i < j.
    """
    n, d = thetas.shape
    eye = np.eye(d)
    blocks = [thetas]
    h = steps[:, None, None]
    plus = thetas[:, None, :] + h * eye[None, :, :]
    minus = thetas[:, None, :] - h * eye[None, :, :]
    blocks += [plus.reshape(-1, d), minus.reshape(-1, d)]
    pair_idx = [(i, j) for i in range(d) for j in range(i + 1, d)]
    for i, j in pair_idx:
        e = eye[i] + eye[j]
        f = eye[i] - eye[j]
        blocks += [
            thetas + steps[:, None] * e,
            thetas - steps[:, None] * e,
            thetas + steps[:, None] * f,
            thetas - steps[:, None] * f,
        ]
    return np.concatenate(blocks, axis=0), pair_idx


def _assemble_hessians(vals: np.ndarray, pair_idx, steps: np.ndarray,
                       n: int, d: int) -> np.ndarray:
    center = vals[:n]
    off = n
    vp = vals[off: off + n * d].reshape(n, d)
    off += n * d
    vm = vals[off: off + n * d].reshape(n, d)
    off += n * d
    H = np.zeros((n, d, d))
    h2 = steps ** 2
    diag = (vp - 2.0 * center[:, None] + vm) / h2[:, None]
    for i in range(d):
        H[:, i, i] = diag[:, i]
    for i, j in pair_idx:
        vpp = vals[off: off + n]; off += n
        vmm = vals[off: off + n]; off += n
        vpm = vals[off: off + n]; off += n
        vmp = vals[off: off + n]; off += n
        cross = (vpp + vmm - vpm - vmp) / (4.0 * h2)
        H[:, i, j] = cross
        H[:, j, i] = cross
    return H


@dataclass(frozen=True)
class CheckReport:
    """Outcome of one grid-certified condition.

    worst_margin is the smallest slack observed; ok iff it is >= -tolerance.
    skipped counts grid points excluded by the condition's own rules (for
    the curvature check: points within 1e-6 of the equilibrium).
    """

    condition_id: str
    ok: bool
    worst_point: np.ndarray
    worst_margin: float
    samples: int
    skipped: int = 0

    CSV_HEADER = ["condition_id", "ok", "worst_margin", "samples", "skipped", "worst_point"]

    def csv_row(self) -> list:
        return [self.condition_id, str(self.ok), repr(float(self.worst_margin)),
                str(self.samples), str(self.skipped),
                " ".join(repr(float(v)) for v in np.atleast_1d(self.worst_point))]


def write_reports_csv(reports, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CheckReport.CSV_HEADER)
        for rep in reports:
            writer.writerow(rep.csv_row())


def _report(condition_id: str, margins: np.ndarray, pts: np.ndarray,
            tol: float, skipped: int = 0) -> CheckReport:
    i = int(np.argmin(margins))
    worst = float(margins[i])
    return CheckReport(condition_id=condition_id, ok=worst >= -tol,
                       worst_point=pts[i].copy(), worst_margin=worst,
                       samples=int(margins.size), skipped=skipped)


def vdot(V: LyapunovFunction, field: VectorField, theta) -> float:
    """Directional derivative <grad V(theta), f(theta)> along the field."""
    theta = _as_vector(theta, field.dim)
    return float(np.dot(V.grad(theta), field.at(theta)))


def vdot_batch(V: LyapunovFunction, field: VectorField, thetas: np.ndarray) -> np.ndarray:
    thetas = np.asarray(thetas, dtype=float)
    return (V.grad_batch(thetas) * field.at_batch(thetas)).sum(axis=1)


def check_sandwich(V: LyapunovFunction, theta_star, a: float, b: float,
                   grid, tol: float = 1e-9) -> CheckReport:
    """Certify a ||u||^2 <= V(theta) <= b ||u||^2 on the grid, u = theta - theta*."""
    if not 0.0 < a <= b:
        raise ValueError("need 0 < a <= b")
    theta_star = _as_vector(theta_star, V.dim)
    pts = as_points(grid, V.dim)
    r2 = ((pts - theta_star) ** 2).sum(axis=1)
    vals = V.value_batch(pts)
    margins = np.minimum(vals - a * r2, b * r2 - vals)
    return _report("sandwich", margins, pts, tol)


def check_generalized_sandwich(V: LyapunovFunction, theta_star,
                               eta: ComparatorFunction, psi: ComparatorFunction,
                               grid, tol: float = 1e-9, cert_grid=None) -> CheckReport:
    """Certify eta(||u||) <= V(theta) <= psi(||u||) with class-KR comparators.

    Both comparators are first certified class KR on the certification grid;
    failure raises ValueError("not class KR").
    """
    for comp in (eta, psi):
        rep = check_class_membership(comp, cert_grid)
        if not rep.class_KR_ok:
            raise ValueError(f"not class KR: {comp.name or 'comparator'}")
    theta_star = _as_vector(theta_star, V.dim)
    pts = as_points(grid, V.dim)
    r = np.linalg.norm(pts - theta_star, axis=1)
    vals = V.value_batch(pts)
    margins = np.minimum(vals - eta(r), psi(r) - vals)
    return _report("generalized_sandwich", margins, pts, tol)


def check_decay(V: LyapunovFunction, field: VectorField, phi: ComparatorFunction,
                theta_star=None, grid=None, tol: float = 1e-9,
                cert_grid=None) -> CheckReport:
    """Certify <grad V, f>(theta) <= -phi(||u||) with a class-B comparator phi."""
    rep = check_class_membership(phi, cert_grid)
    if not rep.class_B_ok:
        raise ValueError(f"not class B: {phi.name or 'comparator'}")
    if theta_star is None:
        theta_star = field.equilibrium
    theta_star = _as_vector(theta_star, field.dim)
    pts = as_points(grid, field.dim)
    r = np.linalg.norm(pts - theta_star, axis=1)
    vd = vdot_batch(V, field, pts)
    margins = -phi(r) - vd
    return _report("decay", margins, pts, tol)


def spectral_norm_power(H: np.ndarray, max_iter: int = 200, tol: float = 1e-10) -> float:
    """Spectral norm of a symmetric matrix by power iteration."""
    H = np.asarray(H, dtype=float)
    d = H.shape[0]
    if d == 1:
        return abs(float(H[0, 0]))
    # deterministic start with unequal components so sign-symmetric spectra converge
    v = 1.0 / np.arange(1.0, d + 1.0)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(max_iter):
        w = H @ v
        nw = float(np.linalg.norm(w))
        if nw == 0.0:
            return 0.0
        if abs(nw - est) <= tol * max(1.0, nw):
            return nw
        est = nw
        v = w / nw
    return est


def check_hessian_bound(V: LyapunovFunction, M: float, grid,
                        tol: float = 1e-9) -> CheckReport:
    """Certify ||hess V(theta)||_2 <= 2 M on the grid."""
    if not M > 0.0:
        raise ValueError("M must be positive")
    pts = as_points(grid, V.dim)
    H = V.hess_batch(pts)
    norms = np.array([spectral_norm_power(0.5 * (h + h.T)) for h in H])
    margins = 2.0 * M - norms
    return _report("hessian_bound", margins, pts, tol)


def check_F4(field: VectorField, K: float, grid, tol: float = 1e-9,
             skip_radius: float = 1e-6, fd_rel: float = 1e-4,
             fd_floor: float = 1e-6) -> CheckReport:
    """Certify ||hess f_i(theta)||_2 * ||theta - theta*|| <= K per component.

    Hessians of the field components come from central differences with
    steps scaled to the distance from the equilibrium.  Grid points within
    skip_radius of the equilibrium are skipped and counted in the report.
    """
    if field.smoothness != "C2":
        raise ValueError("field must declare smoothness C2")
    if field.equilibrium is None:
        raise ValueError("field has no declared equilibrium")
    if not K > 0.0:
        raise ValueError("K must be positive")
    theta_star = field.equilibrium
    pts = as_points(grid, field.dim)
    r = np.linalg.norm(pts - theta_star, axis=1)
    keep = r >= skip_radius
    skipped = int((~keep).sum())
    pts, r = pts[keep], r[keep]
    if pts.shape[0] == 0:
        raise ValueError("all grid points are within skip_radius of the equilibrium")
    n, d = pts.shape
    steps = np.maximum(fd_rel * r, fd_floor)
    stencil, pair_idx = _hessian_stencil(pts, steps)
    F = field.at_batch(stencil)  # (n_stencil, d): all components at once
    margins = np.full(n, np.inf)
    for comp in range(d):
        H = _assemble_hessians(F[:, comp], pair_idx, steps, n, d)
        norms = np.array([spectral_norm_power(0.5 * (h + h.T)) for h in H])
        margins = np.minimum(margins, K - norms * r)
    return _report("F4", margins, pts, tol, skipped=skipped)


def check_gradient_linear_bound(V: LyapunovFunction, theta_star, L_prime: float,
                                grid, tol: float = 1e-9,
                                skip_radius: float = 1e-12) -> CheckReport:
    """Certify ||grad V(theta)|| <= L' ||theta - theta*|| on the grid."""
    if not L_prime > 0.0:
        raise ValueError("L_prime must be positive")
    theta_star = _as_vector(theta_star, V.dim)
    pts = as_points(grid, V.dim)
    r = np.linalg.norm(pts - theta_star, axis=1)
    keep = r >= skip_radius
    skipped = int((~keep).sum())
    pts, r = pts[keep], r[keep]
    if pts.shape[0] == 0:
        raise ValueError("grid contains only the center point")
    gnorm = np.linalg.norm(V.grad_batch(pts), axis=1)
    margins = L_prime - gnorm / r
    return _report("gradient_linear_bound", margins, pts, tol, skipped=skipped)


# ---------------------------------------------------------------------------
# converse construction

class _ConverseEvaluator:
    """Evaluates V(theta) = integral_0^T exp(2 kappa tau) ||s(tau, theta) - theta*||^2 dtau.

    value_batch integrates the augmented system {ds = f(s),
    dv = exp(2 kappa tau) ||s - theta*||^2} with fixed-step RK4 over
    quad_nodes steps, which makes theta -> V(theta) a smooth map: finite
    differences of it converge to derivatives of the limit without adaptive
    step-count artifacts.  value_adaptive cross-checks single points with the
    embedded integrator at the given tolerances.
    """

    def __init__(self, field: VectorField, theta_star: np.ndarray, kappa: float,
                 T: float, n_steps: int, rel_tol: float, abs_tol: float):
        self.field = field
        self.theta_star = theta_star
        self.kappa = kappa
        self.T = T
        self.n_steps = int(n_steps)
        self.rel_tol = rel_tol
        self.abs_tol = abs_tol

    def _integrand(self, tau: float, S: np.ndarray) -> np.ndarray:
        U = S - self.theta_star
        return math.exp(2.0 * self.kappa * tau) * (U * U).sum(axis=1)

    def value_batch(self, thetas: np.ndarray) -> np.ndarray:
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        S = thetas.copy()
        v = np.zeros(thetas.shape[0])
        h = self.T / self.n_steps
        f = self.field.at_batch
        g = self._integrand
        for i in range(self.n_steps):
            tau = i * h
            k1s = f(S);                 k1v = g(tau, S)
            s2 = S + 0.5 * h * k1s;     k2v = g(tau + 0.5 * h, s2)
            k2s = f(s2)
            s3 = S + 0.5 * h * k2s;     k3v = g(tau + 0.5 * h, s3)
            k3s = f(s3)
            s4 = S + h * k3s;           k4v = g(tau + h, s4)
            k4s = f(s4)
            S = S + (h / 6.0) * (k1s + 2.0 * k2s + 2.0 * k3s + k4s)
            v = v + (h / 6.0) * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
        return v

    def value_adaptive(self, theta) -> float:
        theta = _as_vector(theta, self.field.dim)
        d = self.field.dim
        ev = self

        # the integrand depends on tau; carry tau as an extra state so the
        # augmented system stays autonomous
        def aug_fn_tau(z):
            S = z[:, :d]
            tau = z[:, d]
            U = S - ev.theta_star
            out = np.empty((z.shape[0], d + 2))
            out[:, :d] = ev.field.at_batch(S)
            out[:, d] = 1.0
            out[:, d + 1] = np.exp(2.0 * ev.kappa * tau) * (U * U).sum(axis=1)
            return out

        aug = VectorField(dim=d + 2, fn=aug_fn_tau, vectorized=True, smoothness="C1")
        z0 = np.concatenate([theta, [0.0, 0.0]])
        flow = integrate_flow(aug, z0, self.T, rel_tol=self.rel_tol,
                              abs_tol=self.abs_tol, t_eval=[0.0, self.T])
        return float(flow.states[-1, d + 1])


def default_fit_grid(theta_star: np.ndarray, r_min: float = 1e-2,
                     r_max: float = 1e3, shells: int = 25,
                     points_per_shell: int = 40, seed: int = 714025) -> SampleGrid:
    return SampleGrid(center=theta_star, radii=tuple(np.geomspace(r_min, r_max, shells)),
                      points_per_shell=points_per_shell, rng_seed=seed)


def fit_envelope_constants(V: LyapunovFunction, field: VectorField, theta_star,
                           grid=None, safety: float = 1e-3) -> LyapunovConstants:
    """Fit empirical envelope constants (a, b, c, M) on a grid.

    a and c are deflated and b and M inflated by ``safety`` so the fitted
    envelopes pass rechecks on comparable grids; all four remain
    grid-relative statements, not global proofs.
    """
    theta_star = _as_vector(theta_star, V.dim)
    if grid is None:
        grid = default_fit_grid(theta_star)
    pts = as_points(grid, V.dim)
    r2 = ((pts - theta_star) ** 2).sum(axis=1)
    keep = r2 > 1e-18
    pts, r2 = pts[keep], r2[keep]
    vals = V.value_batch(pts)
    ratios = vals / r2
    a = float(ratios.min()) * (1.0 - safety)
    b = float(ratios.max()) * (1.0 + safety)
    if a <= 0.0:
        raise RuntimeError("candidate function is not positive on the fit grid")
    vd = vdot_batch(V, field, pts)
    c = float((-vd / r2).min()) * (1.0 - safety)
    if c <= 0.0:
        raise RuntimeError("candidate function is not decaying on the fit grid")
    H = V.hess_batch(pts)
    M = 0.5 * float(max(spectral_norm_power(0.5 * (h + h.T)) for h in H)) * (1.0 + safety)
    return LyapunovConstants(a=a, b=b, c=c, M=M)


def construct_converse_V(field: VectorField, theta_star=None,
                         params: ConverseParams | None = None,
                         rel_tol: float = 1e-10, abs_tol: float = 1e-12,
                         fit_grid=None, estimate_grid: SampleGrid | None = None,
                         estimate_horizon: float = 5.0) -> LyapunovFunction:
    """Build the integral certificate for an exponentially stable field.

    When params is None, (mu, gamma) are estimated from sampled flows with
    the adaptive integrator at the given tolerances, then kappa = gamma/2 and
    T = ln(mu)/(gamma - kappa) + 1.  The returned function carries envelope
    constants fitted on fit_grid and the parameters used.

    Raises ValueError("horizon too short") for an inadmissible horizon and
    propagates NoDecayError from the estimation step.
    """
    from .ode import estimate_stability_constants  # local to avoid cycle confusion

    if theta_star is None:
        if field.equilibrium is None:
            raise ValueError("field has no declared equilibrium")
        theta_star = field.equilibrium
    theta_star = _as_vector(theta_star, field.dim)
    if field.lipschitz is None:
        raise ValueError("field must declare a Lipschitz constant")

    if params is None:
        if estimate_grid is None:
            estimate_grid = SampleGrid(center=theta_star,
                                       radii=tuple(np.geomspace(0.1, 50.0, 8)),
                                       points_per_shell=8, rng_seed=627182)
        est = estimate_stability_constants(field, estimate_grid,
                                           horizon=estimate_horizon,
                                           tol=max(rel_tol * 100.0, 1e-10))
        kappa = est.gamma_hat / 2.0
        T = math.log(est.mu_hat) / (est.gamma_hat - kappa) + 1.0
        params = ConverseParams(kappa=kappa, T=T, mu=est.mu_hat, gamma=est.gamma_hat)
    else:
        # re-validate here so a hand-built params object cannot slip through
        if params.T < math.log(params.mu) / (params.gamma - params.kappa):
            raise ValueError("horizon too short")

    evaluator = _ConverseEvaluator(field, theta_star, params.kappa, params.T,
                                   params.quad_nodes, rel_tol, abs_tol)
    V = LyapunovFunction(dim=field.dim, fn=evaluator.value_batch, vectorized=True,
                         fd_center=theta_star, fd_rel=1e-4, fd_floor=1e-6,
                         converse_params=params, name="converse")
    # expose the cross-check evaluator for tests and reports
    object.__setattr__(V, "_evaluator", evaluator)
    constants = fit_envelope_constants(V, field, theta_star, grid=fit_grid)
    object.__setattr__(V, "constants", constants)
    return V


# ---------------------------------------------------------------------------
# matrix equation

def solve_lyapunov_matrix_equation(B: np.ndarray, Q: np.ndarray,
                                   residual_tol: float = 1e-8) -> np.ndarray:
    """Solve P B + B^T P = -Q by Kronecker vectorization (desk scale, d <= 50).

    B must be Hurwitz (every eigenvalue real part < -1e-10, else
    ValueError("not Hurwitz")); Q must be symmetric positive definite.  The
    returned P is symmetrized and verified: residual <= residual_tol * ||Q||_F
    and P positive definite.
    """
    B = np.atleast_2d(np.asarray(B, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    d = B.shape[0]
    if B.shape != (d, d) or Q.shape != (d, d):
        raise ValueError("B and Q must be square and of equal size")
    if d > 50:
        raise ValueError("vectorized solve is limited to d <= 50")
    if np.linalg.norm(Q - Q.T) > 1e-10 * max(1.0, np.linalg.norm(Q)):
        raise ValueError("Q must be symmetric")
    if np.any(np.linalg.eigvalsh(0.5 * (Q + Q.T)) <= 0.0):
        raise ValueError("Q must be positive definite")
    eigs = np.linalg.eigvals(B)
    if np.any(eigs.real >= -1e-10):
        raise ValueError(f"not Hurwitz: eigenvalue real part {eigs.real.max():.3e}")

    eye = np.eye(d)
    # column-stacking convention: vec(P B) = (B^T (x) I) vec(P), vec(B^T P) = (I (x) B^T) vec(P)
    K = np.kron(B.T, eye) + np.kron(eye, B.T)
    p = np.linalg.solve(K, -Q.flatten(order="F"))
    P = p.reshape((d, d), order="F")
    P = 0.5 * (P + P.T)

    residual = np.linalg.norm(P @ B + B.T @ P + Q, ord="fro")
    if residual > residual_tol * np.linalg.norm(Q, ord="fro"):
        raise RuntimeError(f"solve residual {residual:.3e} exceeds tolerance")
    if np.any(np.linalg.eigvalsh(P) <= 0.0):
        raise RuntimeError("solution is not positive definite")
    return P


# ---------------------------------------------------------------------------
# built-in candidate-function registry

def _build_quadratic(params: dict, dim: int, theta_star: np.ndarray) -> LyapunovFunction:
    if "P" in params:
        P = np.atleast_2d(np.asarray(params["P"], dtype=float))
    else:
        P = float(params.get("coeff", 1.0)) * np.eye(dim)
    if P.shape != (dim, dim):
        raise ValueError(f"P must be {dim}x{dim}")
    P = 0.5 * (P + P.T)

    def fn(thetas):
        U = thetas - theta_star
        return np.einsum("ni,ij,nj->n", U, P, U)

    return LyapunovFunction(
        dim=dim, fn=fn, vectorized=True,
        grad_fn=lambda th: 2.0 * P @ (th - theta_star),
        hess_fn=lambda th: 2.0 * P,
        name="quadratic",
    )


def _build_quartic(params: dict, dim: int, theta_star: np.ndarray) -> LyapunovFunction:
    k = float(params.get("k", 1.0))

    def fn(thetas):
        U = thetas - theta_star
        return k * ((U * U).sum(axis=1)) ** 2

    def grad(th):
        u = th - theta_star
        return 4.0 * k * float(u @ u) * u

    def hess(th):
        u = th - theta_star
        return 4.0 * k * float(u @ u) * np.eye(dim) + 8.0 * k * np.outer(u, u)

    return LyapunovFunction(dim=dim, fn=fn, vectorized=True, grad_fn=grad,
                            hess_fn=hess, name="quartic")


LYAPUNOV_BUILDERS = {
    "quadratic": _build_quadratic,
    "quartic": _build_quartic,
}


def make_lyapunov(name: str, params: dict | None, dim: int, theta_star) -> LyapunovFunction:
    try:
        builder = LYAPUNOV_BUILDERS[name]
    except KeyError:
        raise ValueError(
            f"unknown candidate function {name!r}; registered: {sorted(LYAPUNOV_BUILDERS)}"
        ) from None
    return builder(dict(params or {}), dim, _as_vector(theta_star, dim))
