"""Core domain types: vector fields, comparators, solution sets, sample grids.

Everything here is immutable after construction and safe to share across
workers.  Vector fields and comparator functions evaluate on single points or
on batches of points (rows of an ``(n, d)`` array); the simulation and
verification layers lean on the batch path for speed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = [
    "EQUILIBRIUM_TOL",
    "DEFAULT_CERT_GRID",
    "VectorField",
    "ComparatorFunction",
    "SolutionSet",
    "SampleGrid",
    "ClassReport",
    "distance_to_set",
    "check_class_membership",
    "grid_infimum",
    "scale_limit_probe",
    "refine_equilibrium",
    "make_field",
    "make_comparator",
    "FIELD_BUILDERS",
    "COMPARATOR_BUILDERS",
]

# Residual tolerance for declared equilibria / solution points.
EQUILIBRIUM_TOL = 1e-10

# Default grid for comparator-class certification: zero plus a geometric sweep.
DEFAULT_CERT_GRID = np.concatenate(([0.0], np.geomspace(1e-4, 1e4, 200)))


def _as_vector(x, dim: int | None = None) -> np.ndarray:
    v = np.atleast_1d(np.asarray(x, dtype=float))
    if v.ndim != 1:
        raise ValueError(f"expected a vector, got shape {v.shape}")
    if dim is not None and v.shape[0] != dim:
        raise ValueError(f"expected dimension {dim}, got {v.shape[0]}")
    return v


def as_points(grid, dim: int) -> np.ndarray:
    """Normalize a grid argument to an (n, dim) array of points.

    Accepts a SampleGrid, an (n, dim) array, a 1-d array of scalars when
    dim == 1, or a single point of length dim.
    """
    if isinstance(grid, SampleGrid):
        pts = grid.points()
    else:
        pts = np.asarray(grid, dtype=float)
        if pts.ndim == 1:
            if dim == 1:
                pts = pts[:, None]
            elif pts.shape[0] == dim:
                pts = pts[None, :]
            else:
                raise ValueError(f"cannot interpret grid of shape {pts.shape} as points in R^{dim}")
        elif pts.ndim != 2 or pts.shape[1] != dim:
            raise ValueError(f"cannot interpret grid of shape {pts.shape} as points in R^{dim}")
    if pts.shape[0] == 0:
        raise ValueError("empty grid")
    return pts


@dataclass(frozen=True, eq=False)
class VectorField:
    """A map f: R^d -> R^d, optionally with equilibrium and regularity data.

    Parameters
    ----------
    dim : int
        State dimension d.
    fn : callable
        The field.  If ``vectorized`` is true, ``fn`` maps an (n, d) batch to
        an (n, d) batch; otherwise it maps a (d,) point to a (d,) value.
    equilibrium : array or None
        Designated zero theta* of the field.  Validated at construction:
        ||f(theta*)|| <= 1e-10.
    lipschitz : float or None
        Global Lipschitz constant L, when known.
    smoothness : {"C0", "C1", "C2"}
        Declared regularity.
    solution_set : SolutionSet or None
        Full zero set, for fields with more zeros than the designated one.
    """

    dim: int
    fn: Callable[[np.ndarray], np.ndarray]
    equilibrium: np.ndarray | None = None
    lipschitz: float | None = None
    smoothness: str = "C1"
    vectorized: bool = False
    solution_set: "SolutionSet | None" = None
    name: str = ""

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.smoothness not in ("C0", "C1", "C2"):
            raise ValueError(f"unknown smoothness class {self.smoothness!r}")
        if self.lipschitz is not None and not self.lipschitz >= 0.0:
            raise ValueError("lipschitz must be nonnegative")
        if self.equilibrium is not None:
            eq = _as_vector(self.equilibrium, self.dim)
            object.__setattr__(self, "equilibrium", eq)
            residual = float(np.linalg.norm(self.at(eq)))
            if residual > EQUILIBRIUM_TOL:
                raise ValueError(
                    f"declared equilibrium has residual {residual:.3e} > {EQUILIBRIUM_TOL:.0e}"
                )

    def at(self, theta) -> np.ndarray:
        """Evaluate at a single point (d,) -> (d,)."""
        theta = _as_vector(theta, self.dim)
        if self.vectorized:
            return np.asarray(self.fn(theta[None, :]), dtype=float)[0]
        return _as_vector(self.fn(theta), self.dim)

    def at_batch(self, thetas: np.ndarray) -> np.ndarray:
        """Evaluate at a batch of points (n, d) -> (n, d)."""
        thetas = np.asarray(thetas, dtype=float)
        if thetas.ndim != 2 or thetas.shape[1] != self.dim:
            raise ValueError(f"expected (n, {self.dim}) batch, got {thetas.shape}")
        if self.vectorized:
            return np.asarray(self.fn(thetas), dtype=float)
        return np.stack([_as_vector(self.fn(row), self.dim) for row in thetas])

    def lipschitz_ratio(self, pairs_a: np.ndarray, pairs_b: np.ndarray) -> float:
        """Max of ||f(a)-f(b)|| / ||a-b|| over row pairs; for spot checks."""
        fa = self.at_batch(np.asarray(pairs_a, float))
        fb = self.at_batch(np.asarray(pairs_b, float))
        num = np.linalg.norm(fa - fb, axis=1)
        den = np.linalg.norm(np.asarray(pairs_a, float) - np.asarray(pairs_b, float), axis=1)
        mask = den > 0
        return float(np.max(num[mask] / den[mask]))


@dataclass(frozen=True, eq=False)
class ComparatorFunction:
    """A scalar comparator phi: [0, inf) -> [0, inf) with a declared class.

    declared_class is one of "K" (zero at zero, strictly increasing),
    "KR" (class K and unbounded), "B" (zero at zero, positive infimum on
    every interval [eps, M] with 0 < eps < M).  The declaration is a claim;
    certification happens on grids via check_class_membership.
    """

    fn: Callable[[np.ndarray], np.ndarray]
    declared_class: str = "B"
    name: str = ""

    def __post_init__(self):
        if self.declared_class not in ("K", "KR", "B"):
            raise ValueError(f"unknown comparator class {self.declared_class!r}")

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        out = np.asarray(self.fn(r), dtype=float)
        return out


@dataclass(frozen=True, eq=False)
class SolutionSet:
    """A finite, explicitly listed set of candidate zeros."""

    points: np.ndarray  # (k, d)

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if pts.size == 0 or pts.shape[0] == 0:
            raise ValueError("empty solution set")
        object.__setattr__(self, "points", pts)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def distances(self, theta) -> np.ndarray:
        theta = _as_vector(theta, self.dim)
        return np.linalg.norm(self.points - theta, axis=1)

    def validate_zeros(self, field: VectorField, tol: float = EQUILIBRIUM_TOL) -> None:
        """Raise if any listed point is not a zero of the field."""
        residuals = np.linalg.norm(field.at_batch(self.points), axis=1)
        worst = float(residuals.max())
        if worst > tol:
            raise ValueError(f"solution set point has residual {worst:.3e} > {tol:.0e}")


def distance_to_set(theta, solutions: SolutionSet) -> float:
    """Euclidean distance from theta to the nearest listed solution point."""
    if solutions is None or solutions.points.shape[0] == 0:
        raise ValueError("empty solution set")
    return float(solutions.distances(theta).min())


@dataclass(frozen=True, eq=False)
class SampleGrid:
    """Deterministic shell sampler around a center point.

    For each radius, points_per_shell directions are drawn uniformly on the
    unit sphere from a seeded generator; identical seed and parameters yield
    identical point sets.
    """

    center: np.ndarray
    radii: tuple
    points_per_shell: int
    rng_seed: int = 0

    def __post_init__(self):
        center = _as_vector(self.center)
        object.__setattr__(self, "center", center)
        radii = tuple(float(r) for r in self.radii)
        if len(radii) == 0 or any(r <= 0 for r in radii):
            raise ValueError("radii must be positive")
        object.__setattr__(self, "radii", radii)
        if self.points_per_shell < 1:
            raise ValueError("points_per_shell must be >= 1")

    @property
    def dim(self) -> int:
        return self.center.shape[0]

    def points(self) -> np.ndarray:
        """All shell points, ordered by radius then draw index; (n, d)."""
        d = self.dim
        rng = np.random.default_rng(self.rng_seed)
        out = []
        for r in self.radii:
            z = rng.standard_normal((self.points_per_shell, d))
            norms = np.linalg.norm(z, axis=1)
            # a zero draw has probability zero; nudge defensively
            norms[norms == 0.0] = 1.0
            out.append(self.center + r * z / norms[:, None])
        return np.concatenate(out, axis=0)


@dataclass(frozen=True)
class ClassReport:
    """Grid-certified comparator-class membership flags with witnesses."""

    class_K_ok: bool
    class_KR_ok: bool
    class_B_ok: bool
    witnesses: dict


def _certify_growth(phi: ComparatorFunction, r_start: float,
                    factor: float = 10.0, decades: int = 16,
                    growth: float = 1e3) -> tuple[bool, tuple]:
    """Divergence proxy: strict increase along a geometric extension of the
    grid plus a 1000x growth requirement over the grid maximum.  Certifies
    unboundedness only up to the expansion horizon."""
    v0 = float(phi(r_start))
    if v0 <= 0.0:
        return False, (r_start,)
    prev, r = v0, r_start
    for _ in range(decades):
        r *= factor
        v = float(phi(r))
        if not np.isfinite(v) or v <= prev:
            return False, (r / factor, r)
        prev = v
    if prev < growth * v0:
        return False, (r_start, r)
    return True, ()


def check_class_membership(phi: ComparatorFunction, grid=None) -> ClassReport:
    """Certify comparator-class membership of phi on a grid.

    grid must be sorted, nonnegative, and contain 0.  Reports are relative to
    the grid: K requires strict increase across consecutive grid points, B
    requires phi(0) = 0 and phi > 0 at every positive grid point, KR requires
    K plus certified growth on a geometric extension of the grid.

    Raises ValueError("not nonnegative") if phi goes negative anywhere tested.
    """
    if grid is None:
        grid = DEFAULT_CERT_GRID
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise ValueError("grid must be a nonempty 1-d array")
    if grid[0] != 0.0 or np.any(np.diff(grid) <= 0) or np.any(grid < 0):
        raise ValueError("grid must be sorted, nonnegative, and contain 0")

    vals = np.asarray(phi(grid), dtype=float)
    if np.any(vals < 0.0):
        bad = int(np.argmax(vals < 0.0))
        raise ValueError(f"not nonnegative: phi({grid[bad]!r}) = {vals[bad]!r}")

    witnesses: dict = {}

    zero_ok = abs(vals[0]) <= 1e-12
    if not zero_ok:
        witnesses["zero"] = (0.0, float(vals[0]))

    # class K: strict increase on the grid
    diffs = np.diff(vals)
    k_ok = zero_ok and bool(np.all(diffs > 0.0))
    if zero_ok and not k_ok:
        i = int(np.argmax(diffs <= 0.0))
        witnesses["K"] = (float(grid[i]), float(grid[i + 1]))

    # class B: positive at every positive grid point
    pos = grid > 0.0
    b_ok = zero_ok and bool(np.all(vals[pos] > 0.0))
    if zero_ok and not b_ok:
        i = int(np.argmax(pos & (vals <= 0.0)))
        witnesses["B"] = (float(grid[i]),)

    # class KR: K plus certified growth past the grid
    kr_ok = False
    if k_ok and pos.any():
        kr_ok, wit = _certify_growth(phi, float(grid[-1]))
        if not kr_ok:
            witnesses["KR"] = wit
    elif k_ok:
        witnesses["KR"] = ()

    return ClassReport(class_K_ok=k_ok, class_KR_ok=kr_ok, class_B_ok=b_ok,
                       witnesses=witnesses)


def grid_infimum(phi: ComparatorFunction, lo: float, hi: float, n: int = 2001) -> float:
    """Infimum of phi over [lo, hi], estimated on a dense uniform grid."""
    if not 0 < lo < hi:
        raise ValueError("need 0 < lo < hi")
    r = np.linspace(lo, hi, n)
    return float(np.min(phi(r)))


def scale_limit_probe(field: VectorField, theta, r_values) -> np.ndarray:
    """Evaluate the scaled fields f(r * theta) / r along increasing r.

    Convergence of these values as r grows is the large-scale drift
    diagnostic; values shrinking toward zero mean the scale limit vanishes
    and the drift carries no information at infinity.
    """
    theta = _as_vector(theta, field.dim)
    r_values = np.asarray(r_values, dtype=float)
    if r_values.ndim != 1 or np.any(r_values <= 0) or np.any(np.diff(r_values) <= 0):
        raise ValueError("r_values must be positive and strictly increasing")
    pts = r_values[:, None] * theta[None, :]
    return field.at_batch(pts) / r_values[:, None]


def refine_equilibrium(field: VectorField, guess, tol: float = 1e-12,
                       max_iter: int = 60) -> np.ndarray:
    """Damped Newton refinement of a zero of the field from a user guess."""
    theta = _as_vector(guess, field.dim).copy()
    res = float(np.linalg.norm(field.at(theta)))
    for _ in range(max_iter):
        if res <= tol:
            return theta
        # central-difference Jacobian
        d = field.dim
        h = 1e-7 * (1.0 + np.abs(theta))
        J = np.empty((d, d))
        for j in range(d):
            e = np.zeros(d)
            e[j] = h[j]
            J[:, j] = (field.at(theta + e) - field.at(theta - e)) / (2 * h[j])
        try:
            step = np.linalg.solve(J, -field.at(theta))
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(J, -field.at(theta), rcond=None)[0]
        lam = 1.0
        while lam > 1e-10:
            cand = theta + lam * step
            cand_res = float(np.linalg.norm(field.at(cand)))
            if cand_res < res:
                theta, res = cand, cand_res
                break
            lam *= 0.5
        else:
            break
    if res > tol:
        raise RuntimeError(f"equilibrium refinement stalled at residual {res:.3e}")
    return theta


# ---------------------------------------------------------------------------
# built-in field registry

def _affine_builder(B: np.ndarray, theta_star: np.ndarray):
    # f(theta) = B (theta - theta*); broadcast-sum instead of BLAS so that a
    # row's result does not depend on the batch size
    def fn(thetas):
        U = thetas - theta_star
        return (U[:, None, :] * B[None, :, :]).sum(axis=2)
    return fn


def _build_linear(params: dict) -> VectorField:
    A = np.atleast_2d(np.asarray(params.get("A", [[-1.0]]), dtype=float))
    d = A.shape[0]
    if A.shape != (d, d):
        raise ValueError("A must be square")
    theta_star = _as_vector(params.get("theta_star", np.zeros(d)), d)
    return VectorField(
        dim=d,
        fn=_affine_builder(A, theta_star),
        equilibrium=theta_star,
        lipschitz=float(np.linalg.norm(A, 2)),
        smoothness="C2",
        vectorized=True,
        solution_set=SolutionSet(theta_star[None, :]),
        name="linear",
    )


def _build_gladyshev(params: dict) -> VectorField:
    def fn(thetas):
        return -thetas / (1.0 + thetas * thetas)
    return VectorField(
        dim=1,
        fn=fn,
        equilibrium=np.zeros(1),
        lipschitz=1.0,
        smoothness="C2",
        vectorized=True,
        solution_set=SolutionSet(np.zeros((1, 1))),
        name="gladyshev_passive",
    )


def _build_example_0_odd(params: dict) -> VectorField:
    # odd extension of minus the rise-then-decay profile:
    # profile(r) = r on [0, 1], exp(-(r-1)) for r > 1
    def fn(thetas):
        a = np.abs(thetas)
        with np.errstate(over="ignore"):
            base = np.where(a <= 1.0, a, np.exp(-(np.minimum(a, 1e8) - 1.0)))
        return -np.sign(thetas) * base
    return VectorField(
        dim=1,
        fn=fn,
        equilibrium=np.zeros(1),
        lipschitz=1.0,
        smoothness="C0",
        vectorized=True,
        solution_set=SolutionSet(np.zeros((1, 1))),
        name="example_0_odd",
    )


def _build_sine_multi(params: dict) -> VectorField:
    # cos(theta) - 1 for theta >= 0, odd extension below; zeros at 2*pi*n
    n_zeros = int(params.get("n_zeros", 5))

    def fn(thetas):
        return np.where(thetas >= 0.0, np.cos(thetas) - 1.0, 1.0 - np.cos(thetas))

    zeros = (2.0 * math.pi * np.arange(-n_zeros, n_zeros + 1))[:, None]
    return VectorField(
        dim=1,
        fn=fn,
        equilibrium=np.zeros(1),
        lipschitz=1.0,
        smoothness="C1",
        vectorized=True,
        solution_set=SolutionSet(zeros),
        name="sine_multi",
    )


def _build_value_eval(params: dict) -> VectorField:
    A = np.atleast_2d(np.asarray(params.get("A", [[0.5, 0.5], [0.5, 0.5]]), dtype=float))
    d = A.shape[0]
    gamma = float(params.get("gamma", 0.9))
    r = _as_vector(params.get("r", np.zeros(d)), d)
    B = gamma * A - np.eye(d)
    # fixed point of theta -> r + gamma A theta
    v_star = np.linalg.solve(np.eye(d) - gamma * A, r)
    return VectorField(
        dim=d,
        fn=_affine_builder(B, v_star),
        equilibrium=v_star,
        lipschitz=float(np.linalg.norm(B, 2)),
        smoothness="C2",
        vectorized=True,
        solution_set=SolutionSet(v_star[None, :]),
        name="value_eval",
    )


def _build_f4_family(params: dict) -> VectorField:
    A = np.atleast_2d(np.asarray(params.get("A", [[-1.0, 0.0], [0.0, -1.0]]), dtype=float))
    d = A.shape[0]
    theta_star = _as_vector(params.get("theta_star", np.zeros(d)), d)
    r_exp = float(params.get("r", 0.5))
    if not 0.0 < r_exp < 1.0:
        raise ValueError("exponent r must lie in (0, 1)")
    beta = 2.0 - 2.0 * r_exp
    lin = _affine_builder(A, theta_star)

    # linear part plus ||u||^2 * ||u||^(-2r) added to every component;
    # continuous extension by zero at the equilibrium since beta > 0
    def fn(thetas):
        U = thetas - theta_star
        nrm = np.sqrt((U * U).sum(axis=1))
        with np.errstate(over="ignore"):
            pert = np.where(nrm > 0.0, nrm ** beta, 0.0)
        return lin(thetas) + pert[:, None]

    # the perturbation gradient is globally bounded only when beta <= 1
    lip = float(np.linalg.norm(A, 2)) + math.sqrt(d) if beta <= 1.0 else None
    return VectorField(
        dim=d,
        fn=fn,
        equilibrium=theta_star,
        lipschitz=lip,
        smoothness="C2",
        vectorized=True,
        solution_set=SolutionSet(theta_star[None, :]),
        name="f4_family",
    )


FIELD_BUILDERS: dict[str, Callable[[dict], VectorField]] = {
    "linear": _build_linear,
    "gladyshev_passive": _build_gladyshev,
    "example_0_odd": _build_example_0_odd,
    "sine_multi": _build_sine_multi,
    "value_eval": _build_value_eval,
    "f4_family": _build_f4_family,
}


def make_field(name: str, params: dict | None = None) -> VectorField:
    """Construct a registered field by name."""
    try:
        builder = FIELD_BUILDERS[name]
    except KeyError:
        raise ValueError(f"unknown field {name!r}; registered: {sorted(FIELD_BUILDERS)}") from None
    return builder(dict(params or {}))


# ---------------------------------------------------------------------------
# built-in comparator registry

def _rise_then_decay(r: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        return np.where(r <= 1.0, r, np.exp(-(np.minimum(r, 1e8) - 1.0)))


def _build_power(params: dict) -> ComparatorFunction:
    k = float(params.get("k", 1.0))
    p = float(params.get("p", 2.0))
    if k <= 0 or p <= 0:
        raise ValueError("power comparator needs k > 0 and p > 0")
    return ComparatorFunction(fn=lambda r: k * np.power(r, p), declared_class="KR",
                              name=f"power(k={k}, p={p})")


def _build_saturating_quadratic(params: dict) -> ComparatorFunction:
    k = float(params.get("k", 1.0))
    if k <= 0:
        raise ValueError("saturating comparator needs k > 0")
    return ComparatorFunction(fn=lambda r: k * r * r / (1.0 + r * r), declared_class="B",
                              name=f"saturating_quadratic(k={k})")


def _build_rise_then_decay(params: dict) -> ComparatorFunction:
    return ComparatorFunction(fn=_rise_then_decay, declared_class="B", name="rise_then_decay")


def _build_rise_then_decay_times_r(params: dict) -> ComparatorFunction:
    return ComparatorFunction(fn=lambda r: r * _rise_then_decay(r), declared_class="B",
                              name="rise_then_decay_times_r")


COMPARATOR_BUILDERS: dict[str, Callable[[dict], ComparatorFunction]] = {
    "power": _build_power,
    "saturating_quadratic": _build_saturating_quadratic,
    "rise_then_decay": _build_rise_then_decay,
    "rise_then_decay_times_r": _build_rise_then_decay_times_r,
}


def make_comparator(name: str, params: dict | None = None) -> ComparatorFunction:
    """Construct a registered comparator by name."""
    try:
        builder = COMPARATOR_BUILDERS[name]
    except KeyError:
        raise ValueError(
            f"unknown comparator {name!r}; registered: {sorted(COMPARATOR_BUILDERS)}"
        ) from None
    return builder(dict(params or {}))
