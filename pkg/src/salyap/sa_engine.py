"""Driver for the noisy root-finding recursion.

theta_{t+1} = theta_t + alpha_t * (f(theta_t) + xi_{t+1})

Step-size schedules carry their summability classification.  Noise is drawn
from counter-based streams keyed by (seed, step, lane), which makes every
path bit-reproducible given its seed, independent of recording stride, and
lets diagnostic resampling (lane 1) coexist with the path stream (lane 0)
without perturbing it.  An ensemble is a vectorized map over independent
per-seed streams; run_path is the one-path special case of the same kernel,
so the two agree bitwise.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field as dc_field
from typing import Sequence

import numpy as np

from .core import VectorField, _as_vector

__all__ = [
    "StepSchedule",
    "ScheduleClassification",
    "classify_schedule",
    "classify_power_law",
    "classify_values",
    "NoiseModel",
    "SamplePath",
    "step",
    "run_path",
    "run_ensemble",
    "derive_path_seeds",
]

_CHUNK = 1024              # steps of standard normals generated per stream block
_DIVERGENCE_GUARD = 1e8    # paths beyond this norm are frozen and flagged
_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _splitmix64(state: int) -> tuple[int, int]:
    """One splitmix64 draw; returns (new_state, output)."""
    state = (state + _GOLDEN) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, (z ^ (z >> 31)) & _MASK64


def derive_path_seeds(master_seed: int, n: int) -> list[int]:
    """Fan a master seed out to n per-path stream seeds."""
    if n < 1:
        raise ValueError("need at least one path")
    state = int(master_seed) & _MASK64
    seeds = []
    for _ in range(n):
        state, out = _splitmix64(state)
        seeds.append(out)
    return seeds


def _standard_chunk(seed: int, block: int, lane: int, dim: int,
                    rows: int = _CHUNK) -> np.ndarray:
    """(rows, dim) standard normals from the (seed, block, lane) counter slot."""
    bg = np.random.Philox(key=np.array([seed & _MASK64, 0], dtype=np.uint64),
                          counter=np.array([0, block, lane, 0], dtype=np.uint64))
    return np.random.Generator(bg).standard_normal((rows, dim))


class _NoiseStream:
    """Per-path standard-normal cache, regenerated one block per _CHUNK steps.

    The draw consumed at step t depends only on (seed, t, lane, dim), never
    on how many draws preceded it, so strided recording and path freezing do
    not shift the stream.
    """

    def __init__(self, seeds: Sequence[int], dim: int, lane: int = 0):
        self.seeds = list(seeds)
        self.dim = dim
        self.lane = lane
        self._block = -1
        self._buf = None

    def normals(self, t: int) -> np.ndarray:
        block, row = divmod(t, _CHUNK)
        if block != self._block:
            self._buf = np.stack([
                _standard_chunk(s, block, self.lane, self.dim) for s in self.seeds
            ])
            self._block = block
        return self._buf[:, row, :]


# ---------------------------------------------------------------------------
# step-size schedules

@dataclass(frozen=True)
class StepSchedule:
    """Step-size sequence alpha_t, one of three families.

    power_law: alpha_t = c / (t0 + t)^p with c > 0, t0 >= 1, p > 0.
    constant:  alpha_t = c.
    custom:    explicit per-step values.

    Construction rejects parameters with alpha_0 >= 1; t_min is the first
    index from which every step size lies in (0, 1) (0 for the built-in
    families, possibly later for custom values).
    """

    family: str
    c: float = 1.0
    t0: float = 1.0
    p: float = 1.0
    values: tuple = ()
    t_min: int = dc_field(init=False, default=0)

    def __post_init__(self):
        if self.family == "power_law":
            if not self.c > 0.0:
                raise ValueError("c must be > 0")
            if not self.t0 >= 1.0:
                raise ValueError("t0 must be >= 1")
            if not self.p > 0.0:
                raise ValueError("p must be > 0")
            a0 = self.c / self.t0 ** self.p
            if a0 >= 1.0:
                raise ValueError(
                    f"alpha_0 = c / t0^p = {a0:g} >= 1; shrink c or raise t0")
        elif self.family == "constant":
            if not 0.0 < self.c < 1.0:
                raise ValueError("constant step size must lie in (0, 1)")
        elif self.family == "custom":
            vals = tuple(float(v) for v in self.values)
            if not vals:
                raise ValueError("custom schedule needs at least one value")
            arr = np.asarray(vals)
            if not np.all(np.isfinite(arr)) or np.any(arr <= 0.0):
                raise ValueError("custom step sizes must be finite and > 0")
            object.__setattr__(self, "values", vals)
            above = np.nonzero(arr >= 1.0)[0]
            if above.size:
                t_min = int(above[-1]) + 1
                if t_min >= len(vals):
                    raise ValueError("custom schedule never enters (0, 1)")
                object.__setattr__(self, "t_min", t_min)
            if arr[0] >= 1.0:
                raise ValueError("alpha_0 must be < 1")
        else:
            raise ValueError(f"unknown schedule family {self.family!r}")

    # constructors mirroring the family enum
    @classmethod
    def power_law(cls, c: float, t0: float = 1.0, p: float = 1.0) -> "StepSchedule":
        return cls(family="power_law", c=c, t0=t0, p=p)

    @classmethod
    def constant(cls, c: float) -> "StepSchedule":
        return cls(family="constant", c=c)

    @classmethod
    def custom(cls, values) -> "StepSchedule":
        return cls(family="custom", values=tuple(values))

    def alpha(self, t: int) -> float:
        if self.family == "power_law":
            return self.c / (self.t0 + t) ** self.p
        if self.family == "constant":
            return self.c
        if t >= len(self.values):
            raise ValueError(f"custom schedule has no value for t={t}")
        return self.values[t]

    def alphas(self, T: int) -> np.ndarray:
        """Step sizes for t = 0 .. T-1 as one array."""
        if T < 1:
            raise ValueError("T must be >= 1")
        if self.family == "power_law":
            t = np.arange(T, dtype=float)
            return self.c / (self.t0 + t) ** self.p
        if self.family == "constant":
            return np.full(T, self.c)
        if T > len(self.values):
            raise ValueError(
                f"custom schedule has {len(self.values)} values, horizon needs {T}")
        return np.asarray(self.values[:T], dtype=float)


@dataclass(frozen=True)
class ScheduleClassification:
    """Summability of a schedule: square_summable is sum alpha_t^2 < inf,
    non_summable is sum alpha_t = inf.  heuristic marks a numeric tail-fit
    answer (custom schedules) rather than an analytic one."""

    square_summable: bool
    non_summable: bool
    heuristic: bool = False


def classify_power_law(p: float) -> ScheduleClassification:
    """Summability of alpha_t = c / (t0 + t)^p; scale-free, c and t0 do not
    enter: square-summable iff p > 1/2, non-summable iff p <= 1."""
    if not p > 0.0:
        raise ValueError("p must be > 0")
    return ScheduleClassification(square_summable=p > 0.5, non_summable=p <= 1.0)


def classify_values(values) -> ScheduleClassification:
    """Heuristic classification of an explicit step-size list by the log-log
    slope of its tail (interpreting the list as the head of an infinite
    sequence with the same decay exponent)."""
    vals = np.asarray(list(values), dtype=float)
    if vals.size == 0 or np.any(vals <= 0.0) or not np.all(np.isfinite(vals)):
        raise ValueError("step sizes must be finite and > 0")
    n = vals.size
    if n < 4:
        # too short to fit a tail; a finite list is trivially square-summable
        return ScheduleClassification(True, False, heuristic=True)
    tail = slice(n // 2, None)
    t = np.arange(1.0, n + 1.0)
    slope = np.polyfit(np.log(t[tail]), np.log(vals[tail]), 1)[0]
    p_hat = -float(slope)
    return ScheduleClassification(square_summable=p_hat > 0.5,
                                  non_summable=p_hat <= 1.0,
                                  heuristic=True)


def classify_schedule(schedule: StepSchedule) -> ScheduleClassification:
    """Classify a schedule's two summability properties.

    Analytic for the parametric families: a power law with exponent p is
    square-summable iff p > 1/2 and non-summable iff p <= 1; a constant
    schedule is never square-summable and always non-summable.  Custom
    schedules get a tail log-log slope fit, flagged heuristic.
    """
    if schedule.family == "power_law":
        return classify_power_law(schedule.p)
    if schedule.family == "constant":
        return ScheduleClassification(square_summable=False, non_summable=True)
    return classify_values(schedule.values)


# ---------------------------------------------------------------------------
# noise models

_NOISE_KINDS = ("zero", "gaussian_state_scaled", "sphere_bounded")


@dataclass(frozen=True)
class NoiseModel:
    """Conditionally mean-zero noise for the recursion.

    gaussian_state_scaled: xi ~ N(0, sigma^2 (1 + ||theta - theta*||^2) / d * I),
    so E||xi||^2 equals sigma^2 (1 + ||theta - theta*||^2) exactly.
    sphere_bounded: ||xi|| = sigma * sqrt(1 + ||theta - theta*||^2) with a
    uniformly random direction.
    zero: xi = 0 (deterministic recursion).
    """

    kind: str = "zero"
    sigma: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.kind not in _NOISE_KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}; one of {_NOISE_KINDS}")
        if self.kind == "zero":
            if self.sigma != 0.0:
                raise ValueError("zero noise cannot carry a sigma")
        elif not self.sigma > 0.0:
            raise ValueError("sigma must be > 0")

    @property
    def needs_draws(self) -> bool:
        return self.kind != "zero"

    def with_seed(self, seed: int) -> "NoiseModel":
        return NoiseModel(kind=self.kind, sigma=self.sigma, rng_seed=int(seed))

    def transform(self, Z: np.ndarray, U: np.ndarray) -> np.ndarray:
        """Map standard normals Z (n, d) to noise at offsets U = theta - theta*.

        U broadcasts against Z, so one state with many draws and one draw per
        state share a code path.
        """
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        U = np.atleast_2d(np.asarray(U, dtype=float))
        d = Z.shape[1]
        r2 = (U * U).sum(axis=1)
        if self.kind == "gaussian_state_scaled":
            scale = self.sigma * np.sqrt((1.0 + r2) / d)
            return scale[:, None] * Z
        if self.kind == "sphere_bounded":
            norms = np.sqrt((Z * Z).sum(axis=1))
            safe = np.where(norms > 0.0, norms, 1.0)
            radius = self.sigma * np.sqrt(1.0 + r2)
            return (radius / safe)[:, None] * Z
        return np.zeros_like(Z)

    def sample(self, theta, theta_star, t: int = 0, n: int = 1,
               lane: int = 0) -> np.ndarray:
        """n independent draws conditioned on one state, from the (rng_seed,
        t, lane) counter slot.  Shape (n, d)."""
        theta = np.asarray(theta, dtype=float)
        d = theta.shape[-1] if theta.ndim else 1
        if self.kind == "zero":
            return np.zeros((n, d))
        theta_star = _as_vector(theta_star, d)
        Z = _standard_chunk(self.rng_seed, t, lane, d, rows=n)
        U = (theta - theta_star).reshape(1, d)
        return self.transform(Z, U)


# ---------------------------------------------------------------------------
# the recursion

def step(theta, field: VectorField, alpha: float, noise: NoiseModel,
         t: int = 0, theta_star=None) -> tuple[np.ndarray, np.ndarray]:
    """One update theta + alpha * (f(theta) + xi); returns (theta_next, xi).

    The noise draw comes from the (noise.rng_seed, t) slot of the path
    stream, so iterating step over t reproduces run_path exactly.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    theta = _as_vector(theta, field.dim)
    if noise.needs_draws:
        if theta_star is None:
            theta_star = field.equilibrium
        if theta_star is None:
            raise ValueError("state-scaled noise needs a reference point theta_star")
        theta_star = _as_vector(theta_star, field.dim)
        # draw exactly as the vectorized kernel does: block t // _CHUNK, row t % _CHUNK
        block, row = divmod(t, _CHUNK)
        Z = _standard_chunk(noise.rng_seed, block, 0, field.dim)[row]
        xi = noise.transform(Z[None, :], (theta - theta_star)[None, :])[0]
    else:
        xi = np.zeros(field.dim)
    theta_next = theta + alpha * (field.at(theta) + xi)
    return theta_next, xi


@dataclass
class SamplePath:
    """One realization of the recursion.

    thetas holds the recorded states (rows aligned with times, always
    including steps 0 and T); sup_norm is the running max of the distance to
    the reference point over every step, recorded or not.  A diverged path
    is frozen at its last in-guard state and flagged, not discarded.
    rs_ledger is attached by the diagnostic layer after the run.
    """

    seed: int
    times: np.ndarray
    thetas: np.ndarray
    alphas: np.ndarray
    sup_norm: float
    diverged: bool
    v_values: np.ndarray | None = None
    rs_ledger: tuple | None = None

    @property
    def dim(self) -> int:
        return self.thetas.shape[1]

    @property
    def final_theta(self) -> np.ndarray:
        return self.thetas[-1]

    def write_csv(self, path) -> None:
        """Columns: t, x_1..x_d, V (when recorded), alpha_t; repr floats so a
        rerun with the same seed and config is byte-identical."""
        d = self.dim
        header = ["t"] + [f"x_{i + 1}" for i in range(d)]
        if self.v_values is not None:
            header.append("V")
        header.append("alpha_t")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for k, t in enumerate(self.times):
                row = [str(int(t))]
                row += [repr(float(x)) for x in self.thetas[k]]
                if self.v_values is not None:
                    row.append(repr(float(self.v_values[k])))
                row.append(repr(float(self.alphas[k])))
                writer.writerow(row)


def _resolve_reference(field: VectorField, theta_star) -> np.ndarray:
    if theta_star is not None:
        return _as_vector(theta_star, field.dim)
    if field.equilibrium is not None:
        return field.equilibrium
    return np.zeros(field.dim)


def _record_times(T_steps: int, stride: int | None, extra=None) -> np.ndarray:
    if stride is None:
        times = np.arange(T_steps + 1)
    else:
        if stride < 1:
            raise ValueError("stride must be >= 1")
        times = np.arange(0, T_steps + 1, stride)
        if times[-1] != T_steps:
            times = np.append(times, T_steps)
    if extra is not None:
        extra = np.asarray(list(extra), dtype=int)
        if extra.size:
            if extra.min() < 0 or extra.max() > T_steps:
                raise ValueError("checkpoint outside [0, T_steps]")
            times = np.union1d(times, extra)
    return times.astype(int)


def _simulate(field: VectorField, theta0: np.ndarray, schedule: StepSchedule,
              noise: NoiseModel, seeds: Sequence[int], T_steps: int,
              record_times: np.ndarray, V=None, theta_star=None) -> list[SamplePath]:
    """Vectorized kernel: all paths advance in lockstep, one row per path.

    Every elementwise update is row-independent, so the result for a given
    seed does not depend on which other seeds share the batch.
    """
    n = len(seeds)
    d = field.dim
    ref = _resolve_reference(field, theta_star)
    thetas = np.tile(_as_vector(theta0, d), (n, 1))
    alphas_all = schedule.alphas(T_steps) if T_steps else np.zeros(0)

    rt = record_times
    n_rec = rt.size
    rec_thetas = np.empty((n_rec, n, d))
    frozen = np.zeros(n, dtype=bool)

    U = thetas - ref
    sup = np.sqrt((U * U).sum(axis=1))
    stream = _NoiseStream(seeds, d, lane=0) if noise.needs_draws else None

    k = 0
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(T_steps):
            if k < n_rec and rt[k] == t:
                rec_thetas[k] = thetas
                k += 1
            a = alphas_all[t]
            drift = field.at_batch(thetas)
            if stream is not None:
                xi = noise.transform(stream.normals(t), thetas - ref)
                y = drift + xi
            else:
                y = drift
            nxt = thetas + a * y
            sq = (nxt * nxt).sum(axis=1)
            bad = ~np.isfinite(sq) | (sq > _DIVERGENCE_GUARD ** 2)
            newly = bad & ~frozen
            if newly.any():
                frozen = frozen | newly
            thetas = np.where(frozen[:, None], thetas, nxt)
            Un = thetas - ref
            dist = np.sqrt((Un * Un).sum(axis=1))
            sup = np.maximum(sup, dist)
        while k < n_rec:
            # only T_steps itself can remain
            rec_thetas[k] = thetas
            k += 1

    rec_alphas = np.array([schedule.alpha(int(t)) for t in rt])
    v_rec = None
    if V is not None:
        flat = rec_thetas.reshape(n_rec * n, d)
        v_rec = V.value_batch(flat).reshape(n_rec, n)

    paths = []
    for i in range(n):
        paths.append(SamplePath(
            seed=int(seeds[i]),
            times=rt.copy(),
            thetas=rec_thetas[:, i, :].copy(),
            alphas=rec_alphas.copy(),
            sup_norm=float(sup[i]),
            diverged=bool(frozen[i]),
            v_values=None if v_rec is None else v_rec[:, i].copy(),
        ))
    return paths


def run_path(field: VectorField, theta0, schedule: StepSchedule, noise: NoiseModel,
             T_steps: int, stride: int | None = None, V=None, theta_star=None,
             record_times=None) -> SamplePath:
    """Iterate the recursion T_steps times from theta0 with noise.rng_seed's
    stream.  stride=None records the full trajectory; otherwise snapshots at
    multiples of stride (plus steps 0 and T and any explicit record_times)."""
    if T_steps < 1:
        raise ValueError("T_steps must be >= 1")
    rt = _record_times(T_steps, stride, record_times)
    return _simulate(field, theta0, schedule, noise, [noise.rng_seed],
                     T_steps, rt, V=V, theta_star=theta_star)[0]


def run_ensemble(field: VectorField, theta0, schedule: StepSchedule,
                 noise: NoiseModel, T_steps: int, n_seeds: int,
                 master_seed: int = 0, stride: int | None = None, V=None,
                 theta_star=None, record_times=None) -> list[SamplePath]:
    """Run n_seeds independent paths, seeds fanned out from master_seed.

    Results are ordered by path index and independent of batching: path i
    equals run_path with noise seeded by derive_path_seeds(master_seed,
    n_seeds)[i].
    """
    if T_steps < 1:
        raise ValueError("T_steps must be >= 1")
    if stride is None and T_steps * n_seeds > 2_000_000:
        stride = max(1, T_steps // 200)
    rt = _record_times(T_steps, stride, record_times)
    seeds = derive_path_seeds(master_seed, n_seeds)
    return _simulate(field, theta0, schedule, noise, seeds, T_steps, rt,
                     V=V, theta_star=theta_star)
