import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from salyap.core import SampleGrid, VectorField, make_field
from salyap.ode import (
    IntegrationError,
    NoDecayError,
    check_gronwall_lower_bound,
    estimate_stability_constants,
    integrate_flow,
    integrate_flow_rk4,
)


def _linear(A, theta_star=None):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    params = {"A": A.tolist()}
    if theta_star is not None:
        params["theta_star"] = list(theta_star)
    return make_field("linear", params)


# ---------------------------------------------------------------------------
# flow oracles

def test_scalar_exponential_flow():
    flow = integrate_flow(_linear([[-1.0]]), [2.0], 1.0, rel_tol=1e-10, abs_tol=1e-12)
    assert abs(flow.states[-1, 0] - 2.0 * math.exp(-1.0)) <= 1e-8


def test_zero_field_is_stationary():
    field = VectorField(dim=2, fn=lambda th: np.zeros_like(th), vectorized=True)
    flow = integrate_flow(field, [3.0, -1.0], 5.0)
    assert np.array_equal(flow.states[0], [3.0, -1.0])
    assert_allclose(flow.states[-1], [3.0, -1.0], atol=1e-12)


def test_decoupled_diagonal_flow():
    field = _linear([[-1.0, 0.0], [0.0, -2.0]], theta_star=[1.0, 1.0])
    flow = integrate_flow(field, [2.0, 1.0], 1.0, rel_tol=1e-10, abs_tol=1e-12)
    assert_allclose(flow.states[-1], [1.0 + math.exp(-1.0), 1.0], atol=1e-9)


def test_initial_state_recorded_exactly():
    flow = integrate_flow(make_field("gladyshev_passive"), [0.7], 2.0)
    assert flow.times[0] == 0.0
    assert np.array_equal(flow.states[0], [0.7])
    assert flow.accepted_steps > 0 and flow.rejected_steps >= 0
    assert 0.0 <= flow.max_local_error_estimate <= 1.0


def test_semigroup_property():
    field = make_field("gladyshev_passive")
    full = integrate_flow(field, [1.5], 2.0, rel_tol=1e-10, abs_tol=1e-12,
                          t_eval=[0.0, 2.0])
    half = integrate_flow(field, [1.5], 1.0, rel_tol=1e-10, abs_tol=1e-12,
                          t_eval=[0.0, 1.0])
    rest = integrate_flow(field, half.states[-1], 1.0, rel_tol=1e-10,
                          abs_tol=1e-12, t_eval=[0.0, 1.0])
    assert_allclose(rest.states[-1], full.states[-1], atol=1e-9)


def test_tightening_tolerance_reduces_error():
    # sparse output grid so the controller, not output landing, sets the step
    errors = []
    for tol in (1e-3, 1e-5, 1e-7, 1e-9):
        flow = integrate_flow(_linear([[-1.0]]), [2.0], 1.0, rel_tol=tol,
                              abs_tol=tol * 1e-2, t_eval=[0.0, 1.0])
        errors.append(abs(flow.states[-1, 0] - 2.0 * math.exp(-1.0)))
    assert errors[1] < errors[0]
    assert errors[2] < errors[1]
    assert errors[3] < errors[2]


def test_lipschitz_growth_bound_on_random_pairs():
    field = make_field("gladyshev_passive")   # L = 1
    rng = np.random.default_rng(11)
    for _ in range(10):
        a, b = rng.normal(size=2) * 3.0
        fa = integrate_flow(field, [a], 1.5, t_eval=[0.0, 1.5])
        fb = integrate_flow(field, [b], 1.5, t_eval=[0.0, 1.5])
        gap = abs(fa.states[-1, 0] - fb.states[-1, 0])
        assert gap <= math.exp(1.5) * abs(a - b) * (1.0 + 1e-8)


def test_blowup_raises_integration_error():
    field = VectorField(dim=1, fn=lambda th: th * th, vectorized=True)
    with pytest.raises(IntegrationError, match="integration failure at t="):
        integrate_flow(field, [2.0], 1.0)   # explodes at t = 0.5


def test_tolerances_validated():
    with pytest.raises(ValueError, match="tolerances"):
        integrate_flow(_linear([[-1.0]]), [1.0], 1.0, rel_tol=0.5)


def test_fixed_step_rk4_matches_adaptive():
    field = _linear([[-1.0]])
    fixed = integrate_flow_rk4(field, [2.0], 1.0, n_steps=256)
    assert abs(fixed.states[-1, 0] - 2.0 * math.exp(-1.0)) <= 1e-9
    assert fixed.accepted_steps == 256 and fixed.rejected_steps == 0


def test_flow_csv_export(tmp_path):
    flow = integrate_flow(_linear([[-1.0, 0.0], [0.0, -1.0]]), [1.0, 2.0], 1.0,
                          t_eval=[0.0, 0.5, 1.0])
    out = tmp_path / "flow.csv"
    flow.write_csv(out)
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "t,x_1,x_2"
    assert len(lines) == 4


# ---------------------------------------------------------------------------
# Gronwall lower bound

def test_gronwall_tight_for_matched_rate():
    rep = check_gronwall_lower_bound(_linear([[-1.0]]), [1.0], 2.0, L=1.0)
    assert rep.ok
    assert_allclose(rep.min_ratio, 1.0, atol=1e-6)


def test_gronwall_slack_for_slower_field():
    # ratio e^{t/2} is increasing, minimum 1 at t = 0
    rep = check_gronwall_lower_bound(_linear([[-0.5]]), [1.0], 2.0, L=1.0)
    assert rep.ok
    assert rep.argmin_time == 0.0
    assert_allclose(rep.min_ratio, 1.0, atol=1e-9)


def test_gronwall_fails_for_understated_L():
    rep = check_gronwall_lower_bound(_linear([[-1.0]]), [1.0], 2.0, L=0.5)
    assert not rep.ok
    assert rep.min_ratio < 0.5


def test_gronwall_rejects_start_at_equilibrium():
    with pytest.raises(ValueError, match="degenerate initial condition"):
        check_gronwall_lower_bound(_linear([[-1.0]]), [0.0], 1.0, L=1.0)


# ---------------------------------------------------------------------------
# stability-constant estimation

def test_stability_constants_scalar_contraction():
    grid = SampleGrid(center=[0.0], radii=(0.5, 2.0, 10.0), points_per_shell=4,
                      rng_seed=1)
    est = estimate_stability_constants(_linear([[-1.0]]), grid)
    assert 1.0 <= est.mu_hat <= 1.05
    assert 0.95 <= est.gamma_hat <= 1.0
    assert est.sample_count > 0


def test_stability_constants_slowest_mode_governs():
    grid = SampleGrid(center=[0.0, 0.0], radii=(0.5, 2.0, 10.0),
                      points_per_shell=6, rng_seed=2)
    est = estimate_stability_constants(_linear([[-1.0, 0.0], [0.0, -3.0]]), grid)
    assert 0.95 <= est.gamma_hat <= 1.0


def test_stability_envelope_holds_on_samples():
    grid = SampleGrid(center=[0.0, 0.0], radii=(1.0, 5.0), points_per_shell=5,
                      rng_seed=3)
    field = _linear([[-1.0, 0.4], [0.0, -2.0]])
    est = estimate_stability_constants(field, grid)
    for p in grid.points():
        flow = integrate_flow(field, p, 5.0, t_eval=np.linspace(0.0, 5.0, 41))
        dists = np.linalg.norm(flow.states, axis=1)
        bound = est.mu_hat * np.linalg.norm(p) * np.exp(-est.gamma_hat * flow.times)
        assert np.all(dists <= bound * (1.0 + 1e-6))


def test_saturating_field_has_no_exponential_rate():
    # decay rate vanishes at large |theta|: 1/(1+theta^2) -> 0
    grid = SampleGrid(center=[0.0], radii=(1.0, 10.0, 100.0), points_per_shell=3,
                      rng_seed=4)
    with pytest.raises(NoDecayError, match="no exponential decay detected"):
        estimate_stability_constants(make_field("gladyshev_passive"), grid)
