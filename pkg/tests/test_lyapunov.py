import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from salyap.core import (
    ComparatorFunction,
    SampleGrid,
    make_comparator,
    make_field,
)
from salyap.lyapunov import (
    CheckReport,
    ConverseParams,
    LyapunovFunction,
    check_decay,
    check_F4,
    check_generalized_sandwich,
    check_gradient_linear_bound,
    check_hessian_bound,
    check_sandwich,
    construct_converse_V,
    default_fit_grid,
    fit_envelope_constants,
    make_lyapunov,
    solve_lyapunov_matrix_equation,
    spectral_norm_power,
    vdot,
    vdot_batch,
    write_reports_csv,
)

ZERO1 = np.zeros(1)
ZERO2 = np.zeros(2)


def quad(dim=1, coeff=1.0, center=None):
    return make_lyapunov("quadratic", {"coeff": coeff}, dim,
                         ZERO1 * 0 if center is None else center)


def scalar_grid(lo=1e-2, hi=1e3, n=60):
    g = np.geomspace(lo, hi, n)
    return np.concatenate([-g[::-1], g])[:, None]


# ---------------------------------------------------------------------------
# derivative along the field

def test_vdot_quadratic_linear_field():
    V = make_lyapunov("quadratic", None, 1, [0.0])
    field = make_field("linear", {"A": [[-1.0]]})
    assert_allclose(vdot(V, field, [3.0]), -18.0, rtol=1e-12)


def test_vdot_multiwell_field_at_pi():
    V = make_lyapunov("quadratic", None, 1, [0.0])
    field = make_field("sine_multi")
    # f(pi) = cos(pi) - 1 = -2, so 2 pi f(pi) = -4 pi
    assert_allclose(vdot(V, field, [math.pi]), -4.0 * math.pi, rtol=1e-12)


def test_vdot_weighted_quadratic():
    V = make_lyapunov("quadratic", {"P": [[5.0]]}, 1, [0.0])
    field = make_field("linear", {"A": [[-0.1]]})
    assert_allclose(vdot(V, field, [1.0]), -1.0, rtol=1e-12)


def test_vdot_batch_matches_pointwise():
    V = make_lyapunov("quartic", {"k": 0.3}, 2, [0.5, -0.5])
    field = make_field("linear", {"A": [[-1.0, 0.2], [0.0, -2.0]]})
    pts = np.random.default_rng(5).normal(size=(15, 2)) * 2.0
    assert_allclose(vdot_batch(V, field, pts),
                    [vdot(V, field, p) for p in pts], rtol=1e-10)


# ---------------------------------------------------------------------------
# sandwich checks

def test_sandwich_exact_quadratic():
    V = make_lyapunov("quadratic", None, 1, [0.0])
    rep = check_sandwich(V, [0.0], 1.0, 1.0, scalar_grid())
    assert rep.ok
    assert abs(rep.worst_margin) <= 1e-12


def test_sandwich_converse_coefficient_band():
    V = make_lyapunov("quadratic", {"coeff": 0.632121}, 1, [0.0])
    rep = check_sandwich(V, [0.0], 0.5, 0.7, scalar_grid())
    assert rep.ok


def test_sandwich_quartic_fails_near_zero():
    # theta^4 / theta^2 -> 0, so the lower bound breaks below sqrt(a)
    V = make_lyapunov("quartic", None, 1, [0.0])
    rep = check_sandwich(V, [0.0], 0.1, 10.0, scalar_grid(lo=1e-2, hi=1.0))
    assert not rep.ok
    assert abs(rep.worst_point[0]) < math.sqrt(0.1)


def test_sandwich_rejects_inverted_bounds():
    V = make_lyapunov("quadratic", None, 1, [0.0])
    with pytest.raises(ValueError, match="0 < a <= b"):
        check_sandwich(V, [0.0], 2.0, 1.0, scalar_grid())


def test_generalized_sandwich_bracket():
    V = make_lyapunov("quadratic", None, 1, [0.0])
    eta = make_comparator("power", {"k": 0.5, "p": 2.0})
    psi = make_comparator("power", {"k": 2.0, "p": 2.0})
    assert check_generalized_sandwich(V, [0.0], eta, psi, scalar_grid()).ok

    tight = make_comparator("power", {"k": 1.0, "p": 2.0})
    rep = check_generalized_sandwich(V, [0.0], tight, tight, scalar_grid())
    assert rep.ok
    assert abs(rep.worst_margin) <= 1e-9

    strong = make_comparator("power", {"k": 2.0, "p": 2.0})
    assert not check_generalized_sandwich(V, [0.0], strong, psi, scalar_grid()).ok


def test_generalized_sandwich_requires_KR():
    V = make_lyapunov("quadratic", None, 1, [0.0])
    bounded = make_comparator("saturating_quadratic")
    psi = make_comparator("power")
    with pytest.raises(ValueError, match="not class KR"):
        check_generalized_sandwich(V, [0.0], bounded, psi, scalar_grid())


# ---------------------------------------------------------------------------
# decay

def test_decay_linear_field_with_slack():
    V = make_lyapunov("quadratic", None, 1, [0.0])
    field = make_field("linear", {"A": [[-1.0]]})
    phi = make_comparator("power", {"k": 1.0, "p": 2.0})
    rep = check_decay(V, field, phi, [0.0], scalar_grid())
    assert rep.ok   # -2 theta^2 <= -theta^2


def test_decay_saturating_field_factor_two_slack():
    V = make_lyapunov("quadratic", None, 1, [0.0])
    field = make_field("gladyshev_passive")
    phi = make_comparator("saturating_quadratic", {"k": 1.0})
    rep = check_decay(V, field, phi, None, scalar_grid())
    assert rep.ok
    # margin is r^2 / (1 + r^2), which approaches 1 on the far grid
    assert rep.worst_margin > 0.0


def test_decay_certifies_class_B_only_comparator():
    # -vdot = 2 |theta| profile(|theta|) decays past |theta| = 1: class B, not K.
    # The exponential tail underflows past r ~ 745, so certify on a grid the
    # comparator can represent (class reports are grid-relative by contract).
    V = make_lyapunov("quadratic", None, 1, [0.0])
    field = make_field("example_0_odd")
    phi = make_comparator("rise_then_decay_times_r")
    cert = np.concatenate(([0.0], np.geomspace(1e-4, 1e2, 200)))
    rep = check_decay(V, field, phi, None, scalar_grid(hi=1e2), cert_grid=cert)
    assert rep.ok

    from salyap.core import check_class_membership
    cls = check_class_membership(phi, cert)
    assert cls.class_B_ok and not cls.class_K_ok


def test_decay_rejects_non_class_B():
    V = make_lyapunov("quadratic", None, 1, [0.0])
    field = make_field("linear", {"A": [[-1.0]]})
    flat = ComparatorFunction(fn=lambda r: np.zeros_like(r), declared_class="B",
                              name="flat")
    with pytest.raises(ValueError, match="not class B"):
        check_decay(V, field, flat, [0.0], scalar_grid())


# ---------------------------------------------------------------------------
# Hessian and gradient bounds

def test_spectral_norm_matches_numpy():
    rng = np.random.default_rng(7)
    for d in (1, 2, 5, 8):
        A = rng.normal(size=(d, d))
        H = 0.5 * (A + A.T)
        assert_allclose(spectral_norm_power(H), np.linalg.norm(H, 2), rtol=1e-8)


def test_hessian_bound_constant_hessian_margin_zero():
    P = np.array([[2.0, 0.5], [0.5, 1.0]])
    V = make_lyapunov("quadratic", {"P": P.tolist()}, 2, [0.0, 0.0])
    M = np.linalg.norm(P, 2)
    grid = SampleGrid(center=[0.0, 0.0], radii=(0.1, 1.0, 10.0),
                      points_per_shell=8, rng_seed=9)
    rep = check_hessian_bound(V, M, grid)
    assert rep.ok
    assert abs(rep.worst_margin) <= 1e-8


def test_hessian_bound_quartic_fails_on_wide_grid():
    V = make_lyapunov("quartic", None, 1, [0.0])
    rep = check_hessian_bound(V, 1000.0, scalar_grid(hi=1e3))
    assert not rep.ok


def test_gradient_linear_bound_quadratic():
    V = make_lyapunov("quadratic", {"coeff": 0.632121}, 1, [0.0])
    rep = check_gradient_linear_bound(V, [0.0], 1.3, scalar_grid())
    assert rep.ok
    assert_allclose(1.3 - rep.worst_margin, 1.264242, rtol=1e-6)

    P = np.array([[2.0, 0.5], [0.5, 1.0]])
    V2 = make_lyapunov("quadratic", {"P": P.tolist()}, 2, [0.0, 0.0])
    grid = SampleGrid(center=[0.0, 0.0], radii=(0.5, 5.0), points_per_shell=10,
                      rng_seed=13)
    rep2 = check_gradient_linear_bound(V2, [0.0, 0.0], 2.0 * np.linalg.norm(P, 2),
                                       grid)
    assert rep2.ok


def test_gradient_linear_bound_quartic_fails():
    V = make_lyapunov("quartic", None, 1, [0.0])
    rep = check_gradient_linear_bound(V, [0.0], 100.0, np.array([[10.0]]))
    assert not rep.ok
    # ratio 4 theta^3 / theta = 400 at theta = 10
    assert_allclose(rep.worst_margin, 100.0 - 400.0, rtol=1e-10)


# ---------------------------------------------------------------------------
# finite differences

def test_fd_gradient_matches_analytic():
    params = {"P": [[2.0, 0.5], [0.5, 1.0]]}
    analytic = make_lyapunov("quadratic", params, 2, [0.0, 0.0])
    fd = LyapunovFunction(dim=2, fn=analytic.fn, vectorized=True,
                          fd_center=ZERO2)
    pts = np.random.default_rng(17).normal(size=(10, 2)) * 5.0
    assert_allclose(fd.grad_batch(pts), analytic.grad_batch(pts), rtol=1e-4)


def test_fd_hessian_matches_analytic():
    analytic = make_lyapunov("quartic", {"k": 0.7}, 2, [0.1, -0.2])
    fd = LyapunovFunction(dim=2, fn=analytic.fn, vectorized=True,
                          fd_center=[0.1, -0.2])
    pts = np.random.default_rng(19).normal(size=(6, 2)) * 3.0
    H_fd = fd.hess_batch(pts)
    H_an = analytic.hess_batch(pts)
    assert_allclose(H_fd, H_an, rtol=2e-4, atol=1e-6)
    # symmetric by construction
    assert_allclose(H_fd, np.transpose(H_fd, (0, 2, 1)), atol=1e-8)


# ---------------------------------------------------------------------------
# curvature-times-radius bound

def _f4_grid(hi=1e4):
    return SampleGrid(center=[0.0, 0.0], radii=tuple(np.geomspace(1e-3, hi, 19)),
                      points_per_shell=8, rng_seed=23)


def test_F4_linear_field_zero_curvature():
    field = make_field("linear", {"A": [[-1.0, 0.3], [0.0, -2.0]]})
    rep = check_F4(field, 0.5, _f4_grid())
    assert rep.ok
    assert rep.worst_margin >= 0.5 - 1e-6


def test_F4_borderline_exponent_passes():
    field = make_field("f4_family", {"A": [[-1.0, 0.0], [0.0, -1.0]], "r": 0.5})
    rep = check_F4(field, 2.0, _f4_grid())
    assert rep.ok
    # curvature * radius is exactly 1 for the square-root perturbation
    assert_allclose(2.0 - rep.worst_margin, 1.0, rtol=1e-3)


def test_F4_subcritical_exponent_fails():
    field = make_field("f4_family", {"A": [[-1.0, 0.0], [0.0, -1.0]], "r": 0.25})
    rep = check_F4(field, 2.0, _f4_grid())
    assert not rep.ok
    # product grows like 0.5 * 1.5 * sqrt(radius); equals 150 at radius 1e4
    assert rep.worst_margin < 2.0 - 100.0


def test_F4_cubic_scalar_fails_past_threshold():
    from salyap.core import SolutionSet, VectorField
    field = VectorField(dim=1, fn=lambda th: th ** 3, vectorized=True,
                        equilibrium=ZERO1, smoothness="C2",
                        solution_set=SolutionSet(np.zeros((1, 1))))
    K = 6.0
    hi = math.sqrt(K / 6.0) + 1.0
    rep = check_F4(field, K, np.linspace(0.1, hi, 40)[:, None])
    assert not rep.ok


def test_F4_skips_points_at_equilibrium():
    field = make_field("linear", {"A": [[-1.0, 0.0], [0.0, -1.0]]})
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 2.0]])
    rep = check_F4(field, 1.0, pts)
    assert rep.ok
    assert rep.skipped == 1
    assert rep.samples == 2


def test_F4_requires_C2():
    field = make_field("example_0_odd")   # declared C0
    with pytest.raises(ValueError, match="C2"):
        check_F4(field, 1.0, np.array([[1.0]]))


# ---------------------------------------------------------------------------
# converse construction

def test_converse_scalar_closed_form():
    field = make_field("linear", {"A": [[-1.0]]})
    params = ConverseParams(kappa=0.5, T=1.0, mu=1.0, gamma=1.0)
    V = construct_converse_V(field, ZERO1, params)
    coeff = 1.0 - math.exp(-1.0)
    for theta in (0.1, 1.0, 2.0, 10.0):
        assert_allclose(V.value([theta]), coeff * theta * theta, rtol=1e-6)
    assert_allclose(V.value([2.0]), 2.5284824, rtol=1e-6)


def test_converse_scalar_decay_and_adaptive_crosscheck():
    field = make_field("linear", {"A": [[-1.0]]})
    params = ConverseParams(kappa=0.5, T=1.0, mu=1.0, gamma=1.0)
    V = construct_converse_V(field, ZERO1, params)
    # vdot = -2 (1 - e^{-1}) theta^2 = -1.2642411 theta^2
    assert_allclose(vdot(V, field, [2.0]), -1.2642411 * 4.0, rtol=1e-4)
    phi = make_comparator("power", {"k": 1.2, "p": 2.0})
    assert check_decay(V, field, phi, ZERO1, scalar_grid()).ok
    # the adaptive integrator agrees with the fixed-step evaluator
    assert_allclose(V._evaluator.value_adaptive([2.0]), V.value([2.0]), rtol=1e-8)


def test_converse_diagonal_field_is_quadratic():
    field = make_field("linear", {"A": [[-1.0, 0.0], [0.0, -2.0]]})
    params = ConverseParams(kappa=0.4, T=2.0, mu=1.0, gamma=1.0)
    V = construct_converse_V(field, ZERO2, params)
    # defensive closed form: diag coefficients of int exp(2 kappa t) e^{-2 lambda t}
    c1 = (1.0 - math.exp(-1.2 * 2.0)) / 1.2
    c2 = (1.0 - math.exp(-3.2 * 2.0)) / 3.2
    for u in ([1.0, 0.0], [0.0, 1.0], [1.5, -2.0], [10.0, 3.0]):
        u = np.asarray(u)
        assert_allclose(V.value(u), c1 * u[0] ** 2 + c2 * u[1] ** 2, rtol=1e-6)
    # Hessian constant across points
    pts = np.array([[0.5, 0.5], [2.0, -1.0], [8.0, 8.0], [-3.0, 0.2]])
    H = V.hess_batch(pts)
    spread = np.abs(H - H[0]).max()
    assert spread <= 1e-5 * np.abs(H[0]).max()


def test_converse_center_value_zero_and_positive_elsewhere():
    field = make_field("linear", {"A": [[-1.0, 0.5], [0.0, -1.0]]})
    V = construct_converse_V(field, ZERO2,
                             ConverseParams(kappa=0.3, T=2.0, mu=1.2, gamma=0.8))
    assert V.value(ZERO2) == 0.0
    for p in default_fit_grid(ZERO2, shells=5, points_per_shell=5).points():
        assert V.value(p) > 0.0


def test_converse_monotone_in_horizon():
    field = make_field("linear", {"A": [[-1.0]]})
    V1 = construct_converse_V(field, ZERO1,
                              ConverseParams(kappa=0.5, T=1.0, mu=1.0, gamma=1.0))
    V2 = construct_converse_V(field, ZERO1,
                              ConverseParams(kappa=0.5, T=2.0, mu=1.0, gamma=1.0))
    for theta in (0.3, 1.0, 4.0):
        assert V2.value([theta]) >= V1.value([theta])


def test_converse_params_validation():
    with pytest.raises(ValueError, match="kappa"):
        ConverseParams(kappa=1.5, T=3.0, mu=1.0, gamma=1.0)
    with pytest.raises(ValueError, match="horizon too short"):
        ConverseParams(kappa=0.5, T=0.5, mu=2.0, gamma=1.0)
    # boundary exactly admissible
    ConverseParams(kappa=0.5, T=math.log(2.0) / 0.5, mu=2.0, gamma=1.0)


def test_converse_fitted_constants_close_checks():
    field = make_field("linear", {"A": [[-1.0]]})
    params = ConverseParams(kappa=0.5, T=1.0, mu=1.0, gamma=1.0)
    grid = default_fit_grid(ZERO1, shells=10, points_per_shell=10)
    V = construct_converse_V(field, ZERO1, params, fit_grid=grid)
    consts = V.constants
    coeff = 1.0 - math.exp(-1.0)
    assert consts.a <= coeff <= consts.b
    assert consts.c <= 2.0 * coeff
    assert consts.M >= coeff
    assert check_sandwich(V, ZERO1, consts.a, consts.b, grid).ok
    assert check_hessian_bound(V, consts.M, grid).ok
    phi = make_comparator("power", {"k": consts.c, "p": 2.0})
    assert check_decay(V, field, phi, ZERO1, grid).ok
    assert check_gradient_linear_bound(V, ZERO1, 2.0 * consts.M, grid).ok


def test_converse_auto_params_from_flow_estimate():
    field = make_field("linear", {"A": [[-1.0]]})
    V = construct_converse_V(field)
    used = V.converse_params
    assert 0.0 < used.kappa < used.gamma
    assert used.T >= math.log(used.mu) / (used.gamma - used.kappa)
    # still close to the closed-form quadratic shape
    ratio = V.value([2.0]) / V.value([1.0])
    assert_allclose(ratio, 4.0, rtol=1e-6)


def test_converse_refuses_field_without_rate():
    from salyap.ode import NoDecayError
    field = make_field("gladyshev_passive")
    with pytest.raises(NoDecayError, match="no exponential decay detected"):
        construct_converse_V(field)


# ---------------------------------------------------------------------------
# matrix equation

def test_matrix_equation_scalar_oracle():
    P = solve_lyapunov_matrix_equation([[-0.1]], [[1.0]])
    assert_allclose(P, [[5.0]], rtol=1e-12)


def test_matrix_equation_identity_oracle():
    P = solve_lyapunov_matrix_equation(-np.eye(2), np.eye(2))
    assert_allclose(P, 0.5 * np.eye(2), rtol=1e-12)


def test_matrix_equation_value_eval_residual():
    A = np.array([[0.5, 0.5], [0.5, 0.5]])
    B = 0.9 * A - np.eye(2)
    Q = np.eye(2)
    P = solve_lyapunov_matrix_equation(B, Q)
    assert_allclose(P, P.T, atol=1e-14)
    assert np.all(np.linalg.eigvalsh(P) > 0.0)
    residual = np.linalg.norm(P @ B + B.T @ P + Q, ord="fro")
    assert residual <= 1e-8 * np.linalg.norm(Q, ord="fro")


def test_matrix_equation_quadratic_decay_rate():
    # with V = u' P u the decay rate is at least lambda_min(Q)
    A = np.array([[0.5, 0.5], [0.5, 0.5]])
    B = 0.9 * A - np.eye(2)
    Q = np.eye(2)
    P = solve_lyapunov_matrix_equation(B, Q)
    field = make_field("value_eval", {"A": A.tolist(), "gamma": 0.9, "r": [1.0, 2.0]})
    V = make_lyapunov("quadratic", {"P": P.tolist()}, 2, field.equilibrium)
    pts = field.equilibrium + np.random.default_rng(29).normal(size=(30, 2)) * 5.0
    vd = vdot_batch(V, field, pts)
    r2 = ((pts - field.equilibrium) ** 2).sum(axis=1)
    assert np.all(vd <= -r2 * (1.0 - 1e-9))


def test_matrix_equation_rejects_non_hurwitz():
    with pytest.raises(ValueError, match="not Hurwitz"):
        solve_lyapunov_matrix_equation(np.zeros((2, 2)), np.eye(2))
    with pytest.raises(ValueError, match="not Hurwitz"):
        solve_lyapunov_matrix_equation([[1.0]], [[1.0]])


def test_matrix_equation_validates_Q():
    with pytest.raises(ValueError, match="positive definite"):
        solve_lyapunov_matrix_equation(-np.eye(2), np.diag([1.0, -1.0]))
    with pytest.raises(ValueError, match="symmetric"):
        solve_lyapunov_matrix_equation(-np.eye(2), [[1.0, 0.5], [0.0, 1.0]])


# ---------------------------------------------------------------------------
# envelope fitting and report plumbing

def test_fit_envelope_constants_quadratic_tight():
    field = make_field("linear", {"A": [[-1.0]]})
    V = make_lyapunov("quadratic", None, 1, ZERO1)
    consts = fit_envelope_constants(V, field, ZERO1)
    assert consts.a <= 1.0 <= consts.b
    assert_allclose(consts.a, 1.0, rtol=2e-3)
    assert_allclose(consts.b, 1.0, rtol=2e-3)
    assert_allclose(consts.c, 2.0, rtol=2e-3)
    assert_allclose(consts.M, 1.0, rtol=2e-3)


def test_fit_envelope_rejects_sign_indefinite_candidate():
    field = make_field("linear", {"A": [[-1.0]]})
    down = LyapunovFunction(dim=1, fn=lambda th: -((th ** 2).sum(axis=1)),
                            vectorized=True)
    with pytest.raises(RuntimeError, match="not positive"):
        fit_envelope_constants(down, field, ZERO1)


def test_check_report_csv(tmp_path):
    V = make_lyapunov("quadratic", None, 1, ZERO1)
    rep = check_sandwich(V, ZERO1, 1.0, 1.0, scalar_grid())
    out = tmp_path / "checks.csv"
    write_reports_csv([rep], out)
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "condition_id,ok,worst_margin,samples,skipped,worst_point"
    assert lines[1].startswith("sandwich,True,")
