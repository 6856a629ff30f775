from math import sqrt

import numpy as np
from pytest import approx, mark, raises

from lib.commons import (
    DivergenceError,
    HypothesisViolation,
    InputError,
    SourceConditionUnavailable,
)
from lib.contraction import (
    asymptotic_q,
    contraction_factor,
    contraction_radius,
    fixed_point_solve,
    make_shifted_problem,
    remainder,
    self_map_bound,
    shifted_fixed_point_solve,
    source_condition_solve,
    t_map,
)
from lib.flow import FlowConfig, integrate_dsm
from lib.operators import BoundEstimates, RegParams
from lib.problems import ProblemSpec, linear_op, load_problem
from lib.space import norm
from tests import identity_op, make_op

LAM = np.array([1.0, 0.5])
Y = np.array([1.0, 1.0])


def diagonal():
    return load_problem(ProblemSpec('linear-diag'))


def manufactured(**params):
    return load_problem(ProblemSpec('manufactured', 4, params, seed=3))


def test_radius_example():
    r, rho = contraction_radius(RegParams(0.1), 1.0, 0.1)
    assert rho == approx(0.2, rel=1e-12)
    assert r == approx(0.1 * (1 - sqrt(0.8)), rel=1e-12)


def test_radius_with_general_k():
    reg = RegParams(0.01, k=0.5, c0=2.0)
    r, rho = contraction_radius(reg, 3.0, 0.01)
    assert rho == approx(2 * 2.0 * 3.0 * 0.01 * 0.01**0.5, rel=1e-12)
    expected = 0.01**0.5 / (2.0 * 3.0) * (1 - sqrt(1 - rho))
    assert r == approx(expected, rel=1e-10)


def test_radius_of_zero_source():
    assert contraction_radius(RegParams(0.3), 5.0, 0.0) == (0.0, 0.0)


def test_radius_limit_without_curvature():
    r, rho = contraction_radius(RegParams(0.1), 0.0, 0.7)
    assert rho == 0.0
    assert r == approx(0.07, rel=1e-12)


@mark.parametrize('eps', [0.5, 0.1, 1e-4])
def test_radius_rejects_rho_above_one(eps):
    with raises(HypothesisViolation) as e:
        contraction_radius(RegParams(eps), 1.0, 0.6)
    assert e.value.condition == 'rho<1'
    assert e.value.value == approx(1.2)


def test_radius_rejects_negative_input():
    with raises(InputError):
        contraction_radius(RegParams(0.1), -1.0, 0.1)


def test_factor_examples():
    reg = RegParams(0.1)
    assert contraction_factor(reg, 1.0, 0.0, 0.01) == approx(0.1, rel=1e-12)
    assert contraction_factor(reg, 1.0, 6.0, 0.1) == approx(1.1, rel=1e-12)
    assert contraction_factor(reg, 1.0, 6.0, 0.0) == 0.0


def test_self_map_bound_is_tight_at_the_radius():
    reg = RegParams(0.05)
    r, _ = contraction_radius(reg, 2.0, 0.1)
    assert self_map_bound(reg, 2.0, 0.1, r) == approx(r, rel=1e-12)


def test_asymptotic_q():
    assert asymptotic_q(0.25) == 0.75


def test_radius_shrinks_with_eps():
    radii = [
        contraction_radius(RegParams(eps), 1.0, 0.1)[0]
        for eps in (1e-1, 1e-2, 1e-3)
    ]
    assert radii[0] > radii[1] > radii[2]


def test_remainder_vanishes_for_linear_problems():
    assert np.allclose(remainder(diagonal(), Y, [0.3, -0.2]), 0.0, atol=1e-9)


def test_remainder_of_square():
    F = make_op(lambda u: u**2, 1, jac=lambda u: np.diag(2 * u))
    assert remainder(F, [1.0], [0.1]) == approx([0.01], rel=1e-9)


def test_remainder_at_zero_is_exactly_zero():
    F = manufactured()
    assert not remainder(F, F.known_solution, np.zeros(4)).any()


def test_source_condition_of_identity():
    psi, psi_norm = source_condition_solve(identity_op(2), [0.05, 0.0])
    assert psi == approx([0.05, 0.0])
    assert psi_norm == approx(0.05)


def test_source_condition_of_diagonal():
    psi, _ = source_condition_solve(diagonal(), Y)
    assert psi == approx([1.0, 2.0], rel=1e-14)


def test_source_condition_unavailable_for_singular_operator():
    F = linear_op(np.diag([1.0, 0.0]), [1.0, 0.0], 'singular')
    with raises(SourceConditionUnavailable):
        source_condition_solve(F, [1.0, 1.0])


def test_t_map_is_constant_for_linear_problems():
    F = diagonal()
    psi = np.array([1.0, 2.0])
    reg = RegParams(0.1)
    expected = -0.1 * LAM * psi / (LAM + 0.1)
    for z in ([0.0, 0.0], [0.3, -0.1], [5.0, 5.0]):
        assert t_map(F, Y, psi, reg, z) == approx(expected, rel=1e-9)


def test_t_map_at_zero_with_zero_source():
    F = load_problem(ProblemSpec('cubic', 2))
    zero = [0.0, 0.0]
    assert not t_map(F, zero, zero, RegParams(0.1), zero).any()


def test_fixed_point_of_diagonal_problem():
    F = diagonal()
    psi, _ = source_condition_solve(F, Y)
    diag = fixed_point_solve(F, Y, psi, RegParams(0.1))
    z_star = -0.1 * LAM * psi / (LAM + 0.1)
    assert diag.converged
    assert diag.iterations == 2
    assert diag.z_star == approx(z_star, rel=1e-12)
    assert diag.v_eps == approx(Y * LAM / (LAM + 0.1), rel=1e-12)
    assert diag.error <= diag.r
    assert diag.bounds_source == 'analytic'


def test_fixed_point_at_exact_root():
    F = load_problem(ProblemSpec('cubic', 3))
    diag = fixed_point_solve(F, np.zeros(3), np.zeros(3), RegParams(0.1))
    assert diag.iterations == 1
    assert diag.converged
    assert not diag.z_star.any()


@mark.parametrize('eps', [1e-1, 1e-2, 1e-3])
def test_manufactured_contraction_is_certified(eps):
    F = manufactured()
    y, psi = F.known_solution, F.known_source
    reg = RegParams(eps)
    diag = fixed_point_solve(F, y, psi, reg, strict=True)
    assert diag.converged
    assert diag.certified
    assert diag.rho < 1
    assert diag.eta < 1
    if diag.observed_ratio is not None:
        assert diag.observed_ratio <= diag.eta + 0.05
    assert diag.residual <= 10 * diag.tolerance * (1 + F.analytic_bounds.M1)


def test_fixed_point_matches_flow_limit():
    F = manufactured()
    y = F.known_solution
    reg = RegParams(0.1)
    diag = fixed_point_solve(F, y, F.known_source, reg, tol=1e-12)
    trace = integrate_dsm(F, y, FlowConfig(reg, target_residual=1e-8))
    assert norm(diag.v_eps - trace.w_inf) <= 10 * 1e-8


def test_source_recovered_from_manufactured_problem():
    F = manufactured()
    psi, psi_norm = source_condition_solve(F, F.known_solution)
    assert psi == approx(F.known_source, rel=1e-8, abs=1e-12)
    assert psi_norm == approx(0.05, rel=1e-8)


def test_strict_mode_rejects_large_source():
    F = manufactured(psi_norm=0.6)
    with raises(HypothesisViolation) as e:
        fixed_point_solve(
            F, F.known_solution, F.known_source, RegParams(0.1), strict=True
        )
    assert e.value.condition == 'rho<1'


def test_non_strict_mode_reports_infinite_radius():
    F = manufactured(psi_norm=0.6)
    diag = fixed_point_solve(
        F, F.known_solution, F.known_source, RegParams(0.1)
    )
    assert diag.rho >= 1
    assert diag.r == float('inf')
    assert not diag.certified


def steep_bounds():
    # rho < 1 but eta >= 1 for the diagonal problem at eps = 0.1
    return BoundEstimates(1.0, 0.1, 100.0, source='analytic')


def test_strict_mode_rejects_eta_above_one():
    F = diagonal()
    psi, _ = source_condition_solve(F, Y)
    with raises(HypothesisViolation) as e:
        fixed_point_solve(
            F, Y, psi, RegParams(0.1), strict=True, bounds=steep_bounds()
        )
    assert e.value.condition == 'eta<1'
    assert e.value.value >= 1


def test_non_strict_mode_runs_without_certificate():
    F = diagonal()
    psi, _ = source_condition_solve(F, Y)
    diag = fixed_point_solve(F, Y, psi, RegParams(0.1), bounds=steep_bounds())
    assert diag.eta >= 1
    assert diag.converged
    assert not diag.certified


def test_estimated_bounds_are_flagged():
    F = make_op(
        lambda u: u + u**3, 1, jac=lambda u: np.diag(1 + 3 * u**2), y=[0.0]
    )
    diag = fixed_point_solve(F, [0.0], [0.0], RegParams(0.1))
    assert diag.bounds_source == 'estimated, non-certified'
    assert not diag.certified


def test_divergence_is_detected():
    # the Jacobian is wrong, so T(z) = -30 z
    F = make_op(lambda u: 3 * u, 1, jac=lambda u: np.zeros((1, 1)))
    bounds = BoundEstimates(3.0, 0.0, 0.0, source='analytic')
    with raises(DivergenceError) as e:
        fixed_point_solve(
            F, [0.0], [0.0], RegParams(0.1), bounds=bounds, z0=[1e-3]
        )
    assert len(e.value.history) == 6
    assert e.value.history[-1] > 10 * e.value.history[0]


def test_dimension_checks():
    with raises(InputError):
        fixed_point_solve(diagonal(), [1.0], [1.0, 2.0], RegParams(0.1))


@mark.parametrize('eps', [1e-1, 1e-3, 1e-5])
def test_shift_by_y_keeps_y(eps):
    F = manufactured()
    y = F.known_solution
    S = make_shifted_problem(F, y)
    assert not S.psi.any()
    diag = shifted_fixed_point_solve(S, RegParams(eps))
    assert np.allclose(diag.v_eps, y, rtol=0, atol=1e-10)


def test_shift_by_zero_is_the_plain_problem():
    F = manufactured()
    y = F.known_solution
    reg = RegParams(0.01)
    plain = fixed_point_solve(F, y, source_condition_solve(F, y)[0], reg)
    S = make_shifted_problem(F, np.zeros(4))
    shifted = shifted_fixed_point_solve(S, reg)
    assert np.allclose(shifted.v_eps, plain.v_eps, rtol=0, atol=1e-12)


def test_shifted_diagonal_closed_form():
    F = diagonal()
    q = np.array([0.5, -1.0])
    eps = 0.1
    S = make_shifted_problem(F, q)
    diag = shifted_fixed_point_solve(S, RegParams(eps))
    expected = (LAM * Y + eps * q) / (LAM + eps)
    assert np.allclose(diag.v_eps, expected, rtol=0, atol=1e-10)
    assert diag.residual <= 1e-12


def test_shifted_problem_needs_y():
    F = make_op(lambda u: u, 2, jac=lambda u: np.eye(2))
    with raises(InputError):
        make_shifted_problem(F, [0.0, 0.0])
