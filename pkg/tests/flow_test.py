from math import exp, log

import numpy as np
from pytest import approx, mark, raises

from lib.commons import BudgetError, FlowFailure, InputError
from lib.flow import (
    FlowConfig,
    FlowTrace,
    decay_report,
    integrate_dsm,
    w0_sensitivity,
)
from dsm_config import RESOLVENT_SCHEDULE
from lib.operators import RegParams, estimate_resolvent_growth
from lib.problems import ProblemSpec, load_problem
from lib.space import norm
from tests import identity_op, make_op


def config(eps=0.1, **kwargs) -> FlowConfig:
    return FlowConfig(RegParams(eps), **kwargs)


def test_cubic_residual_decays_exactly():
    F = load_problem(ProblemSpec('cubic', 1))
    trace = integrate_dsm(F, [1.0], config(0.1, target_residual=1e-6))
    assert trace.F0 == approx(2.1, rel=1e-15)
    assert trace.horizon == approx(log(2.1e6))
    for t, r in zip(trace.times, trace.residual_norms):
        assert r == approx(2.1 * exp(-t), rel=1e-6)
    assert trace.final_residual <= 1e-6
    assert trace.reached_target


def test_identity_flow_is_exponential():
    # F(u) = u gives w' = -w
    w0 = np.array([1.0, -2.0])
    trace = integrate_dsm(identity_op(2), w0, config(0.5))
    for t, w in zip(trace.times, trace.states):
        assert np.allclose(w, w0 * exp(-t), rtol=1e-6, atol=1e-12)


@mark.parametrize(
    'name', ['linear-diag', 'linear-hilbert', 'cubic', 'manufactured']
)
@mark.parametrize('eps', [1e-1, 1e-2, 1e-3])
def test_decay_identities_hold(name, eps):
    F = load_problem(ProblemSpec(name, 4 if name != 'linear-diag' else None))
    w0 = np.full(F.dim, 0.5)
    reg = RegParams(eps)
    trace = integrate_dsm(F, w0, FlowConfig(reg))
    report = decay_report(F, trace, reg, h_samples=20, seed=1)
    assert report.norm_decay <= 1e-6
    assert report.functional_decay <= 1e-6
    assert trace.final_residual <= 1e-8


@mark.parametrize('name', ['linear-diag', 'manufactured'])
def test_a_priori_bounds_hold(name):
    F = load_problem(ProblemSpec(name))
    reg = RegParams(0.1)
    trace = integrate_dsm(F, F.center, FlowConfig(reg))
    report = decay_report(F, trace, reg)
    assert report.tail_violations == 0
    assert report.velocity_violations == 0
    assert report.drift_ok
    assert report.passed()


def test_zero_initial_residual():
    trace = integrate_dsm(identity_op(2), [0.0, 0.0], config())
    assert trace.times == [0.0]
    assert trace.F0 == 0.0
    report = decay_report(identity_op(2), trace, RegParams(0.1))
    assert report.zero_initial_residual
    assert report.passed()


def test_start_below_target_returns_single_point():
    trace = integrate_dsm(identity_op(1), [1e-12], config())
    assert len(trace.times) == 1
    assert trace.reached_target
    assert np.array_equal(trace.w_inf, trace.w0)


def test_empty_trace_is_rejected():
    empty = FlowTrace(
        [], [], [], [], 1.0, np.zeros(1), np.zeros(1), 0.1, 0.0, False
    )
    with raises(InputError):
        decay_report(identity_op(1), empty, RegParams(0.1))


def test_step_budget():
    F = load_problem(ProblemSpec('linear-diag'))
    with raises(BudgetError) as e:
        integrate_dsm(F, F.center, config(max_steps=3))
    assert e.value.payload is not None


def test_singular_regularized_jacobian():
    # A + eps*I = 0
    F = make_op(lambda u: -0.5 * u, 2, jac=lambda u: -0.5 * np.eye(2))
    with raises(FlowFailure) as e:
        integrate_dsm(F, [1.0, 1.0], config(0.5))
    assert e.value.t == 0.0


@mark.parametrize(
    'kwargs',
    [
        {'target_residual': 0.0},
        {'t_max': 0.5},
        {'rel_tol': 0.0},
        {'abs_tol': 0.1},
        {'max_steps': 0},
    ],
)
def test_flow_config_validation(kwargs):
    with raises(InputError):
        config(**kwargs)


def test_wrong_initial_dimension():
    with raises(InputError):
        integrate_dsm(identity_op(2), [1.0], config())


def test_t_max_cuts_the_horizon():
    F = load_problem(ProblemSpec('linear-diag'))
    trace = integrate_dsm(F, F.center, config(t_max=2.0))
    assert trace.final_time == 2.0
    assert not trace.reached_target
    report = decay_report(F, trace, RegParams(0.1))
    assert report.notes


def test_tighter_tolerances_do_not_worsen_decay():
    F = load_problem(ProblemSpec('manufactured'))
    loose = integrate_dsm(F, F.center, config(0.01, rel_tol=1e-8))
    tight = integrate_dsm(F, F.center, config(0.01, rel_tol=5e-9))
    reg = RegParams(0.01)
    dl = decay_report(F, loose, reg).norm_decay
    dt = decay_report(F, tight, reg).norm_decay
    assert dt <= 2 * dl + 1e-12


def test_velocity_norms_are_recorded():
    trace = integrate_dsm(identity_op(1), [2.0], config())
    # ||w'|| = ||w|| for F(u) = u
    for w, v in zip(trace.states, trace.velocity_norms):
        assert v == approx(norm(w), rel=1e-12)


def test_w0_sensitivity():
    F = load_problem(ProblemSpec('cubic', 1))
    report = w0_sensitivity(F, [[1.0], [-1.0], [0.5]], config())
    assert len(report.terminals) == 3
    assert report.spread < 1e-7
    assert max(report.residuals) <= 1e-8


@mark.parametrize('lam', [[1.0, 0.5], [1.0, 0.0]])
def test_a_priori_bounds_with_fitted_constants(lam):
    F = load_problem(ProblemSpec('linear-diag', params={'lam': lam}))
    fit = estimate_resolvent_growth(F, F.center, RESOLVENT_SCHEDULE)
    eps = 1e-3
    reg = RegParams(eps, k=min(1.0, 1.05 * fit.k), c0=1.05 * fit.c0)
    trace = integrate_dsm(F, F.center, FlowConfig(reg))
    report = decay_report(F, trace, reg)
    assert report.tail_violations == 0
    assert report.drift_ok


def test_small_target_residual_is_reached():
    F = load_problem(ProblemSpec('manufactured'))
    trace = integrate_dsm(F, F.center, config(1e-5, target_residual=1e-12))
    assert trace.reached_target
    assert trace.final_residual <= 1e-12
    assert trace.final_time >= trace.horizon


def test_step_times_are_python_floats():
    F = load_problem(ProblemSpec('cubic', 1))
    trace = integrate_dsm(F, [1.0], config(0.1, target_residual=1e-6))
    assert all(type(t) is float for t in trace.times)
