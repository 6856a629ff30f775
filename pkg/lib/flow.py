"""The DSM flow  w' = -(A(w) + eps*I)^-1 (F(w) + eps*w),  w(0) = w0.

Along the flow the residual g(t) = F(w(t)) + eps*w(t) obeys g' = -g, so
g(t) = g(0) e^-t exactly, for linear and nonlinear F alike. integrate_dsm
runs an embedded Runge-Kutta 5(4) pair up to the horizon where that decay
law predicts ||g|| = delta; decay_report checks the computed trajectory
against the decay law and the a-priori bounds that follow from it.
"""

from dataclasses import dataclass, field
from math import log

import numpy as np
from numpy.typing import ArrayLike

from dsm_config import ABS_TOL, DELTA, MAX_STEPS, MIN_STEP, REL_TOL, T_MAX
from lib import logger
from lib.commons import (
    BudgetError,
    FlowFailure,
    InputError,
    SingularityError,
    StiffnessError,
)
from lib.operators import (
    ProblemOp,
    RegParams,
    jacobian,
    regularized_residual,
    resolvent_solve,
)
from lib.space import NormKind, Vec, as_vec, dual_pair, norm, random_unit

# Dormand-Prince 5(4) tableau
C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
# 5th order weights minus embedded 4th order weights
E = (
    71 / 57600,
    0.0,
    -71 / 16695,
    71 / 1920,
    -17253 / 339200,
    22 / 525,
    -1 / 40,
)

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 5.0
FIRST_STEP = 0.05
ROUNDOFF = 64 * np.finfo(float).eps
TINY = np.finfo(float).tiny
MAX_EXTENSIONS = 20
EXTENSION_MARGIN = 0.05


@dataclass(frozen=True)
class FlowConfig:
    reg: RegParams
    t_max: float = T_MAX
    target_residual: float = DELTA
    rel_tol: float = REL_TOL
    abs_tol: float = ABS_TOL
    max_steps: int = MAX_STEPS

    def __post_init__(self):
        if not self.target_residual > 0:
            raise InputError('target residual delta must be positive')
        if not self.t_max >= 1:
            raise InputError('t_max must be at least 1')
        for name in ('rel_tol', 'abs_tol'):
            if not 0 < getattr(self, name) < 1e-2:
                raise InputError(f'{name} must lie in (0, 1e-2)')
        if self.max_steps < 1:
            raise InputError('max_steps must be positive')

    def to_dict(self) -> dict:
        return {
            'reg': self.reg.to_dict(),
            't_max': self.t_max,
            'target_residual': self.target_residual,
            'rel_tol': self.rel_tol,
            'abs_tol': self.abs_tol,
            'max_steps': self.max_steps,
        }


@dataclass
class FlowTrace:
    """Accepted steps of one flow integration.

    residual_norms[i] = ||F(w(t_i)) + eps*w(t_i)|| and velocity_norms[i] =
    ||w'(t_i)||, both in the problem's norm.
    """

    times: list[float]
    states: list[Vec]
    residual_norms: list[float]
    velocity_norms: list[float]
    F0: float
    w0: Vec
    w_inf: Vec
    eps: float
    horizon: float
    reached_target: bool
    accepted_steps: int = 0
    rejected_steps: int = 0
    norm_kind: NormKind = NormKind.L2

    @property
    def final_residual(self) -> float:
        return self.residual_norms[-1]

    @property
    def final_time(self) -> float:
        return self.times[-1]


class _DSMField:
    """Right-hand side of the flow; also returns the residual and Jacobian."""

    def __init__(self, F: ProblemOp, eps: float):
        self.F = F
        self.eps = eps

    def __call__(
        self, w: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        g = regularized_residual(self.F, w, self.eps)
        A_w = jacobian(self.F, w)
        return -resolvent_solve(A_w, self.eps, g), g, A_w


def _dopri_step(rhs: _DSMField, w: np.ndarray, k1: np.ndarray, h: float):
    """One Dormand-Prince step from w with k1 = w'(w).

    Returns the 5th order state, the local error estimate, and the field
    sample at the new state (first-same-as-last).
    """
    ks = [k1]
    for i in range(1, 6):
        stage = w + h * sum(a * k for a, k in zip(A[i], ks) if a)
        ks.append(rhs(stage)[0])
    w_new = w + h * sum(b * k for b, k in zip(A[6], ks) if b)
    sample = rhs(w_new)
    ks.append(sample[0])
    err = h * sum(e * k for e, k in zip(E, ks) if e)
    return w_new, err, sample


def integrate_dsm(
    F: ProblemOp, w0: ArrayLike, cfg: FlowConfig
) -> FlowTrace:
    """Integrate the DSM flow from w0 until ||F(w) + eps*w|| <= delta.

    The horizon t* = ln(F0/delta) comes from the exact decay law; if
    integration error leaves the residual slightly above delta there, the
    horizon is extended past the remaining ln(r/delta) by a fixed margin
    until it is not (never past t_max).

    Steps are accepted when the local error passes both the state test
    against abs_tol + rel_tol*||w|| and a residual test against
    rel_tol*||F(w) + eps*w||, so the decay identity is resolved in
    relative terms all the way down to delta.
    """
    w = np.array(as_vec(w0))
    if w.size != F.dim:
        raise InputError(f'w0 has dimension {w.size}, expected {F.dim}')
    eps = cfg.reg.eps
    kind = F.norm_kind
    delta = cfg.target_residual
    rhs = _DSMField(F, eps)
    try:
        wdot, g, A_w = rhs(w)
    except SingularityError as e:
        raise FlowFailure(f'A_eps singular at t=0: {e}', t=0.0) from e

    F0 = norm(g, kind)
    times, states = [0.0], [w]
    residuals, velocities = [F0], [norm(wdot, kind)]
    if F0 <= delta:
        logger.info(
            '%s: initial residual %.3e already below delta', F.name, F0
        )
        return FlowTrace(
            times, states, residuals, velocities, F0, w, w, eps, 0.0, True,
            norm_kind=kind,
        )

    t_star = log(F0 / delta)
    horizon = min(t_star, cfg.t_max)
    logger.info(
        '%s: integrating DSM flow, eps=%g, F0=%.4g, horizon t*=%.4f',
        F.name, eps, F0, t_star,
    )
    t, h = 0.0, float(min(FIRST_STEP, horizon))
    accepted = rejected = extensions = 0
    while True:
        while t < horizon:
            if accepted + rejected >= cfg.max_steps:
                raise BudgetError(
                    f'step budget {cfg.max_steps} exhausted at t={t:.6g}',
                    t=t,
                    payload=w,
                )
            last = t + 1.01 * h >= horizon
            if last:
                h = horizon - t
            if h < MIN_STEP:
                raise StiffnessError(
                    f'step size underflow at t={t:.6g}', t=t, payload=w
                )
            try:
                w_new, err, sample = _dopri_step(rhs, w, wdot, h)
            except SingularityError as e:
                raise FlowFailure(
                    f'A_eps singular near t={t:.6g}: {e}', t=t
                ) from e

            err_inf = float(np.abs(err).max())
            scale_w = cfg.abs_tol + cfg.rel_tol * max(
                np.abs(w).max(), np.abs(w_new).max()
            )
            err_g = float(np.abs(A_w @ err + eps * err).max())
            floor = ROUNDOFF * (
                np.abs(g - eps * w).max() + eps * np.abs(w).max()
            )
            scale_g = float(max(cfg.rel_tol * np.abs(g).max() + floor, TINY))
            ratio = max(err_inf / scale_w, err_g / scale_g)

            if ratio <= 1.0:
                t = float(horizon if last else t + h)
                w = w_new
                wdot, g, A_w = sample
                accepted += 1
                times.append(t)
                states.append(w)
                residuals.append(norm(g, kind))
                velocities.append(norm(wdot, kind))
                factor = MAX_FACTOR if ratio == 0 else SAFETY * ratio**-0.2
            else:
                rejected += 1
                factor = min(1.0, SAFETY * ratio**-0.2)
                logger.debug(
                    'rejected step h=%.3e at t=%.6g (ratio %.3g)', h, t, ratio
                )
            h = float(h * min(MAX_FACTOR, max(MIN_FACTOR, factor)))

        if (
            residuals[-1] <= delta
            or t >= cfg.t_max
            or extensions >= MAX_EXTENSIONS
        ):
            break
        extensions += 1
        remaining = log(residuals[-1] / delta) + EXTENSION_MARGIN
        horizon = min(t + remaining, cfg.t_max)

    reached = residuals[-1] <= delta
    if not reached:
        logger.warning(
            '%s: stopped at t=%.4g with residual %.3e > delta=%.1e',
            F.name, t, residuals[-1], delta,
        )
    logger.info(
        '%s: flow done at t=%.4f, residual %.3e, '
        '%d accepted / %d rejected steps',
        F.name, t, residuals[-1], accepted, rejected,
    )
    return FlowTrace(
        times, states, residuals, velocities, F0, states[0], w, eps, t_star,
        reached, accepted, rejected, kind,
    )


@dataclass
class DecayReport:
    """Checks of a flow trace against the decay law and the a-priori bounds.

    norm_decay: max |r_i / (F0 e^-t_i) - 1|.
    functional_decay: max |(h, g_i) - (h, g_0) e^-t_i| / F0 over sampled
        unit functionals h.
    tail_violations: fraction of points with
        ||w_i - w_inf|| > c0 eps^-k F0 e^-t_i.
    drift_ok: ||w_i - w0|| <= c0 eps^-k F0 at every point.
    velocity_violations: fraction of points with
        ||w'_i|| > c0 eps^-k F0 e^-t_i.
    """

    zero_initial_residual: bool
    norm_decay: float
    functional_decay: float
    tail_violations: float
    drift_ok: bool
    velocity_violations: float
    terminal_residual: float
    bound: float
    h_samples: int
    seed: int
    notes: list[str] = field(default_factory=list)

    def passed(self, tol: float = 1e-6) -> bool:
        return (
            self.norm_decay <= tol
            and self.functional_decay <= tol
            and self.tail_violations == 0
            and self.drift_ok
            and self.velocity_violations == 0
        )

    def to_dict(self) -> dict:
        return {
            'zero_initial_residual': self.zero_initial_residual,
            'norm_decay': self.norm_decay,
            'functional_decay': self.functional_decay,
            'tail_violations': self.tail_violations,
            'drift_ok': self.drift_ok,
            'velocity_violations': self.velocity_violations,
            'terminal_residual': self.terminal_residual,
            'bound': self.bound,
            'h_samples': self.h_samples,
            'seed': self.seed,
            'notes': self.notes,
        }


def decay_report(
    F: ProblemOp,
    trace: FlowTrace,
    reg: RegParams,
    h_samples: int = 20,
    seed: int = 0,
) -> DecayReport:
    if not trace.times:
        raise InputError('empty trace')
    kind = trace.norm_kind
    F0 = trace.F0
    bound = reg.resolvent_bound * F0
    if F0 == 0.0:
        return DecayReport(
            True, 0.0, 0.0, 0.0, True, 0.0, trace.final_residual, 0.0,
            h_samples, seed, ['zero initial residual: checks are vacuous'],
        )

    t = np.asarray(trace.times)
    decay = np.exp(-t)
    r = np.asarray(trace.residual_norms)
    norm_decay = float(np.abs(r / (F0 * decay) - 1).max())

    rng = np.random.default_rng(seed)
    g = [regularized_residual(F, w, trace.eps) for w in trace.states]
    functional = 0.0
    for _ in range(h_samples):
        h = random_unit(rng, F.dim, kind.dual)
        values = np.array([dual_pair(h, gi) for gi in g])
        gap = float(np.abs(values - values[0] * decay).max())
        functional = max(functional, gap)
    functional /= F0

    envelope = bound * decay
    tail = np.array([norm(w - trace.w_inf, kind) for w in trace.states])
    drift = np.array([norm(w - trace.w0, kind) for w in trace.states])
    velocity = np.asarray(trace.velocity_norms)
    notes = []
    if not trace.reached_target:
        notes.append('target residual not reached before t_max')
    report = DecayReport(
        False,
        norm_decay,
        functional,
        float(np.mean(tail > envelope)),
        bool(np.all(drift <= bound)),
        float(np.mean(velocity > envelope)),
        trace.final_residual,
        bound,
        h_samples,
        seed,
        notes,
    )
    logger.info(
        'decay report: norm %.2e, functional %.2e, tail %.2f, drift %s',
        report.norm_decay, report.functional_decay, report.tail_violations,
        report.drift_ok,
    )
    return report


@dataclass
class SensitivityReport:
    """Terminal states of flows started from different w0."""

    starts: list[Vec]
    terminals: list[Vec]
    residuals: list[float]
    spread: float

    def to_dict(self) -> dict:
        return {
            'starts': [s.tolist() for s in self.starts],
            'terminals': [w.tolist() for w in self.terminals],
            'residuals': self.residuals,
            'spread': self.spread,
        }


def w0_sensitivity(
    F: ProblemOp, starts: list[ArrayLike], cfg: FlowConfig
) -> SensitivityReport:
    """Integrate from each start and report the largest distance between
    terminal states. Different limits are legitimate: F(u) + eps*u = 0 may
    have several solutions.
    """
    traces = [integrate_dsm(F, w0, cfg) for w0 in starts]
    terminals = [tr.w_inf for tr in traces]
    spread = max(
        (norm(a - b, F.norm_kind) for a in terminals for b in terminals),
        default=0.0,
    )
    return SensitivityReport(
        [tr.w0 for tr in traces],
        terminals,
        [tr.final_residual for tr in traces],
        spread,
    )