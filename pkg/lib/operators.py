"""Operators F: R^n -> R^n, their Jacobians, the regularized residual
F(u) + eps*u, the resolvent solve with A + eps*I, and estimators for the
derivative bounds M_j(R) and the resolvent growth
||(A + eps*I)^-1|| <= c0 eps^-k.
"""

import threading
import warnings
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field, replace
from math import exp, sqrt

import numpy as np
from numpy.typing import ArrayLike
from scipy.linalg import LinAlgWarning, lu_factor, lu_solve

from dsm_config import EPS0
from lib import logger
from lib.commons import InputError, NumericError, SingularityError
from lib.space import (
    Matrix,
    NormKind,
    Vec,
    as_vec,
    induced_matrix_norm,
    norm,
    random_in_ball,
    random_unit,
)

FD_STEP = 1e-6
SECOND_DIFF_STEP = 1e-4
THIRD_DIFF_STEP = 1e-3
PIVOT_TOL = 1e-14
RESIDUAL_TOL = 1e-10
WELL_POSED_K = 0.01


@dataclass(frozen=True)
class BoundEstimates:
    """Sup-norms of F', F'', F''' over the ball B(u0, R).

    Estimated values are maxima over samples, hence lower bounds of the
    true suprema; `source` is 'analytic' for exact values of a built-in.
    """

    M1: float
    M2: float
    M3: float
    sample_count: int = 0
    seed: int | None = None
    source: str = 'estimated'

    @property
    def certified(self) -> bool:
        return self.source == 'analytic'

    def to_dict(self) -> dict:
        return {
            'M1': self.M1,
            'M2': self.M2,
            'M3': self.M3,
            'sample_count': self.sample_count,
            'seed': self.seed,
            'source': self.source,
        }


@dataclass(frozen=True, eq=False)
class ProblemOp:
    """An operator F on R^n with its domain ball B(center, ball_radius).

    `evaluate` must be deterministic. `jac` is the analytic Jacobian when
    known; otherwise central differences are used.
    """

    dim: int
    evaluate: Callable[[Vec], ArrayLike]
    center: Vec
    ball_radius: float
    norm_kind: NormKind = NormKind.L2
    jac: Callable[[Vec], ArrayLike] | None = None
    known_solution: Vec | None = None
    known_source: Vec | None = None
    name: str = 'custom'
    linear: bool = False
    analytic_bounds: BoundEstimates | None = None
    meta: dict = field(default_factory=dict)
    outside_warned: threading.Event = field(
        default_factory=threading.Event, init=False, repr=False
    )

    def __post_init__(self):
        if self.dim < 1:
            raise InputError(f'dimension must be positive, got {self.dim}')
        object.__setattr__(self, 'center', as_vec(self.center))
        if self.center.size != self.dim:
            raise InputError('center has the wrong dimension')
        if not self.ball_radius > 0:
            raise InputError('ball radius must be positive')
        for attr in ('known_solution', 'known_source'):
            if (value := getattr(self, attr)) is not None:
                value = as_vec(value)
                if value.size != self.dim:
                    raise InputError(f'{attr} has the wrong dimension')
                object.__setattr__(self, attr, value)

    def __call__(self, u: ArrayLike) -> Vec:
        return apply(self, u)


@dataclass(frozen=True)
class RegParams:
    """Regularization data: eps in (0, eps0), exponent k in (0, 1], c0 > 0."""

    eps: float
    eps0: float = EPS0
    k: float = 1.0
    c0: float = 1.0

    def __post_init__(self):
        if not 0 < self.eps < self.eps0:
            raise InputError(
                f'eps must lie in (0, {self.eps0}), got {self.eps}'
            )
        if not 0 < self.k <= 1:
            raise InputError(f'k must lie in (0, 1], got {self.k}')
        if not self.c0 > 0:
            raise InputError(f'c0 must be positive, got {self.c0}')

    def with_eps(self, eps: float) -> 'RegParams':
        return replace(self, eps=eps)

    @property
    def resolvent_bound(self) -> float:
        """c0 * eps^-k."""
        return self.c0 * self.eps**-self.k

    def to_dict(self) -> dict:
        return {'eps': self.eps, 'eps0': self.eps0, 'k': self.k, 'c0': self.c0}


def _dim_check(F: ProblemOp, u: np.ndarray):
    if u.shape != (F.dim,):
        raise InputError(
            f'expected a vector of dimension {F.dim}, got {u.shape}'
        )


def apply(F: ProblemOp, u: ArrayLike) -> Vec:
    """F(u), checked for shape and finiteness."""
    u = np.asarray(u, dtype=float)
    _dim_check(F, u)
    Fu = np.asarray(F.evaluate(u), dtype=float).reshape(-1)
    if Fu.shape != (F.dim,):
        raise NumericError(f'{F.name}: evaluator returned shape {Fu.shape}')
    if not np.all(np.isfinite(Fu)):
        bad = np.flatnonzero(~np.isfinite(Fu)).tolist()
        raise NumericError(
            f'{F.name}: non-finite values at coordinates {bad}', payload=bad
        )
    return Fu


def regularized_residual(F: ProblemOp, u: ArrayLike, eps: float) -> Vec:
    """F(u) + eps*u."""
    u = np.asarray(u, dtype=float)
    return apply(F, u) + eps * u


def _warn_outside_ball(F: ProblemOp, u: np.ndarray):
    if F.outside_warned.is_set():
        return
    if norm(u - F.center, F.norm_kind) > F.ball_radius:
        F.outside_warned.set()
        logger.warning(
            '%s: Jacobian requested outside B(u0, %g); '
            'derivative bounds may not apply',
            F.name,
            F.ball_radius,
        )


def finite_difference_jacobian(F: ProblemOp, u: ArrayLike) -> Matrix:
    """Central differences with step 1e-6*(1 + |u_j|) per coordinate."""
    u = np.asarray(u, dtype=float)
    _dim_check(F, u)
    J = np.empty((F.dim, F.dim))
    for j in range(F.dim):
        h = FD_STEP * (1 + abs(u[j]))
        up = u.copy()
        up[j] += h
        um = u.copy()
        um[j] -= h
        J[:, j] = (apply(F, up) - apply(F, um)) / (2 * h)
    if not np.all(np.isfinite(J)):
        raise NumericError(
            f'{F.name}: non-finite difference quotient', payload=u
        )
    return J


def jacobian(F: ProblemOp, u: ArrayLike) -> Matrix:
    """A(u) = F'(u).

    The analytic Jacobian if F has one, else central differences.
    """
    u = np.asarray(u, dtype=float)
    _dim_check(F, u)
    _warn_outside_ball(F, u)
    if F.jac is None:
        return finite_difference_jacobian(F, u)
    J = np.asarray(F.jac(u), dtype=float)
    if J.shape != (F.dim, F.dim):
        raise NumericError(f'{F.name}: Jacobian has shape {J.shape}')
    if not np.all(np.isfinite(J)):
        raise NumericError(f'{F.name}: non-finite Jacobian', payload=u)
    return J


@dataclass(frozen=True)
class JacobianCheck:
    max_rel_dev: float
    points: int
    passed: bool

    def to_dict(self) -> dict:
        return {
            'max_rel_dev': self.max_rel_dev,
            'points': self.points,
            'passed': self.passed,
        }


def jacobian_self_test(
    F: ProblemOp, points: int = 1, seed: int = 0, rtol: float = 1e-4
) -> JacobianCheck:
    """Compare the analytic Jacobian with central differences.

    The first point is u0, the rest are drawn uniformly from the ball.
    Deviations are measured relative to max(1, ||A||_F).
    """
    if F.jac is None:
        return JacobianCheck(0.0, 0, True)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for i in range(points):
        u = (
            F.center
            if i == 0
            else random_in_ball(rng, F.center, F.ball_radius, F.norm_kind)
        )
        Ja = jacobian(F, u)
        Jfd = finite_difference_jacobian(F, u)
        dev = np.linalg.norm(Ja - Jfd) / max(1.0, float(np.linalg.norm(Ja)))
        worst = max(worst, float(dev))
    return JacobianCheck(worst, points, worst <= rtol)


def check_known_solution(F: ProblemOp, tol: float = 1e-8) -> float | None:
    """||F(y)|| for the attached solution, None when there is none."""
    if F.known_solution is None:
        return None
    y = F.known_solution
    res = norm(apply(F, y), F.norm_kind)
    if res > tol * (1 + norm(y, F.norm_kind)):
        logger.warning(
            '%s: attached solution has ||F(y)|| = %.3e', F.name, res
        )
    return res


def solve_dense(
    M: ArrayLike, rhs: ArrayLike, eps: float | None = None
) -> np.ndarray:
    """Solve M x = rhs by LU with partial pivoting.

    rhs may hold several right-hand sides as columns. Raises SingularityError
    when a pivot falls below 1e-14 times the largest entry of M.
    """
    M = np.asarray(M, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise InputError(f'square matrix expected, got shape {M.shape}')
    if rhs.shape[0] != M.shape[0]:
        raise InputError(f'dimension mismatch: {M.shape} vs {rhs.shape}')
    if not (np.all(np.isfinite(M)) and np.all(np.isfinite(rhs))):
        raise InputError('non-finite entries in linear system')
    scale = float(np.abs(M).max())
    if scale == 0.0:
        raise SingularityError('zero matrix', eps=eps)
    with warnings.catch_warnings():
        warnings.simplefilter('ignore', LinAlgWarning)
        lu, piv = lu_factor(M, check_finite=False)
    smallest = float(np.abs(np.diag(lu)).min())
    if smallest < PIVOT_TOL * scale:
        raise SingularityError(
            f'singular to working precision '
            f'(pivot {smallest:.3e}, scale {scale:.3e})',
            eps=eps,
        )
    x = lu_solve((lu, piv), rhs, check_finite=False)
    residual = np.abs(M @ x - rhs).max()
    bound = RESIDUAL_TOL * (
        1 + np.abs(rhs).max() + np.abs(M).sum(axis=1).max() * np.abs(x).max()
    )
    if not residual <= bound:
        raise NumericError(
            f'linear solve residual {residual:.3e} exceeds {bound:.3e}',
            payload=x,
        )
    return x


def resolvent_solve(A: ArrayLike, eps: float, rhs: ArrayLike) -> Vec:
    """x with (A + eps*I) x = rhs."""
    A = np.asarray(A, dtype=float)
    if not eps > 0:
        raise InputError(f'eps must be positive, got {eps}')
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InputError(f'square matrix expected, got shape {A.shape}')
    return solve_dense(A + eps * np.eye(A.shape[0]), rhs, eps=eps)


def resolvent_inverse(A: ArrayLike, eps: float) -> Matrix:
    """(A + eps*I)^-1, solved column by column against the basis vectors."""
    A = np.asarray(A, dtype=float)
    return resolvent_solve(A, eps, np.eye(A.shape[0]))


def estimate_derivative_bounds(
    F: ProblemOp, samples: int, seed: int
) -> BoundEstimates:
    """Sampled lower bounds of M1, M2, M3 over B(u0, R).

    M1 is the largest induced norm of the Jacobian at the sample points;
    M2 and M3 come from second and third central differences of
    t -> F(u + t d) along random unit directions d. Samples are drawn in a
    fixed order, so the first n samples of a larger run are the n samples
    of a smaller one with the same seed.
    """
    if samples < 1:
        raise InputError('at least one sample is needed')
    kind = F.norm_kind
    rng = np.random.default_rng(seed)
    h2, h3 = SECOND_DIFF_STEP, THIRD_DIFF_STEP
    M1 = M2 = M3 = 0.0
    for _ in range(samples):
        u = random_in_ball(rng, F.center, F.ball_radius, kind)
        d = random_unit(rng, F.dim, kind)
        m1 = induced_matrix_norm(jacobian(F, u), kind)
        Fu = apply(F, u)
        second = (apply(F, u + h2 * d) - 2 * Fu + apply(F, u - h2 * d)) / h2**2
        third = (
            apply(F, u + 2 * h3 * d)
            - 2 * apply(F, u + h3 * d)
            + 2 * apply(F, u - h3 * d)
            - apply(F, u - 2 * h3 * d)
        ) / (2 * h3**3)
        m2 = float(np.linalg.norm(second, kind.ord))
        m3 = float(np.linalg.norm(third, kind.ord))
        if not np.isfinite([m1, m2, m3]).all():
            raise NumericError(
                f'{F.name}: non-finite derivative estimate at {u}', payload=u
            )
        M1, M2, M3 = max(M1, m1), max(M2, m2), max(M3, m3)
    return BoundEstimates(M1, M2, M3, sample_count=samples, seed=seed)


@dataclass(frozen=True)
class ResolventFit:
    """Least-squares fit of log N(eps) = log c0 - k log eps."""

    c0: float
    k: float
    residual_of_fit: float
    eps: tuple[float, ...]
    norms: tuple[float, ...]

    @property
    def well_posed(self) -> bool:
        return self.k <= WELL_POSED_K

    def to_dict(self) -> dict:
        return {
            'c0': self.c0,
            'k': self.k,
            'residual_of_fit': self.residual_of_fit,
            'eps': list(self.eps),
            'norms': list(self.norms),
        }


def fit_power_law(
    x: Sequence[float], y: Sequence[float]
) -> tuple[float, float, float]:
    """OLS fit of log y = log c + p log x; returns (c, p, rms)."""
    lx = np.log(np.asarray(x, dtype=float))
    ly = np.log(np.asarray(y, dtype=float))
    p, logc = np.polyfit(lx, ly, 1)
    rms = sqrt(float(np.mean((ly - (logc + p * lx)) ** 2)))
    return exp(logc), float(p), rms


def estimate_resolvent_growth(
    F: ProblemOp,
    u: ArrayLike,
    eps_schedule: Sequence[float],
    eps0: float = EPS0,
) -> ResolventFit:
    schedule = sorted(set(float(e) for e in eps_schedule), reverse=True)
    if len(schedule) < 3:
        raise InputError('the eps schedule needs at least 3 distinct values')
    if not all(0 < e < eps0 for e in schedule):
        raise InputError(f'eps values must lie in (0, {eps0})')
    A = jacobian(F, u)
    norms = []
    for eps in schedule:
        try:
            inv = resolvent_inverse(A, eps)
        except SingularityError as e:
            e.eps = eps
            raise
        norms.append(induced_matrix_norm(inv, F.norm_kind))
    c0, slope, rms = fit_power_law(schedule, norms)
    fit = ResolventFit(c0, -slope, rms, tuple(schedule), tuple(norms))
    if fit.well_posed:
        logger.warning(
            '%s: fitted k = %.3g; '
            'the linearization is well-posed at this point',
            F.name,
            fit.k,
        )
    else:
        logger.info(
            '%s: resolvent growth c0 = %.4g, k = %.4g', F.name, c0, fit.k
        )
    return fit
