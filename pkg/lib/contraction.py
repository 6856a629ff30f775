"""Fixed-point construction of the solution of F(v) + eps*v = 0 near a root y.

Writing v = y + z with A = F'(y) and the source element psi (A psi = y),
the equation becomes z = T(z) with

    T(z) = -(A + eps*I)^-1 (R(z) + eps*A*psi),
    R(z) = F(y + z) - F(y) - A z.

T maps the ball B_r = {||z|| <= r} into itself and contracts there when

    rho = 2 c0 M2 ||psi|| eps^(1-k) < 1,
    r   = (eps^k / (c0 M2)) (1 - sqrt(1 - rho)),
    eta = (c0 / eps^k) (M3 r^2 / 6 + M2 r) < 1.

The shifted variant solves F(p) + eps*(p - q) = 0 by the same iteration with
psi replaced by the solution of A psi = y - q.
"""

from dataclasses import dataclass, field
from math import inf, isfinite, sqrt

import numpy as np
from numpy.typing import ArrayLike

from dsm_config import BOUND_SAMPLES, CONTRACTION_TOL, MAX_ITER, PSI_WARN
from lib import logger
from lib.commons import (
    DivergenceError,
    HypothesisViolation,
    InputError,
    SingularityError,
    SourceConditionUnavailable,
)
from lib.operators import (
    BoundEstimates,
    ProblemOp,
    RegParams,
    apply,
    estimate_derivative_bounds,
    jacobian,
    regularized_residual,
    resolvent_solve,
    solve_dense,
)
from lib.space import Matrix, Vec, as_vec, norm

# step norms must grow this much over DIVERGENCE_WINDOW iterations
DIVERGENCE_GROWTH = 10.0
DIVERGENCE_WINDOW = 5
BALL_SLACK = 1e-12


@dataclass
class ContractionDiagnostics:
    """Everything fixed_point_solve learned about T on B_r.

    `q` is the contraction bound actually certified (q = eta); `asymptotic_q`
    is 1 - rho, recorded for comparison only. `error` is ||z_star||, the
    distance of v_eps from y.
    """

    eps: float
    M2: float
    M3: float
    psi_norm: float
    r: float
    rho: float
    eta: float
    q: float
    iterations: int
    final_step_norm: float
    converged: bool
    z_star: Vec
    v_eps: Vec
    tolerance: float
    bounds_source: str = 'analytic'
    observed_ratio: float | None = None
    self_map: float | None = None
    asymptotic_q: float | None = None
    residual: float | None = None
    strict: bool = False
    history: list[float] = field(default_factory=list)
    error: float = 0.0

    @property
    def certified(self) -> bool:
        return (
            self.converged
            and self.eta < 1
            and self.bounds_source == 'analytic'
        )


@dataclass(frozen=True)
class ShiftedProblem:
    """F(p) + eps*(p - shift_q) = 0 around the root y.

    psi solves A psi = y - shift_q with A = F'(y).
    """

    base: ProblemOp
    shift_q: Vec
    psi: Vec
    y: Vec


def remainder(
    F: ProblemOp, y: ArrayLike, z: ArrayLike, A: Matrix | None = None
) -> Vec:
    """F(y + z) - F(y) - F'(y) z."""
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    if A is None:
        A = jacobian(F, y)
    return apply(F, y + z) - apply(F, y) - A @ z


def source_condition_solve(F: ProblemOp, y: ArrayLike) -> tuple[Vec, float]:
    """Solve F'(y) psi = y; returns psi and ||psi||."""
    y = as_vec(y)
    return _solve_source(F, jacobian(F, y), y)


def _solve_source(F: ProblemOp, A: Matrix, target: Vec) -> tuple[Vec, float]:
    try:
        psi = solve_dense(A, target)
    except SingularityError as e:
        raise SourceConditionUnavailable(
            f'{F.name}: F\'(y) is singular, no source element ({e})',
            payload=target,
        ) from e
    psi_norm = norm(psi, F.norm_kind)
    if psi_norm >= PSI_WARN:
        logger.warning(
            '%s: ||psi|| = %.4g is not small (warning threshold %g)',
            F.name, psi_norm, PSI_WARN,
        )
    return psi, psi_norm


def _check_nonneg(**values: float):
    for name, value in values.items():
        if not (value >= 0 and isfinite(value)):
            raise InputError(
                f'{name} must be finite and non-negative, got {value}'
            )


def rho_value(reg: RegParams, M2: float, psi_norm: float) -> float:
    _check_nonneg(M2=M2, psi_norm=psi_norm)
    return 2 * reg.c0 * M2 * psi_norm * reg.eps ** (1 - reg.k)


def contraction_radius(
    reg: RegParams, M2: float, psi_norm: float
) -> tuple[float, float]:
    """Radius r of the invariant ball and rho.

    Evaluated as 2 eps ||psi|| / (1 + sqrt(1 - rho)), which is the same
    number without the cancellation in 1 - sqrt(1 - rho) for small rho and
    gives the limit eps ||psi|| for M2 = 0.
    """
    rho = rho_value(reg, M2, psi_norm)
    if rho >= 1:
        raise HypothesisViolation(
            f'rho = {rho:.6g} >= 1: condition rho < 1 fails, '
            'no contraction radius',
            'rho<1',
            rho,
        )
    return 2 * reg.eps * psi_norm / (1 + sqrt(1 - rho)), rho


def contraction_factor(
    reg: RegParams, M2: float, M3: float, r: float
) -> float:
    """eta = (c0 / eps^k) (M3 r^2 / 6 + M2 r)."""
    _check_nonneg(M2=M2, M3=M3, r=r)
    return reg.resolvent_bound * (M3 * r * r / 6 + M2 * r)


def self_map_bound(
    reg: RegParams, M2: float, psi_norm: float, r: float
) -> float:
    """Upper bound of ||T(z)|| on B_r.

    (c0 / eps^k)(M2 / 2) r^2 + eps ||psi||
    """
    _check_nonneg(M2=M2, psi_norm=psi_norm, r=r)
    return reg.resolvent_bound * M2 / 2 * r * r + reg.eps * psi_norm


def asymptotic_q(rho: float) -> float:
    return 1 - rho


def t_map(
    F: ProblemOp,
    y: ArrayLike,
    psi: ArrayLike,
    reg: RegParams,
    z: ArrayLike,
    A: Matrix | None = None,
) -> Vec:
    """T(z) = -(A + eps*I)^-1 (R(z) + eps*A*psi), A = F'(y)."""
    y = np.asarray(y, dtype=float)
    if A is None:
        A = jacobian(F, y)
    rhs = remainder(F, y, z, A) + reg.eps * (A @ np.asarray(psi, dtype=float))
    return -resolvent_solve(A, reg.eps, rhs)


def _diverging(steps: list[float]) -> bool:
    if len(steps) <= DIVERGENCE_WINDOW:
        return False
    window = steps[-DIVERGENCE_WINDOW - 1 :]
    rising = all(a < b for a, b in zip(window, window[1:]))
    return rising and window[-1] >= DIVERGENCE_GROWTH * window[0]


def fixed_point_solve(
    F: ProblemOp,
    y: ArrayLike,
    psi: ArrayLike,
    reg: RegParams,
    tol: float = CONTRACTION_TOL,
    max_iter: int = MAX_ITER,
    strict: bool = False,
    bounds: BoundEstimates | None = None,
    seed: int = 0,
    z0: ArrayLike | None = None,
) -> ContractionDiagnostics:
    """Iterate z <- T(z) from z0 (default 0) and return the diagnostics.

    M2 and M3 come from `bounds`, else from F's analytic bounds, else from
    sampling (then the result is never certified). In strict mode a failed
    rho < 1 or eta < 1 gate, or an iterate leaving B_r, raises
    HypothesisViolation. Otherwise a failed rho gate reports r and eta as
    infinite and the iteration still runs.
    """
    y = as_vec(y)
    psi = as_vec(psi)
    if y.size != F.dim or psi.size != F.dim:
        raise InputError(f'y and psi must have dimension {F.dim}')
    if not tol > 0 or max_iter < 1:
        raise InputError('tol must be positive and max_iter at least 1')
    kind = F.norm_kind
    psi_norm = norm(psi, kind)

    if bounds is None:
        bounds = F.analytic_bounds or estimate_derivative_bounds(
            F, BOUND_SAMPLES, seed
        )
    source = 'analytic' if bounds.certified else 'estimated, non-certified'
    M2, M3 = bounds.M2, bounds.M3

    try:
        r, rho = contraction_radius(reg, M2, psi_norm)
    except HypothesisViolation:
        if strict:
            raise
        rho = rho_value(reg, M2, psi_norm)
        r = inf
        logger.warning(
            '%s: rho = %.4g >= 1, iterating without a radius', F.name, rho
        )
    if isfinite(r):
        eta = contraction_factor(reg, M2, M3, r)
        self_map = self_map_bound(reg, M2, psi_norm, r)
    else:
        eta = self_map = inf
    if eta >= 1:
        if strict:
            raise HypothesisViolation(
                f'eta = {eta:.6g} >= 1: condition eta < 1 fails, '
                'contraction not certified',
                'eta<1',
                eta,
            )
        logger.warning(
            '%s: eta = %.4g >= 1, contraction not certified', F.name, eta
        )
    logger.info(
        '%s: eps=%g rho=%.4g r=%.4g eta=%.4g (%s bounds)',
        F.name, reg.eps, rho, r, eta, source,
    )

    A = jacobian(F, y)
    z = np.zeros(F.dim) if z0 is None else np.array(as_vec(z0))
    if z.size != F.dim:
        raise InputError(f'z0 must have dimension {F.dim}')
    steps: list[float] = []
    step = inf
    for _ in range(max_iter):
        z_new = t_map(F, y, psi, reg, z, A)
        step = norm(z_new - z, kind)
        steps.append(step)
        z = z_new
        size = norm(z, kind)
        if strict and size > r * (1 + BALL_SLACK):
            raise HypothesisViolation(
                f'iterate left B_r: ||z|| = {size:.6g} > r = {r:.6g}',
                'self-map',
                size,
            )
        logger.debug(
            'iteration %d: step %.3e, ||z|| %.3e', len(steps), step, size
        )
        if step <= tol:
            break
        if _diverging(steps):
            raise DivergenceError(
                f'{F.name}: fixed-point steps grew '
                f'{DIVERGENCE_GROWTH:g}x over {DIVERGENCE_WINDOW} iterations',
                history=steps,
                payload=z,
            )

    ratios = [b / a for a, b in zip(steps, steps[1:]) if a > 0 and b > tol]
    inside = norm(z, kind) <= r * (1 + BALL_SLACK)
    converged = step <= tol and inside
    if step <= tol and not inside:
        logger.warning('%s: fixed point lies outside B_r', F.name)
    elif step > tol:
        logger.warning('%s: no convergence in %d iterations', F.name, max_iter)
    v = y + z
    return ContractionDiagnostics(
        eps=reg.eps,
        M2=M2,
        M3=M3,
        psi_norm=psi_norm,
        r=r,
        rho=rho,
        eta=eta,
        q=eta,
        iterations=len(steps),
        final_step_norm=step,
        converged=converged,
        z_star=z,
        v_eps=v,
        tolerance=tol,
        bounds_source=source,
        observed_ratio=max(ratios) if ratios else None,
        self_map=self_map,
        asymptotic_q=asymptotic_q(rho),
        residual=norm(regularized_residual(F, v, reg.eps), kind),
        strict=strict,
        history=steps,
        error=norm(z, kind),
    )


def make_shifted_problem(
    F: ProblemOp, q: ArrayLike, y: ArrayLike | None = None
) -> ShiftedProblem:
    """Build the shifted problem around y (default: F's known solution)."""
    if y is None:
        if F.known_solution is None:
            raise InputError(
                f'{F.name}: the shifted problem needs a known root y'
            )
        y = F.known_solution
    y = as_vec(y)
    q = as_vec(q)
    if q.size != F.dim or y.size != F.dim:
        raise InputError(f'q and y must have dimension {F.dim}')
    psi, _ = _solve_source(F, jacobian(F, y), y - q)
    return ShiftedProblem(F, q, as_vec(psi), y)


def shifted_fixed_point_solve(
    S: ShiftedProblem,
    reg: RegParams,
    tol: float = CONTRACTION_TOL,
    max_iter: int = MAX_ITER,
    strict: bool = False,
    bounds: BoundEstimates | None = None,
    seed: int = 0,
) -> ContractionDiagnostics:
    """Solve F(p) + eps*(p - q) = 0; `v_eps` of the result is p_eps.

    `residual` is ||F(p) + eps*(p - q)||.
    """
    diag = fixed_point_solve(
        S.base, S.y, S.psi, reg, tol, max_iter, strict, bounds, seed
    )
    p = diag.v_eps
    diag.residual = norm(
        apply(S.base, p) + reg.eps * (p - S.shift_q), S.base.norm_kind
    )
    return diag
