"""Solve F(v) + eps*v = 0 along a decreasing eps-schedule, fit the rate
||v_eps - y|| ~ c eps^k, and probe linear problems for divergence of v_eps.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from math import nan
from typing import Literal

import numpy as np
from numpy.typing import ArrayLike

from dsm_config import (
    ABS_TOL,
    CONTRACTION_TOL,
    DELTA,
    EPS0,
    MAX_ITER,
    MAX_STEPS,
    REL_TOL,
    T_MAX,
)
from lib import logger
from lib.commons import DSMError, InputError, InsufficientDataError, PathError
from lib.contraction import fixed_point_solve, source_condition_solve
from lib.flow import FlowConfig, integrate_dsm
from lib.operators import (
    ProblemOp,
    RegParams,
    ResolventFit,
    apply,
    estimate_resolvent_growth,
    fit_power_law,
    jacobian,
    resolvent_solve,
)
from lib.space import Vec, as_vec, norm

Method = Literal['flow', 'contraction', 'hybrid']
METHODS = ('flow', 'contraction', 'hybrid')
MIN_FIT_POINTS = 3
DIVERGENCE_RATIO = 10.0


@dataclass(frozen=True)
class EpsSchedule:
    """eps_i = eps_start * factor^i for i < count, all inside (0, eps0)."""

    eps_start: float
    factor: float
    count: int
    eps0: float = EPS0

    def __post_init__(self):
        if not 0 < self.eps_start < self.eps0:
            raise InputError(f'eps_start must lie in (0, {self.eps0})')
        if not 0 < self.factor < 1:
            raise InputError('factor must lie in (0, 1)')
        if self.count < MIN_FIT_POINTS:
            raise InputError(
                f'a schedule needs at least {MIN_FIT_POINTS} values'
            )

    @classmethod
    def between(
        cls, eps_max: float, eps_min: float, count: int
    ) -> 'EpsSchedule':
        """Geometric schedule from eps_max down to eps_min inclusive."""
        if not 0 < eps_min < eps_max:
            raise InputError('need 0 < eps_min < eps_max')
        if count < MIN_FIT_POINTS:
            raise InputError(
                f'a schedule needs at least {MIN_FIT_POINTS} values'
            )
        return cls(eps_max, (eps_min / eps_max) ** (1 / (count - 1)), count)

    @property
    def values(self) -> list[float]:
        return [self.eps_start * self.factor**i for i in range(self.count)]

    def to_dict(self) -> dict:
        return {
            'eps_start': self.eps_start,
            'factor': self.factor,
            'count': self.count,
            'eps0': self.eps0,
        }


@dataclass(frozen=True)
class PathTolerances:
    delta: float = DELTA
    rel_tol: float = REL_TOL
    abs_tol: float = ABS_TOL
    t_max: float = T_MAX
    max_steps: int = MAX_STEPS
    contraction_tol: float = CONTRACTION_TOL
    max_iter: int = MAX_ITER

    def flow_config(self, reg: RegParams) -> FlowConfig:
        return FlowConfig(
            reg,
            self.t_max,
            self.delta,
            self.rel_tol,
            self.abs_tol,
            self.max_steps,
        )

    def to_dict(self) -> dict:
        return {
            'delta': self.delta,
            'rel_tol': self.rel_tol,
            'abs_tol': self.abs_tol,
            't_max': self.t_max,
            'max_steps': self.max_steps,
            'contraction_tol': self.contraction_tol,
            'max_iter': self.max_iter,
        }


@dataclass
class PathRecord:
    eps: float
    v: Vec | None
    residual: float
    error: float | None
    iterations: int
    method: str
    tolerance: float
    status: str = 'ok'

    @property
    def ok(self) -> bool:
        return self.status == 'ok'


@dataclass
class RatePathResult:
    records: list[PathRecord]
    schedule: EpsSchedule
    method: str
    warm_start: bool = True
    k_hat: float | None = None
    c_hat: float | None = None
    fit_rms: float | None = None
    resolvent_fit: ResolventFit | None = None
    notes: list[str] = field(default_factory=list)


class _Solver:
    """Solves one eps of a path; shared by the sequential and threaded runs."""

    def __init__(
        self,
        F: ProblemOp,
        method: str,
        tols: PathTolerances,
        reg: RegParams,
        seed: int,
    ):
        self.F = F
        self.method = method
        self.tols = tols
        self.reg = reg
        self.seed = seed
        self.y = F.known_solution
        self.psi = None
        if method != 'flow':
            if self.y is None:
                raise InputError(
                    f'{F.name}: method {method!r} needs a known solution y'
                )
            self.psi = (
                F.known_source
                if F.known_source is not None
                else source_condition_solve(F, self.y)[0]
            )
        bounds = F.analytic_bounds
        M1 = bounds.M1 if bounds is not None else 1.0
        self.contraction_tolerance = 10 * tols.contraction_tol * (1 + M1)

    def _error(self, v: Vec) -> float | None:
        if self.y is None:
            return None
        return norm(v - self.y, self.F.norm_kind)

    def __call__(self, eps: float, start: Vec) -> PathRecord:
        reg = self.reg.with_eps(eps)
        tols = self.tols
        try:
            if self.method == 'contraction':
                diag = fixed_point_solve(
                    self.F, self.y, self.psi, reg, tols.contraction_tol,
                    tols.max_iter, seed=self.seed,
                )
                return self._from_contraction(eps, diag, 0)
            trace = integrate_dsm(self.F, start, tols.flow_config(reg))
            if self.method == 'hybrid':
                diag = fixed_point_solve(
                    self.F, self.y, self.psi, reg, tols.contraction_tol,
                    tols.max_iter, seed=self.seed, z0=trace.w_inf - self.y,
                )
                return self._from_contraction(eps, diag, trace.accepted_steps)
            return PathRecord(
                eps,
                trace.w_inf,
                trace.final_residual,
                self._error(trace.w_inf),
                trace.accepted_steps,
                'flow',
                tols.delta,
                'ok'
                if trace.reached_target
                else 'failed: target residual not reached',
            )
        except DSMError as e:
            logger.exception('%s: solve at eps=%g failed', self.F.name, eps)
            return PathRecord(
                eps, None, nan, None, 0, self.method, nan, f'failed: {e}'
            )

    def _from_contraction(self, eps, diag, flow_steps: int) -> PathRecord:
        if diag.converged and diag.residual <= self.contraction_tolerance:
            status = 'ok'
        elif diag.converged:
            status = f'failed: residual {diag.residual:.3e} above tolerance'
        else:
            status = 'failed: fixed-point iteration did not converge'
        return PathRecord(
            eps,
            diag.v_eps,
            diag.residual,
            self._error(diag.v_eps),
            flow_steps + diag.iterations,
            self.method,
            self.contraction_tolerance,
            status,
        )


def run_path(
    F: ProblemOp,
    w0: ArrayLike,
    sched: EpsSchedule,
    method: Method = 'flow',
    tols: PathTolerances | None = None,
    reg: RegParams | None = None,
    warm_start: bool = True,
    jobs: int = 1,
    seed: int = 0,
) -> RatePathResult:
    """Solve at every eps of the schedule, largest first.

    With warm_start the flow for eps_(i+1) starts at v_(eps_i). A failed eps
    is recorded and the path goes on; if every eps fails PathError is raised.
    `reg` supplies c0 and k (its eps is replaced per record).
    """
    if method not in METHODS:
        raise InputError(
            f'unknown method {method!r}; use one of {", ".join(METHODS)}'
        )
    if jobs < 1:
        raise InputError('jobs must be at least 1')
    tols = tols or PathTolerances()
    values = sched.values
    reg = reg or RegParams(values[0], eps0=sched.eps0)
    w0 = as_vec(w0)
    if w0.size != F.dim:
        raise InputError(f'w0 has dimension {w0.size}, expected {F.dim}')
    warm = warm_start and method != 'contraction'
    solve = _Solver(F, method, tols, reg, seed)
    logger.info(
        '%s: %s path over %d eps values from %g (%s start)',
        F.name, method, len(values), values[0], 'warm' if warm else 'cold',
    )

    if warm:
        if jobs > 1:
            logger.warning(
                'warm-started paths run sequentially; ignoring jobs=%d', jobs
            )
        records, start = [], w0
        for eps in values:
            record = solve(eps, start)
            if record.ok:
                start = record.v
            records.append(record)
    elif jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(lambda eps: solve(eps, w0), values))
    else:
        records = [solve(eps, w0) for eps in values]

    if not any(r.ok for r in records):
        raise PathError(f'{F.name}: every solve along the schedule failed')
    result = RatePathResult(records, sched, method, warm)
    failed = sum(not r.ok for r in records)
    if failed:
        result.notes.append(f'{failed} of {len(records)} solves failed')
    result.resolvent_fit = _assumption_fit(F, values, sched.eps0)
    return result


def _assumption_fit(
    F: ProblemOp, values: list[float], eps0: float
) -> ResolventFit | None:
    """Fit of ||(A + eps*I)^-1|| ~ c0 eps^-k over the path's eps.

    The Jacobian is taken at y, or at u0 when y is unknown.
    """
    at = F.known_solution if F.known_solution is not None else F.center
    try:
        return estimate_resolvent_growth(F, at, values, eps0)
    except DSMError as e:
        logger.warning('%s: no resolvent growth fit: %s', F.name, e)
        return None


def fit_rate(path: RatePathResult) -> tuple[float, float, float]:
    """OLS fit of log error = log c_hat + k_hat log eps over usable records.

    Records without an error or with error 0 are left out and noted.
    """
    usable = [
        r for r in path.records if r.ok and r.error is not None and r.error > 0
    ]
    zero = sum(1 for r in path.records if r.ok and r.error == 0)
    if zero:
        path.notes.append(
            f'{zero} records with zero error excluded from the fit'
        )
    if len(usable) < MIN_FIT_POINTS:
        raise InsufficientDataError(
            f'rate fit needs {MIN_FIT_POINTS} records with positive error, '
            f'got {len(usable)}'
        )
    c_hat, k_hat, rms = fit_power_law(
        [r.eps for r in usable], [r.error for r in usable]
    )
    path.k_hat, path.c_hat, path.fit_rms = k_hat, c_hat, rms
    logger.info(
        'rate fit: k_hat = %.4f, c_hat = %.4g, rms = %.2e', k_hat, c_hat, rms
    )
    return k_hat, c_hat, rms


@dataclass
class ProbeResult:
    eps: list[float]
    norms: list[float]
    verdict: str
    ratio: float

    @property
    def divergent(self) -> bool:
        return self.verdict == 'divergent'


def divergence_probe(
    F: ProblemOp, sched: EpsSchedule, jobs: int = 1
) -> ProbeResult:
    """Track ||v_eps|| for (A + eps*I) v = f as eps decreases.

    The verdict is 'divergent' when the norms increase strictly over the
    whole schedule and the last exceeds the first tenfold, else 'bounded'.
    """
    if not F.linear:
        raise InputError(
            f'{F.name}: the divergence probe needs a linear problem'
        )
    A = jacobian(F, F.center)
    f = -apply(F, np.zeros(F.dim))
    values = sched.values

    def size(eps: float) -> float:
        return norm(resolvent_solve(A, eps, f), F.norm_kind)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            norms = list(pool.map(size, values))
    else:
        norms = [size(eps) for eps in values]
    rising = all(a < b for a, b in zip(norms, norms[1:]))
    ratio = norms[-1] / norms[0] if norms[0] > 0 else nan
    verdict = 'divergent' if rising and ratio > DIVERGENCE_RATIO else 'bounded'
    logger.info('%s: probe verdict %s (ratio %.3g)', F.name, verdict, ratio)
    return ProbeResult(values, norms, verdict, ratio)
