#!/usr/bin/env python3
# dsm.py
"""
Command-line tool for solving F(u) + eps*u = 0 with the DSM flow and the
fixed-point construction, and for the eps -> 0 studies built on them.

Artifacts are written to --out (default $DSM_OUTPUT_DIR); messages go to
stderr. Exit codes: 0 success, 1 hypothesis violation, 2 numeric failure,
3 usage error.
"""

import argparse
import json
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from dsm_config import (
    ABS_TOL,
    BOUND_SAMPLES,
    CONTRACTION_TOL,
    DELTA,
    EPS0,
    MAX_ITER,
    MAX_STEPS,
    OUTPUT_DIR,
    REL_TOL,
    RESOLVENT_SCHEDULE,
    T_MAX,
)
from lib import logger, rc
from lib.commons import (
    DSMError,
    InputError,
    InsufficientDataError,
    NumericError,
    UsageError,
    exit_code,
)
from lib.contraction import (
    contraction_radius,
    fixed_point_solve,
    make_shifted_problem,
    shifted_fixed_point_solve,
    source_condition_solve,
)
from lib.export_formats import (
    check_to_json,
    diagnostics_to_csv,
    diagnostics_to_json,
    flow_to_json,
    path_to_csv,
    path_to_json,
    probe_to_json,
    trace_to_csv,
)
from lib.flow import FlowConfig, decay_report, integrate_dsm
from lib.operators import (
    ProblemOp,
    RegParams,
    check_known_solution,
    estimate_derivative_bounds,
    estimate_resolvent_growth,
    jacobian_self_test,
)
from lib.problems import (
    ProblemSpec,
    list_problems,
    load_linear_csv,
    load_problem,
)
from lib.regpath import (
    EpsSchedule,
    PathTolerances,
    divergence_probe,
    fit_rate,
    run_path,
)
from lib.space import NormKind, norm

PARAM = rc(r'([A-Za-z_]\w*)=(.+)').fullmatch


@dataclass
class RunConfig:
    """Everything a run depends on. Emitted with every artifact."""

    command: str = 'flow'
    problem: str = 'linear-diag'
    csv: str | None = None
    n: int | None = None
    params: dict = field(default_factory=dict)
    norm: str = 'l2'
    seed: int = 0
    eps: float = 0.1
    eps0: float = EPS0
    k: float = 1.0
    c0: float = 1.0
    delta: float = DELTA
    rel_tol: float = REL_TOL
    abs_tol: float = ABS_TOL
    t_max: float = T_MAX
    max_steps: int = MAX_STEPS
    w0: list[float] | None = None
    eps_start: float = 0.1
    factor: float = 0.1
    count: int = 5
    method: str = 'flow'
    cold: bool = False
    jobs: int = 1
    strict: bool = False
    shift: str | None = None
    tol: float = CONTRACTION_TOL
    max_iter: int = MAX_ITER
    h_samples: int = 20
    samples: int = BOUND_SAMPLES
    points: int = 5
    format: str | None = None
    out: str = OUTPUT_DIR

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> 'RunConfig':
        known = {f.name for f in fields(cls)}
        if unknown := set(d) - known:
            raise UsageError(f'unknown configuration keys: {sorted(unknown)}')
        return cls(**d)

    @property
    def norm_kind(self) -> NormKind:
        return NormKind.parse(self.norm)

    def reg(self, eps: float | None = None) -> RegParams:
        eps = self.eps if eps is None else eps
        return RegParams(eps, self.eps0, self.k, self.c0)

    def flow_config(self) -> FlowConfig:
        return FlowConfig(
            self.reg(),
            self.t_max,
            self.delta,
            self.rel_tol,
            self.abs_tol,
            self.max_steps,
        )

    def tolerances(self) -> PathTolerances:
        return PathTolerances(
            self.delta, self.rel_tol, self.abs_tol, self.t_max, self.max_steps,
            self.tol, self.max_iter,
        )

    def schedule(self) -> EpsSchedule:
        return EpsSchedule(self.eps_start, self.factor, self.count, self.eps0)


class ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _number(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise UsageError(f'not a number: {text!r}') from None


def _numbers(text: str) -> list[float]:
    return [_number(part) for part in text.split(',') if part.strip()]


def parse_params(items: list[str]) -> dict:
    """`key=value` strings to a dict; comma lists become lists of floats."""
    params = {}
    for item in items:
        m = PARAM(item.strip())
        if m is None:
            raise UsageError(f'--param expects key=value, got {item!r}')
        key, value = m.groups()
        values = _numbers(value)
        scalar = len(values) == 1 and ',' not in value
        params[key] = values[0] if scalar else values
    return params


def _common(p: argparse.ArgumentParser):
    p.add_argument(
        '--config', help='JSON run configuration or emitted artifact'
    )
    p.add_argument('--problem', help='built-in problem name (see `problems`)')
    p.add_argument(
        '--csv', help='linear problem file: n x n matrix and a rhs row'
    )
    p.add_argument('--n', type=int, help='problem dimension')
    p.add_argument(
        '--param',
        action='append',
        default=[],
        help='problem parameter key=value',
    )
    p.add_argument(
        '--psi-norm', type=float, help='shortcut for --param psi_norm=...'
    )
    p.add_argument('--norm', choices=['l1', 'l2', 'linf'])
    p.add_argument('--seed', type=int)
    p.add_argument('--eps', type=float, help='regularization parameter')
    p.add_argument('--eps0', type=float)
    p.add_argument('--k', type=float, help='resolvent growth exponent')
    p.add_argument('--c0', type=float, help='resolvent growth constant')
    p.add_argument('--delta', type=float, help='target residual')
    p.add_argument('--rel-tol', type=float)
    p.add_argument('--abs-tol', type=float)
    p.add_argument('--t-max', type=float)
    p.add_argument('--max-steps', type=int)
    p.add_argument(
        '--w0', type=_numbers, help='initial state, scalar or comma list'
    )
    p.add_argument('--tol', type=float, help='fixed-point step tolerance')
    p.add_argument('--max-iter', type=int)
    p.add_argument(
        '--jobs', type=int, help='worker threads for cold paths and probes'
    )
    p.add_argument('--format', choices=['csv', 'json'])
    p.add_argument('--out', help='output directory')


def make_parser() -> ArgumentParser:
    parser = ArgumentParser(
        prog='dsm',
        description='Solve F(u) + eps*u = 0 by the dynamical systems method.',
    )
    sub = parser.add_subparsers(
        dest='command', required=True, parser_class=ArgumentParser
    )
    quiet = {'argument_default': argparse.SUPPRESS}

    flow = sub.add_parser(
        'flow', help='integrate the DSM flow and check residual decay', **quiet
    )
    _common(flow)
    flow.add_argument(
        '--h-samples', type=int, help='random functionals per check'
    )

    path = sub.add_parser(
        'path', help='solve along an eps-schedule and fit the rate', **quiet
    )
    _common(path)
    path.add_argument('--eps-start', type=float)
    path.add_argument('--factor', type=float)
    path.add_argument('--count', type=int)
    path.add_argument('--method', choices=['flow', 'contraction', 'hybrid'])
    path.add_argument(
        '--cold', action='store_true', help='start every eps at w0'
    )

    contract = sub.add_parser(
        'contract', help='fixed-point construction near y', **quiet
    )
    _common(contract)
    contract.add_argument(
        '--strict',
        action='store_true',
        help='fail unless eta < 1 and every iterate stays in B_r',
    )
    contract.add_argument(
        '--shift', help='shift element q: zero, y, or a comma list'
    )
    contract.add_argument(
        '--samples', type=int, help='samples for estimated M2, M3'
    )

    probe = sub.add_parser(
        'probe', help='divergence probe for linear problems', **quiet
    )
    _common(probe)
    probe.add_argument('--eps-start', type=float)
    probe.add_argument('--factor', type=float)
    probe.add_argument('--count', type=int)

    check = sub.add_parser(
        'check', help='Jacobian self-test and derivative estimates', **quiet
    )
    _common(check)
    check.add_argument('--samples', type=int)
    check.add_argument('--points', type=int)

    sub.add_parser('problems', help='list built-in problems')
    return parser


def build_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, then the --config file, then explicit flags."""
    values = {}
    if path := getattr(args, 'config', None):
        try:
            loaded = json.loads(Path(path).read_text(encoding='utf-8'))
        except (OSError, ValueError) as e:
            raise InputError(f'cannot read config {path}: {e}') from e
        if isinstance(loaded.get('config'), dict):
            loaded = loaded['config']
        values.update(loaded)
    flags = vars(args).copy()
    flags.pop('config', None)
    params = dict(values.get('params') or {})
    params.update(parse_params(flags.pop('param', [])))
    if (psi_norm := flags.pop('psi_norm', None)) is not None:
        params['psi_norm'] = psi_norm
    values.update(flags)
    values['params'] = params
    return RunConfig.from_dict(values)


def load_operator(cfg: RunConfig) -> ProblemOp:
    kind = cfg.norm_kind
    if cfg.csv:
        return load_linear_csv(cfg.csv, kind)
    spec = ProblemSpec(cfg.problem, cfg.n, cfg.params, cfg.seed, kind)
    return load_problem(spec)


def initial_state(cfg: RunConfig, F: ProblemOp) -> np.ndarray:
    if cfg.w0 is None:
        return F.center
    w0 = np.asarray(cfg.w0, dtype=float)
    if w0.size == 1:
        return np.full(F.dim, w0[0])
    if w0.size != F.dim:
        raise InputError(f'--w0 has {w0.size} entries, expected 1 or {F.dim}')
    return w0


def _write(cfg: RunConfig, F: ProblemOp, ext: str, text: str) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    target = out / f'{cfg.command}-{F.name}.{ext}'
    target.write_text(text, encoding='utf-8')
    logger.info('wrote %s', target)
    return target


def cmd_flow(cfg: RunConfig) -> int:
    F = load_operator(cfg)
    config = cfg.to_dict()
    trace = integrate_dsm(F, initial_state(cfg, F), cfg.flow_config())
    report = decay_report(F, trace, cfg.reg(), cfg.h_samples, cfg.seed)
    _write(cfg, F, 'csv', trace_to_csv(trace, config))
    _write(cfg, F, 'json', flow_to_json(trace, report, config))
    return 0


def cmd_path(cfg: RunConfig) -> int:
    F = load_operator(cfg)
    result = run_path(
        F,
        initial_state(cfg, F),
        cfg.schedule(),
        cfg.method,
        cfg.tolerances(),
        cfg.reg(cfg.eps_start),
        warm_start=not cfg.cold,
        jobs=cfg.jobs,
        seed=cfg.seed,
    )
    try:
        fit_rate(result)
    except InsufficientDataError as e:
        logger.warning('%s: %s', F.name, e)
        result.notes.append(str(e))
    config = cfg.to_dict()
    if cfg.format == 'csv':
        _write(cfg, F, 'csv', path_to_csv(result, config))
    else:
        _write(cfg, F, 'json', path_to_json(result, config))
    return 0


def _shift_element(cfg: RunConfig, F: ProblemOp, y: np.ndarray) -> np.ndarray:
    if cfg.shift == 'zero':
        return np.zeros(F.dim)
    if cfg.shift == 'y':
        return y
    q = np.asarray(_numbers(cfg.shift), dtype=float)
    if q.size == 1:
        q = np.full(F.dim, q[0])
    return q


def cmd_contract(cfg: RunConfig) -> int:
    F = load_operator(cfg)
    if (y := F.known_solution) is None:
        raise InputError(
            f'{F.name}: the fixed-point construction needs a known root y'
        )
    reg = cfg.reg()
    bounds = F.analytic_bounds or estimate_derivative_bounds(
        F, cfg.samples, cfg.seed
    )
    if cfg.shift is not None:
        S = make_shifted_problem(F, _shift_element(cfg, F, y), y)
        psi = S.psi
    else:
        S = None
        psi = F.known_source
        if psi is None:
            psi, _ = source_condition_solve(F, y)
    # rho < 1 is required in every mode
    contraction_radius(reg, bounds.M2, norm(psi, F.norm_kind))
    if S is not None:
        diag = shifted_fixed_point_solve(
            S, reg, cfg.tol, cfg.max_iter, cfg.strict, bounds, cfg.seed
        )
    else:
        diag = fixed_point_solve(
            F, y, psi, reg, cfg.tol, cfg.max_iter, cfg.strict, bounds, cfg.seed
        )
    config = cfg.to_dict()
    if cfg.format == 'csv':
        _write(cfg, F, 'csv', diagnostics_to_csv(diag, config))
    else:
        _write(cfg, F, 'json', diagnostics_to_json(diag, config))
    if not diag.converged:
        raise NumericError(f'{F.name}: fixed-point iteration did not converge')
    return 0


def cmd_probe(cfg: RunConfig) -> int:
    F = load_operator(cfg)
    probe = divergence_probe(F, cfg.schedule(), cfg.jobs)
    _write(cfg, F, 'json', probe_to_json(probe, cfg.to_dict()))
    return 0


def cmd_check(cfg: RunConfig) -> int:
    F = load_operator(cfg)
    at = F.known_solution if F.known_solution is not None else F.center
    results = {
        'jacobian': jacobian_self_test(F, cfg.points, cfg.seed).to_dict(),
        'bounds': estimate_derivative_bounds(
            F, cfg.samples, cfg.seed
        ).to_dict(),
        'analytic_bounds': (
            F.analytic_bounds.to_dict() if F.analytic_bounds else None
        ),
        'resolvent': estimate_resolvent_growth(
            F, at, RESOLVENT_SCHEDULE, cfg.eps0
        ).to_dict(),
        'known_solution_residual': check_known_solution(F),
    }
    _write(cfg, F, 'json', check_to_json(results, cfg.to_dict()))
    return 0


def cmd_problems() -> int:
    print(f"\n{'Name':<16} {'Description'}")
    print('-' * 72)
    for name, description in list_problems():
        print(f'{name:<16} {description}')
    return 0


COMMAND_HANDLERS = {
    'flow': cmd_flow,
    'path': cmd_path,
    'contract': cmd_contract,
    'probe': cmd_probe,
    'check': cmd_check,
}


def run_command(argv: list[str]) -> int:
    try:
        args = make_parser().parse_args(argv)
        if args.command == 'problems':
            return cmd_problems()
        cfg = build_config(args)
        return COMMAND_HANDLERS[cfg.command](cfg)
    except SystemExit as e:
        # --help
        return e.code if isinstance(e.code, int) else 0
    except DSMError as e:
        logger.error('%s: %s', type(e).__name__, e)
        return exit_code(e)
    except Exception:
        logger.exception('unexpected failure')
        return 2


def main():
    sys.exit(run_command(sys.argv[1:]))


if __name__ == '__main__':
    main()
