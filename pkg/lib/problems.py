"""Built-in test problems and ingestion of linear problems from CSV files."""

from collections.abc import Callable
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import hilbert
from scipy.stats import ortho_group

from lib import logger, rc
from lib.commons import InputError, ParseError, SpecError
from lib.operators import BoundEstimates, ProblemOp
from lib.space import NormKind, as_vec, induced_matrix_norm, norm, random_unit

NUMBER = rc(r'[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?').fullmatch
RANGE_TOL = 1e-12


@dataclass(frozen=True)
class ProblemSpec:
    """Name and parameters of a built-in problem.

    `params` values are reals or lists of reals (for instance `lam`).
    """

    name: str
    dim: int | None = None
    params: dict = field(default_factory=dict)
    seed: int = 0
    norm_kind: NormKind = NormKind.L2

    def to_dict(self) -> dict:
        return {
            'name': self.name,
            'dim': self.dim,
            'params': self.params,
            'seed': self.seed,
            'norm_kind': self.norm_kind.value,
        }


def _real(spec: ProblemSpec, key: str, default: float) -> float:
    value = spec.params.get(key, default)
    if isinstance(value, list | tuple):
        if len(value) != 1:
            raise SpecError(f'{spec.name}: {key} must be a single number')
        value = value[0]
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise SpecError(
            f'{spec.name}: {key} must be a number, got {value!r}'
        ) from None
    if not np.isfinite(value):
        raise SpecError(f'{spec.name}: {key} must be finite')
    return value


def _vector(spec: ProblemSpec, key: str) -> np.ndarray | None:
    if key not in spec.params:
        return None
    value = spec.params[key]
    try:
        return as_vec(value)
    except (InputError, TypeError, ValueError) as e:
        raise SpecError(f'{spec.name}: {key}: {e}') from None


def _dim(spec: ProblemSpec, default: int) -> int:
    n = spec.dim if spec.dim is not None else default
    if n < 1:
        raise SpecError(f'{spec.name}: dimension must be positive, got {n}')
    return n


def _radius(spec: ProblemSpec, y: np.ndarray | None) -> float:
    default = 1.0 + (2 * norm(y, spec.norm_kind) if y is not None else 0.0)
    radius = _real(spec, 'R', default)
    if radius <= 0:
        raise SpecError(f'{spec.name}: R must be positive')
    return radius


def _linear_bounds(A: np.ndarray, kind: NormKind) -> BoundEstimates:
    M1 = induced_matrix_norm(A, kind)
    return BoundEstimates(M1, 0.0, 0.0, source='analytic')


def linear_op(
    A: np.ndarray,
    f: np.ndarray,
    name: str,
    kind: NormKind = NormKind.L2,
    y: np.ndarray | None = None,
    radius: float | None = None,
    meta: dict | None = None,
) -> ProblemOp:
    """F(u) = A u - f with constant Jacobian A."""
    A = np.array(A, dtype=float)
    A.flags.writeable = False
    f = as_vec(f)
    n = f.size
    return ProblemOp(
        dim=n,
        evaluate=lambda u: A @ u - f,
        jac=lambda u: A,
        center=np.zeros(n),
        ball_radius=radius if radius is not None else 1.0 + 2 * norm(f, kind),
        norm_kind=kind,
        known_solution=y,
        name=name,
        linear=True,
        analytic_bounds=_linear_bounds(A, kind),
        meta=meta or {},
    )


def _linear_diag(spec: ProblemSpec) -> ProblemOp:
    lam = _vector(spec, 'lam')
    if lam is None:
        n = _dim(spec, 2)
        lam = np.array([1.0, 0.5]) if n == 2 else 1.0 / np.arange(1, n + 1)
    if spec.dim is not None and lam.size != spec.dim:
        raise SpecError(
            f'{spec.name}: lam has {lam.size} entries, n = {spec.dim}'
        )
    if np.any(lam < 0):
        raise SpecError(f'{spec.name}: eigenvalues must be non-negative')
    n = lam.size
    f = _vector(spec, 'f')
    if f is None:
        y = _vector(spec, 'y')
        y = np.ones(n) if y is None else y
        if y.size != n:
            raise SpecError(
                f'{spec.name}: y has {y.size} entries, expected {n}'
            )
        y = np.where(lam > 0, y, 0.0)
        f = lam * y
    elif f.size != n:
        raise SpecError(f'{spec.name}: f has {f.size} entries, expected {n}')
    zero = lam == 0
    scale = RANGE_TOL * (1 + np.abs(f).max())
    in_range = bool(np.all(np.abs(f[zero]) <= scale))
    y = np.divide(f, lam, out=np.zeros(n), where=~zero) if in_range else None
    if not in_range:
        logger.info(
            '%s: f is not in the range of the operator, no y attached',
            spec.name,
        )
    return linear_op(
        np.diag(lam),
        f,
        'linear-diag',
        spec.norm_kind,
        y=y,
        radius=_radius(spec, y),
        meta={'lam': lam.tolist(), 'in_range': in_range},
    )


def _linear_hilbert(spec: ProblemSpec) -> ProblemOp:
    n = _dim(spec, 8)
    H = hilbert(n)
    y = np.ones(n)
    return linear_op(
        H,
        H @ y,
        'linear-hilbert',
        spec.norm_kind,
        y=y,
        radius=_radius(spec, y),
    )


def _cubic(spec: ProblemSpec) -> ProblemOp:
    n = _dim(spec, 1)
    R = _radius(spec, None)
    return ProblemOp(
        dim=n,
        evaluate=lambda u: u + u**3,
        jac=lambda u: np.diag(1 + 3 * u**2),
        center=np.zeros(n),
        ball_radius=R,
        norm_kind=spec.norm_kind,
        known_solution=np.zeros(n),
        name='cubic',
        analytic_bounds=BoundEstimates(
            1 + 3 * R**2, 6 * R, 6.0, source='analytic'
        ),
    )


def _manufactured(spec: ProblemSpec) -> ProblemOp:
    """F(u) = A0 (u - y) + b (u - y)*(u - y) with A0 = Q diag(lam) Q^T.

    The bilinear term B[h, k] = b h*k (componentwise) has ||F''|| = 2|b|
    and F''' = 0, so M2 = 2|b| and M3 = 0 exactly; y = A0 psi with
    ||psi|| = psi_norm.
    """
    n = _dim(spec, 4)
    lam_min = _real(spec, 'lam_min', 0.1)
    lam_max = _real(spec, 'lam_max', 1.0)
    b = _real(spec, 'b', 0.5)
    psi_norm = _real(spec, 'psi_norm', 0.05)
    if not 0 < lam_min <= lam_max:
        raise SpecError(f'{spec.name}: need 0 < lam_min <= lam_max')
    if psi_norm < 0:
        raise SpecError(f'{spec.name}: psi_norm must be non-negative')
    kind = spec.norm_kind
    rng = np.random.default_rng(spec.seed)
    Q = ortho_group.rvs(n, random_state=rng) if n > 1 else np.ones((1, 1))
    A0 = Q @ np.diag(np.geomspace(lam_max, lam_min, n)) @ Q.T
    A0 = (A0 + A0.T) / 2
    A0.flags.writeable = False
    psi = psi_norm * random_unit(rng, n, kind)
    y = A0 @ psi
    y.flags.writeable = False
    R = _radius(spec, y)
    M1 = induced_matrix_norm(A0, kind) + 2 * abs(b) * (R + norm(y, kind))
    return ProblemOp(
        dim=n,
        evaluate=lambda u: A0 @ (u - y) + b * (u - y) ** 2,
        jac=lambda u: A0 + 2 * b * np.diag(u - y),
        center=np.zeros(n),
        ball_radius=R,
        norm_kind=kind,
        known_solution=y,
        known_source=psi,
        name='manufactured',
        analytic_bounds=BoundEstimates(M1, 2 * abs(b), 0.0, source='analytic'),
        meta={
            'lam_min': lam_min,
            'lam_max': lam_max,
            'b': b,
            'psi_norm': psi_norm,
        },
    )


def _counterexample(spec: ProblemSpec) -> ProblemOp:
    """lam_i = 1/i^2, f_i = i^-beta.

    As n grows, y_i = i^(2-beta) stays in l2 iff beta > 2.5 and the source
    element psi_i = i^(4-beta) iff beta > 4.5.
    """
    n = _dim(spec, 100)
    beta = _real(spec, 'beta', 4.0)
    i = np.arange(1, n + 1, dtype=float)
    lam = i**-2
    f = i**-beta
    y = i ** (2 - beta)
    return linear_op(
        np.diag(lam),
        f,
        'counterexample',
        spec.norm_kind,
        y=y,
        radius=_radius(spec, y),
        meta={
            'beta': beta,
            'solvable': beta > 2.5,
            'source_condition': beta > 4.5,
        },
    )


Builder = Callable[[ProblemSpec], ProblemOp]

_REGISTRY: dict[str, tuple[Builder, str, frozenset]] = {
    'linear-diag': (
        _linear_diag,
        'F(u) = diag(lam) u - f; lam >= 0, y attached when f is in the range',
        frozenset({'lam', 'f', 'y', 'R'}),
    ),
    'linear-hilbert': (
        _linear_hilbert,
        'F(u) = H u - H 1 with the n x n Hilbert matrix; y = all ones',
        frozenset({'R'}),
    ),
    'cubic': (
        _cubic,
        'F(u) = u + u^3 componentwise; y = 0; analytic M1, M2, M3 on B(0, R)',
        frozenset({'R'}),
    ),
    'manufactured': (
        _manufactured,
        'F(u) = A0 (u - y) + b (u - y)^2 with exact y, psi, M2 = 2|b|, M3 = 0',
        frozenset({'lam_min', 'lam_max', 'b', 'psi_norm', 'R'}),
    ),
    'counterexample': (
        _counterexample,
        'F(u) = diag(1/i^2) u - f, f_i = i^-beta; '
        'unsolvable in the limit for beta <= 2.5',
        frozenset({'beta', 'R'}),
    ),
}


def problem_names() -> list[str]:
    return list(_REGISTRY)


def list_problems() -> list[tuple[str, str]]:
    return [(name, entry[1]) for name, entry in _REGISTRY.items()]


def load_problem(spec: ProblemSpec) -> ProblemOp:
    try:
        build, _, allowed = _REGISTRY[spec.name]
    except KeyError:
        raise SpecError(
            f'unknown problem {spec.name!r}; known: {", ".join(_REGISTRY)}'
        ) from None
    if unknown := set(spec.params) - allowed:
        raise SpecError(f'{spec.name}: unknown parameters {sorted(unknown)}')
    op = build(spec)
    logger.debug('loaded %s with n=%d', op.name, op.dim)
    return op


def _read_rows(path: Path) -> list[tuple[int, list[str]]]:
    try:
        text = path.read_text(encoding='utf-8')
    except OSError as e:
        raise InputError(f'cannot read {path}: {e}') from e
    rows = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith('#'):
            continue
        rows.append((lineno, [cell.strip() for cell in line.split(',')]))
    return rows


def load_linear_csv(
    path: str | Path, norm_kind: NormKind = NormKind.L2
) -> ProblemOp:
    """Read an n x n matrix followed by one right-hand-side row.

    Blank lines and lines starting with '#' are skipped.
    """
    path = Path(path)
    rows = _read_rows(path)
    if len(rows) < 2:
        raise ParseError(
            'need a matrix block and a right-hand side row', len(rows) or 1
        )
    width = len(rows[0][1])
    values = []
    for lineno, cells in rows:
        if len(cells) != width:
            raise ParseError(
                f'ragged row: {len(cells)} cells, expected {width}', lineno
            )
        for column, cell in enumerate(cells, 1):
            if NUMBER(cell) is None:
                raise ParseError(f'not a number: {cell!r}', lineno, column)
        values.append([float(cell) for cell in cells])
    if len(rows) - 1 != width:
        raise ParseError(
            f'matrix block is {len(rows) - 1}x{width}, not square', rows[-1][0]
        )
    data = np.array(values)
    return linear_op(data[:-1], data[-1], path.stem, norm_kind)
