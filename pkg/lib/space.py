"""Finite-dimensional normed spaces: vectors, the l1/l2/linf norm family,
the dual pairing, and induced matrix norms.

Vectors are read-only 1-D float arrays. Every function here is pure.
"""

from enum import Enum
from math import sqrt

import numpy as np
from numpy.typing import ArrayLike, NDArray

from lib.commons import InputError, NumericError

Vec = NDArray[np.float64]
Matrix = NDArray[np.float64]

POWER_TOL = 1e-10
POWER_MAX_ITER = 10_000
POWER_BLOCK = 8


class NormKind(Enum):
    L1 = 'l1'
    L2 = 'l2'
    Linf = 'linf'

    @property
    def dual(self) -> 'NormKind':
        return _DUALS[self]

    @property
    def ord(self) -> float:
        """The `ord` argument numpy.linalg.norm expects for this kind."""
        return _ORDS[self]

    @classmethod
    def parse(cls, name: 'str | NormKind') -> 'NormKind':
        if isinstance(name, NormKind):
            return name
        key = name.strip().lower()
        if key in ('inf', 'max'):
            key = 'linf'
        try:
            return cls(key)
        except ValueError:
            raise InputError(f'unknown norm: {name!r}') from None


_DUALS = {
    NormKind.L1: NormKind.Linf,
    NormKind.Linf: NormKind.L1,
    NormKind.L2: NormKind.L2,
}
_ORDS = {NormKind.L1: 1, NormKind.L2: 2, NormKind.Linf: np.inf}


def dual(kind: NormKind) -> NormKind:
    return kind.dual


def as_vec(coords: ArrayLike) -> Vec:
    """Validate `coords` and return them as a read-only vector."""
    v = np.array(coords, dtype=float)
    if v.ndim == 0:
        v = v.reshape(1)
    if v.ndim != 1 or v.size == 0:
        raise InputError(
            f'a vector needs a non-empty flat list, got shape {v.shape}'
        )
    if not np.all(np.isfinite(v)):
        bad = np.flatnonzero(~np.isfinite(v)).tolist()
        raise InputError(f'non-finite coordinates at {bad}')
    v.flags.writeable = False
    return v


def _check_finite(v: NDArray, what: str = 'vector'):
    if not np.all(np.isfinite(v)):
        bad = np.argwhere(~np.isfinite(v)).tolist()
        raise InputError(f'non-finite entries in {what} at {bad}')


def norm(v: ArrayLike, kind: NormKind = NormKind.L2) -> float:
    v = np.asarray(v, dtype=float)
    _check_finite(v)
    return float(np.linalg.norm(v.reshape(-1), kind.ord))


def dual_pair(h: ArrayLike, u: ArrayLike) -> float:
    """Value of the functional h on the element u."""
    h = np.asarray(h, dtype=float)
    u = np.asarray(u, dtype=float)
    if h.shape != u.shape:
        raise InputError(f'dimension mismatch: {h.shape} vs {u.shape}')
    return float(h @ u)


def induced_matrix_norm(M: ArrayLike, kind: NormKind = NormKind.L2) -> float:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise InputError(f'square matrix expected, got shape {M.shape}')
    _check_finite(M, 'matrix')
    if kind is NormKind.L1:
        return float(np.abs(M).sum(axis=0).max())
    if kind is NormKind.Linf:
        return float(np.abs(M).sum(axis=1).max())
    return spectral_norm(M)


def spectral_norm(
    M: Matrix,
    tol: float = POWER_TOL,
    max_iter: int = POWER_MAX_ITER,
    block: int = POWER_BLOCK,
) -> float:
    """Largest singular value of M by block power iteration on G = M^T M.

    The block starts from the normalized all-ones vector and the basis
    vectors of M's largest columns. Each sweep ends with a Rayleigh-Ritz
    step; the leading Ritz pair (theta, x) is accepted once
    ||G x - theta x|| <= tol * theta, so clustered top singular values
    do not stop the iteration early.
    """
    n = M.shape[1]
    col_norms = np.linalg.norm(M, axis=0)
    if not col_norms.any():
        return 0.0
    G = M.T @ M
    p = min(n, block)
    X = np.zeros((n, p))
    X[:, 0] = 1 / sqrt(n)
    largest = np.argsort(-col_norms, kind='stable')[: p - 1]
    X[largest, np.arange(1, p)] = 1.0
    Q = np.linalg.qr(X)[0]
    x = Q[:, 0]
    for _ in range(max_iter):
        Y = G @ Q
        B = Q.T @ Y
        theta, V = np.linalg.eigh((B + B.T) / 2)
        lam = float(theta[-1])
        x = Q @ V[:, -1]
        residual = float(np.linalg.norm(Y @ V[:, -1] - lam * x))
        if lam > 0 and residual <= tol * lam:
            return sqrt(lam)
        Q = np.linalg.qr(Y)[0]
    raise NumericError(
        f'power iteration did not converge in {max_iter} iterations',
        payload=x,
    )


def random_unit(rng: np.random.Generator, n: int, kind: NormKind) -> Vec:
    """Random direction of unit length in the given norm."""
    d = rng.standard_normal(n)
    while not d.any():
        d = rng.standard_normal(n)
    return d / np.linalg.norm(d, kind.ord)


def random_in_ball(
    rng: np.random.Generator, center: Vec, radius: float, kind: NormKind
) -> Vec:
    """Uniform sample from the closed ball B(center, radius) in `kind`."""
    n = center.size
    if kind is NormKind.Linf:
        offset = rng.uniform(-1.0, 1.0, n)
    elif kind is NormKind.L2:
        d = random_unit(rng, n, kind)
        offset = d * rng.uniform() ** (1 / n)
    else:
        # uniform on the simplex with a slack coordinate, then random signs
        e = rng.exponential(size=n + 1)
        offset = e[:n] / e.sum() * rng.choice((-1.0, 1.0), n)
    return center + radius * offset
