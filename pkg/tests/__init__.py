from collections.abc import Callable
from json import loads
from pathlib import Path

import numpy as np
from pytest import mark

from lib.operators import ProblemOp
from tests.conftest import RUN_SLOW

FIXTURES = Path(__file__).parent.parent / 'fixtures'

slow = mark.skipif(not RUN_SLOW, reason='slow; set RUN_SLOW=1 to run')


def fixture_json(name: str):
    return loads((FIXTURES / name).read_text(encoding='utf-8'))


def make_op(
    evaluate: Callable,
    dim: int,
    jac: Callable | None = None,
    y=None,
    linear: bool = False,
    radius: float = 10.0,
    name: str = 'test-op',
    **kwargs,
) -> ProblemOp:
    return ProblemOp(
        dim=dim,
        evaluate=evaluate,
        jac=jac,
        center=np.zeros(dim),
        ball_radius=radius,
        known_solution=y,
        linear=linear,
        name=name,
        **kwargs,
    )


def identity_op(dim: int = 2, **kwargs) -> ProblemOp:
    return make_op(
        lambda u: u,
        dim,
        jac=lambda u: np.eye(dim),
        y=np.zeros(dim),
        linear=True,
        name='identity',
        **kwargs,
    )
