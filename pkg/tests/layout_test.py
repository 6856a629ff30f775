from pathlib import Path
from tomllib import loads

from pytest import mark

ROOT = Path(__file__).parent.parent
LINE_LENGTH = loads((ROOT / 'pyproject.toml').read_text(encoding='utf-8'))[
    'tool'
]['ruff']['line-length']
SOURCES = sorted(
    [*ROOT.glob('*.py'), *ROOT.glob('lib/*.py'), *ROOT.glob('tests/*.py')]
)


@mark.parametrize(
    'path', SOURCES, ids=lambda p: p.relative_to(ROOT).as_posix()
)
def test_lines_fit_ruff_line_length(path: Path):
    long = [
        i
        for i, line in enumerate(
            path.read_text(encoding='utf-8').splitlines(), 1
        )
        if len(line) > LINE_LENGTH
    ]
    assert not long, f'lines over {LINE_LENGTH} columns: {long}'
