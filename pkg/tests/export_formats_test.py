import csv
import io
import json

import numpy as np
from pytest import raises

from lib.contraction import fixed_point_solve, source_condition_solve
from lib.export_formats import (
    DIAGNOSTICS_CSV_HEADER,
    diagnostics_csv_row,
    diagnostics_to_csv,
    diagnostics_to_json,
    flow_to_json,
    path_to_csv,
    path_to_json,
    read_csv_config,
    to_plain,
    trace_to_csv,
)
from lib.flow import FlowConfig, decay_report, integrate_dsm
from lib.operators import RegParams
from lib.problems import ProblemSpec, load_problem
from lib.regpath import EpsSchedule, PathRecord, RatePathResult

CONFIG = {'command': 'test', 'eps': 0.1, 'params': {'lam': [1.0, 0.5]}}


def rows(text: str) -> list[list[str]]:
    return list(csv.reader(io.StringIO(text.split('\n', 1)[1])))


def test_to_plain():
    d = to_plain({
        'a': np.array([1.0, np.inf]),
        'b': np.float64(0.5),
        'c': np.int64(3),
        'd': np.bool_(True),
        'e': (float('nan'),),
    })
    assert d == {'a': [1.0, None], 'b': 0.5, 'c': 3, 'd': True, 'e': [None]}
    assert type(d['c']) is int


def test_read_csv_config():
    text = '# {"eps": 0.1}\nt,residual\n'
    assert read_csv_config(text) == {'eps': 0.1}
    with raises(ValueError):
        read_csv_config('t,residual\n')


def test_trace_csv():
    F = load_problem(ProblemSpec('cubic', 2))
    trace = integrate_dsm(F, [1.0, 0.5], FlowConfig(RegParams(0.1)))
    text = trace_to_csv(trace, CONFIG)
    assert read_csv_config(text) == CONFIG
    table = rows(text)
    assert table[0] == ['t', 'residual', 'w_0', 'w_1']
    assert len(table) - 1 == len(trace.times)
    # repr round-trips floats exactly
    assert float(table[-1][1]) == trace.final_residual
    assert float(table[-1][0]) == trace.final_time
    assert [float(x) for x in table[1][2:]] == [1.0, 0.5]


def test_trace_csv_cells_are_plain_numbers():
    F = load_problem(ProblemSpec('cubic', 1))
    trace = integrate_dsm(F, [1.0], FlowConfig(RegParams(0.1), 60, 1e-6))
    assert all(type(t) is float for t in trace.times)
    # numpy scalars must not leak into the cells as 'np.float64(...)'
    trace.times[1] = np.float64(trace.times[1])
    trace.residual_norms[1] = np.float64(trace.residual_norms[1])
    for row in rows(trace_to_csv(trace, CONFIG))[1:]:
        assert len(row) == 3
        for cell in row:
            float(cell)


def test_flow_json():
    F = load_problem(ProblemSpec('linear-diag'))
    reg = RegParams(0.1)
    trace = integrate_dsm(F, F.center, FlowConfig(reg))
    doc = json.loads(flow_to_json(trace, decay_report(F, trace, reg), CONFIG))
    assert doc['config'] == CONFIG
    assert doc['reached_target'] is True
    assert len(doc['w_inf']) == 2
    assert doc['decay_report']['tail_violations'] == 0
    assert len(doc['velocity_norms']) == len(doc['times'])
    assert doc['velocity_norms'] == trace.velocity_norms


def diagnostics():
    F = load_problem(ProblemSpec('linear-diag'))
    y = F.known_solution
    psi = source_condition_solve(F, y)[0]
    return fixed_point_solve(F, y, psi, RegParams(0.1))


def test_diagnostics_csv_row():
    diag = diagnostics()
    cells = diagnostics_csv_row(diag)
    assert DIAGNOSTICS_CSV_HEADER == 'eps,r,rho,eta,iters,converged,err'
    assert len(cells) == 7
    assert cells[0] == '0.1'
    assert cells[4] == str(diag.iterations)
    assert cells[5] == 'true'
    assert float(cells[6]) == diag.error


def test_diagnostics_csv_embeds_config():
    diag = diagnostics()
    text = diagnostics_to_csv(diag, CONFIG)
    assert read_csv_config(text) == CONFIG
    table = rows(text)
    assert ','.join(table[0]) == DIAGNOSTICS_CSV_HEADER
    assert len(table) == 2
    assert float(table[1][3]) == diag.eta


def test_diagnostics_json():
    doc = json.loads(diagnostics_to_json(diagnostics(), CONFIG))
    d = doc['diagnostics']
    assert d['certified'] is True
    assert d['bounds_source'] == 'analytic'
    assert d['rho'] == 0.0
    assert doc['config'] == CONFIG


def path_result():
    records = [
        PathRecord(0.1, np.array([0.9, 0.8]), 1e-11, 0.2, 12, 'flow', 1e-10),
        PathRecord(
            0.01, None, float('nan'), None, 0, 'flow', 1e-10, 'failed: budget'
        ),
    ]
    return RatePathResult(records, EpsSchedule(0.1, 0.1, 3), 'flow')


def test_path_csv_leaves_missing_errors_empty():
    table = rows(path_to_csv(path_result(), CONFIG))
    assert table[0] == [
        'eps', 'residual', 'error', 'iters', 'method', 'status', 'tolerance',
    ]
    assert table[1][2] == '0.2'
    assert table[2][2] == ''
    assert table[2][5] == 'failed: budget'


def test_path_csv_writes_numpy_scalars_as_floats():
    records = [
        PathRecord(
            np.float64(0.1), np.array([0.9]), np.float64(1e-11),
            np.float64(0.2), 12, 'flow', np.float64(1e-10),
        ),
    ]
    result = RatePathResult(records, EpsSchedule(0.1, 0.1, 3), 'flow')
    table = rows(path_to_csv(result, CONFIG))
    assert table[1][:3] == ['0.1', '1e-11', '0.2']
    assert table[1][6] == '1e-10'


def test_path_json_has_null_for_non_finite():
    doc = json.loads(path_to_json(path_result(), CONFIG))
    assert doc['records'][1]['residual'] is None
    assert doc['records'][1]['v'] is None
    assert doc['records'][0]['v'] == [0.9, 0.8]
    assert doc['k_hat'] is None
    assert doc['schedule'] == {
        'eps_start': 0.1, 'factor': 0.1, 'count': 3, 'eps0': 1.0,
    }
