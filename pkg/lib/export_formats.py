# lib/export_formats.py
"""Serializers for run artifacts.

Every writer embeds the run configuration: JSON documents under the
"config" key, CSV files as a leading `# {json}` comment line.
"""

import csv
import io
import json
from math import isfinite

import numpy as np

from lib.contraction import ContractionDiagnostics
from lib.flow import DecayReport, FlowTrace
from lib.regpath import ProbeResult, RatePathResult

DIAGNOSTICS_CSV_HEADER = 'eps,r,rho,eta,iters,converged,err'


def to_plain(obj):
    """Recursively convert numpy values to JSON-safe Python values.

    Non-finite floats become None.
    """
    if isinstance(obj, dict):
        return {str(k): to_plain(v) for k, v in obj.items()}
    if isinstance(obj, list | tuple):
        return [to_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_plain(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, float | np.floating):
        obj = float(obj)
        return obj if isfinite(obj) else None
    return obj


def _dumps(d: dict) -> str:
    return json.dumps(to_plain(d), indent=2)


def _csv(config: dict, header: list[str], rows: list[list]) -> str:
    out = io.StringIO()
    out.write('# ' + json.dumps(to_plain(config), sort_keys=True) + '\n')
    writer = csv.writer(out, lineterminator='\n')
    writer.writerow(header)
    writer.writerows(rows)
    return out.getvalue()


def _num(x) -> str:
    return repr(float(x))


def read_csv_config(text: str) -> dict:
    """The configuration embedded in the first line of a CSV artifact."""
    first = text.split('\n', 1)[0]
    if not first.startswith('# '):
        raise ValueError('no embedded configuration line')
    return json.loads(first[2:])


def trace_to_csv(trace: FlowTrace, config: dict) -> str:
    n = trace.w0.size
    header = ['t', 'residual'] + [f'w_{i}' for i in range(n)]
    rows = [
        [_num(t), _num(r), *map(_num, w)]
        for t, r, w in zip(trace.times, trace.residual_norms, trace.states)
    ]
    return _csv(config, header, rows)


def flow_to_json(
    trace: FlowTrace, report: DecayReport | None, config: dict
) -> str:
    return _dumps({
        'config': config,
        'F0': trace.F0,
        'eps': trace.eps,
        'horizon': trace.horizon,
        'final_time': trace.final_time,
        'final_residual': trace.final_residual,
        'reached_target': trace.reached_target,
        'accepted_steps': trace.accepted_steps,
        'rejected_steps': trace.rejected_steps,
        'w0': trace.w0,
        'w_inf': trace.w_inf,
        'times': trace.times,
        'velocity_norms': trace.velocity_norms,
        'decay_report': report.to_dict() if report else None,
    })


def diagnostics_dict(diag: ContractionDiagnostics) -> dict:
    return {
        'eps': diag.eps,
        'M2': diag.M2,
        'M3': diag.M3,
        'bounds_source': diag.bounds_source,
        'psi_norm': diag.psi_norm,
        'r': diag.r,
        'rho': diag.rho,
        'eta': diag.eta,
        'q': diag.q,
        'asymptotic_q': diag.asymptotic_q,
        'self_map': diag.self_map,
        'iterations': diag.iterations,
        'final_step_norm': diag.final_step_norm,
        'observed_ratio': diag.observed_ratio,
        'converged': diag.converged,
        'certified': diag.certified,
        'strict': diag.strict,
        'tolerance': diag.tolerance,
        'residual': diag.residual,
        'error': diag.error,
        'z_star': diag.z_star,
        'v_eps': diag.v_eps,
        'history': diag.history,
    }


def diagnostics_to_json(diag: ContractionDiagnostics, config: dict) -> str:
    return _dumps({'config': config, 'diagnostics': diagnostics_dict(diag)})


def diagnostics_csv_row(diag: ContractionDiagnostics) -> list[str]:
    """Cells of one `eps,r,rho,eta,iters,converged,err` row."""
    return [
        _num(diag.eps),
        _num(diag.r),
        _num(diag.rho),
        _num(diag.eta),
        str(diag.iterations),
        str(diag.converged).lower(),
        _num(diag.error),
    ]


def diagnostics_to_csv(diag: ContractionDiagnostics, config: dict) -> str:
    header = DIAGNOSTICS_CSV_HEADER.split(',')
    return _csv(config, header, [diagnostics_csv_row(diag)])


def path_to_csv(path: RatePathResult, config: dict) -> str:
    header = [
        'eps', 'residual', 'error', 'iters', 'method', 'status',
        'tolerance',
    ]
    rows = [
        [
            _num(r.eps),
            _num(r.residual),
            '' if r.error is None else _num(r.error),
            r.iterations,
            r.method,
            r.status,
            _num(r.tolerance),
        ]
        for r in path.records
    ]
    return _csv(config, header, rows)


def path_to_json(path: RatePathResult, config: dict) -> str:
    return _dumps({
        'config': config,
        'schedule': path.schedule.to_dict(),
        'method': path.method,
        'warm_start': path.warm_start,
        'k_hat': path.k_hat,
        'c_hat': path.c_hat,
        'fit_rms': path.fit_rms,
        'resolvent_fit': (
            path.resolvent_fit.to_dict() if path.resolvent_fit else None
        ),
        'notes': path.notes,
        'records': [
            {
                'eps': r.eps,
                'residual': r.residual,
                'error': r.error,
                'iterations': r.iterations,
                'method': r.method,
                'status': r.status,
                'tolerance': r.tolerance,
                'v': r.v,
            }
            for r in path.records
        ],
    })


def probe_to_json(probe: ProbeResult, config: dict) -> str:
    return _dumps({
        'config': config,
        'verdict': probe.verdict,
        'ratio': probe.ratio,
        'eps': probe.eps,
        'norms': probe.norms,
    })


def check_to_json(results: dict, config: dict) -> str:
    return _dumps({'config': config, **results})
