"""Reads and writes matrices as CSV and results as JSON; every write goes through a temp file and an atomic rename"""

import csv
import json
import logging
import math
import os
import tempfile
from pathlib import Path

import numpy as np

import consts
from errors import AsymmetryError, ParseError, ResultWriteError
from symmat import SymMat

SCHEMA_PATH = Path(__file__).resolve().parent / 'result_schema.json'


def _atomic_write_text(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f'.{path.name}.', suffix='.tmp', dir=path.parent)
    try:
        with os.fdopen(fd, 'w', encoding='utf-8', newline='') as f:
            f.write(text)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp_name, path)
    except OSError as e:
        if os.path.exists(tmp_name):
            os.remove(tmp_name)
        raise ResultWriteError(f'Could not write {path}: {e}') from e
    except BaseException:
        if os.path.exists(tmp_name):
            os.remove(tmp_name)
        raise
    logging.debug(f'Wrote {path}')


def read_matrix_csv(path, symmetric=False, asymmetry_tol=consts.DEFAULTS['estimation']['asymmetry_tol']):
    """Parses a CSV of finite reals; with `symmetric`, small asymmetry is averaged away and a SymMat returned"""
    rows = []
    try:
        with open(path, newline='', encoding='utf-8') as f:
            for row_number, row in enumerate(csv.reader(f), start=1):
                if not row or all(not cell.strip() for cell in row):
                    continue
                values = []
                for column_number, cell in enumerate(row, start=1):
                    try:
                        value = float(cell.strip())
                    except ValueError:
                        raise ParseError(f'"{cell}" is not a number', path, row_number, column_number) from None
                    if not math.isfinite(value):
                        raise ParseError(f'"{cell}" is not finite', path, row_number, column_number)
                    values.append(value)
                if rows and len(values) != len(rows[0]):
                    raise ParseError(f'expected {len(rows[0])} columns, found {len(values)}', path, row_number,
                                     len(values))
                rows.append(values)
    except UnicodeDecodeError as e:
        raise ParseError(f'not UTF-8 text ({e.reason})', path) from e
    except OSError as e:
        raise ParseError(f'cannot read file: {e}', path) from e

    if not rows:
        raise ParseError('file contains no data', path)
    matrix = np.array(rows, dtype=float)
    if not symmetric:
        return matrix

    if matrix.shape[0] != matrix.shape[1]:
        raise ParseError(f'expected a square matrix, got {matrix.shape[0]}x{matrix.shape[1]}', path)
    asymmetry = float(np.max(np.abs(matrix - matrix.T)))
    scale = max(float(np.max(np.abs(matrix))), np.finfo(float).tiny)
    if asymmetry > asymmetry_tol * scale:
        raise AsymmetryError(f'{path}: matrix is not symmetric (max |M - M^T| = {asymmetry:.3e})')
    if asymmetry > 0:
        logging.debug(f'{path}: symmetrizing away asymmetry {asymmetry:.3e}')
    return SymMat.symmetrized(matrix)


def read_data_csv(path):
    """Rows are observations and columns variables; returns the n x N data matrix"""
    return read_matrix_csv(path).T


def _format_row(values):
    return ','.join(format(float(v), '.17g') for v in values)


def write_matrix_csv(path, matrix):
    array = matrix.array if isinstance(matrix, SymMat) else np.atleast_2d(np.asarray(matrix, dtype=float))
    text = '\n'.join(_format_row(row) for row in array) + '\n'
    _atomic_write_text(path, text)


def write_table_csv(path, header, rows):
    lines = [','.join(header)]
    for row in rows:
        lines.append(','.join(str(v) if isinstance(v, (int, np.integer)) else format(float(v), '.17g') for v in row))
    _atomic_write_text(path, '\n'.join(lines) + '\n')


def to_jsonable(value):
    if isinstance(value, SymMat):
        return to_jsonable(value.array)
    if isinstance(value, np.ndarray):
        return [to_jsonable(v) for v in value.tolist()]
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


def write_json(path, payload):
    text = json.dumps(to_jsonable(payload), indent=2, sort_keys=True, allow_nan=False) + '\n'
    _atomic_write_text(path, text)


def read_json(path):
    try:
        with open(path, encoding='utf-8') as f:
            return json.load(f)
    except UnicodeDecodeError as e:
        raise ParseError(f'not UTF-8 text ({e.reason})', path) from e
    except json.JSONDecodeError as e:
        raise ParseError(f'invalid JSON: {e.msg}', path, e.lineno, e.colno) from e
    except OSError as e:
        raise ParseError(f'cannot read file: {e}', path) from e


def load_schema():
    with open(SCHEMA_PATH, encoding='utf-8') as f:
        return json.load(f)


def build_result_payload(dec, sol, report, tolerance, config_echo=None, timings=None):
    return {
        'version': consts.RESULT_SCHEMA_VERSION,
        'config_echo': config_echo or {},
        'delta': tolerance.delta,
        'delta_max': tolerance.delta_max,
        'delta_fraction': tolerance.fraction,
        'lambda_star': sol.point.lam,
        'objective': sol.objective,
        'dual_value': sol.dual_value,
        'converged': sol.converged,
        'iterations': sol.iterations,
        'grad_norm': sol.grad_norm,
        'duality_gap': report.raw['gap'],
        'kkt': {'c1': report.c1, 'c2': report.c2, 'c3': report.c3},
        'boundary_residual': report.raw['boundary'],
        'certified': report.passed,
        'rank_R': dec.rank_R,
        'kernel_dim': dec.kernel_dim,
        'non_unique': dec.non_unique,
        'trace_R': dec.R.trace(),
        'spectra': {
            'R': np.sort(np.abs(np.linalg.eigvalsh(dec.R.array)))[::-1],
            'Lambda': dec.lambda_spectrum,
        },
        'matrices': {
            'Sigma': dec.Sigma,
            'R': dec.R,
            'D': dec.D,
            'X': sol.point.X,
            'Theta': sol.theta,
            'Gamma': sol.gamma,
        },
        'timings': timings or {},
    }


def emit_result_json(dec, sol, report, path, tolerance, config_echo=None, timings=None):
    payload = build_result_payload(dec, sol, report, tolerance, config_echo, timings)
    write_json(path, payload)
    logging.info(f'Result written to {path}')
    return payload


def write_decomposition_csv(out_dir, dec, sol):
    out_dir = Path(out_dir)
    write_matrix_csv(out_dir / 'sigma_star.csv', dec.Sigma)
    write_matrix_csv(out_dir / 'R.csv', dec.R)
    write_matrix_csv(out_dir / 'D.csv', dec.D)
    write_matrix_csv(out_dir / 'X.csv', sol.point.X)
    write_matrix_csv(out_dir / 'theta.csv', sol.theta)
    write_matrix_csv(out_dir / 'gamma.csv', sol.gamma)
    if dec.loadings.shape[1] > 0:
        write_matrix_csv(out_dir / 'loadings.csv', dec.loadings)
    logging.info(f'Matrices written to {out_dir}/')
