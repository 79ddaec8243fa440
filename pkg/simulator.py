"""Generates ground-truth factor models and finite-sample data, and runs the MTFA vs. KL-robust spectral experiment"""

import concurrent.futures
import dataclasses
import datetime
import logging
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import humanize
import numpy as np

import consts
import matrix_io
from dual_solver import DualOptions, solve_dual
from errors import RobustFactorError
from estimation import make_tolerance, sample_covariance, sample_size_tolerance
from mtfa_solver import MtfaOptions, singular_value_report, solve_mtfa, spectral_ratio
from recovery import RecoveryOptions, recover
from symmat import SymMat, cholesky_lower, numerical_rank

_DEFAULTS = consts.DEFAULTS['simulator']


@dataclass(frozen=True)
class FactorModelSpec:
    n: int
    r: int
    loading_scale: float = _DEFAULTS['loading_scale']
    noise_range: Tuple[float, float] = _DEFAULTS['noise_range']
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.r < self.n:
            raise ValueError(f'Need 1 <= r < n, got n={self.n}, r={self.r}')
        d_lo, d_hi = self.noise_range
        if not 0 < d_lo <= d_hi:
            raise ValueError(f'Noise range must satisfy 0 < d_lo <= d_hi, got {self.noise_range}')
        if self.loading_scale <= 0:
            raise ValueError(f'Loading scale must be positive, got {self.loading_scale}')


@dataclass(frozen=True)
class GroundTruth:
    A: np.ndarray
    B: np.ndarray
    Sigma: SymMat
    R_true: SymMat
    D_true: SymMat


def _generator(seed):
    # Philox is counter-based, so streams replay identically across platforms
    return np.random.Generator(np.random.Philox(seed))


def generate_model(spec):
    """x = A w_y + B w_z with A_ij ~ N(0, scale^2) and B_ii ~ U(d_lo, d_hi); Sigma = AA^T + BB^T"""
    rng = _generator(spec.seed)
    while True:
        a = rng.standard_normal((spec.n, spec.r)) * spec.loading_scale
        # a rank-deficient draw has probability zero; draw again if it happens
        if np.linalg.matrix_rank(a) == spec.r:
            break
        logging.debug('Degenerate loading matrix drawn, regenerating')
    b = rng.uniform(spec.noise_range[0], spec.noise_range[1], spec.n)
    r_true = SymMat.from_array(a @ a.T)
    d_true = SymMat.diagonal(b ** 2)
    return GroundTruth(A=a, B=np.diag(b), Sigma=r_true + d_true, R_true=r_true, D_true=d_true)


def sample_data(gt, n_samples, seed):
    """n x N matrix whose columns are i.i.d. N(0, Sigma)"""
    if n_samples < 1:
        raise ValueError(f'Need at least one sample, got {n_samples}')
    factor = cholesky_lower(gt.Sigma)
    z = _generator(seed).standard_normal((gt.Sigma.n, n_samples))
    return factor @ z


@dataclass
class SeedOutcome:
    seed: int
    delta: Optional[float] = None
    delta_max: Optional[float] = None
    delta_fraction: Optional[float] = None
    spectra: Dict[str, List[float]] = field(default_factory=dict)
    ranks: Dict[str, int] = field(default_factory=dict)
    ratios: Dict[str, float] = field(default_factory=dict)
    traces: Dict[str, float] = field(default_factory=dict)
    certified: Optional[bool] = None
    sweep: List[Dict[str, float]] = field(default_factory=list)
    error: Optional[str] = None
    seconds: float = 0.0


@dataclass
class ExperimentSettings:
    n_samples: int
    delta_fraction: float = _DEFAULTS['delta_fraction']
    delta_rule: str = 'fraction'
    sweep: Tuple[float, ...] = ()
    report_k: int = _DEFAULTS['report_k']
    rank_rel_tol: float = _DEFAULTS['rank_rel_tol']
    mtfa: MtfaOptions = field(default_factory=MtfaOptions)
    dual: DualOptions = field(default_factory=DualOptions)
    recovery: RecoveryOptions = field(default_factory=RecoveryOptions)


def _data_seed(seed):
    return [seed, 1]


def _spectrum_summary(outcome, label, matrix, k, r, rank_rel_tol):
    values = singular_value_report(matrix, k)
    outcome.spectra[label] = values.tolist()
    outcome.ranks[label] = numerical_rank(matrix, rank_rel_tol)
    outcome.ratios[label] = spectral_ratio(values, r)
    outcome.traces[label] = matrix.trace()


def _robust_decomposition(est, tolerance, settings):
    solution = solve_dual(est, tolerance.delta, settings.dual)
    return solution, recover(solution, est, tolerance.delta, settings.recovery)


def run_seed(spec, seed, settings):
    """MTFA on the true Sigma, MTFA on Sigma_hat and the KL-robust decomposition of Sigma_hat for one seed"""
    started = time.perf_counter()
    outcome = SeedOutcome(seed=seed)
    k = min(settings.report_k, spec.n)
    try:
        gt = generate_model(dataclasses.replace(spec, seed=seed))
        data = sample_data(gt, settings.n_samples, _data_seed(seed))
        est = sample_covariance(data)

        mtfa_true = solve_mtfa(gt.Sigma, settings.mtfa)
        _spectrum_summary(outcome, 'mtfa_true', mtfa_true.R, k, spec.r, settings.rank_rel_tol)
        mtfa_sample = solve_mtfa(est.sigma_hat, settings.mtfa)
        _spectrum_summary(outcome, 'mtfa_sample', mtfa_sample.R, k, spec.r, settings.rank_rel_tol)

        if settings.delta_rule == 'samples':
            tolerance = sample_size_tolerance(est)
        else:
            tolerance = make_tolerance(est, settings.delta_fraction)
        outcome.delta, outcome.delta_max, outcome.delta_fraction = (tolerance.delta, tolerance.delta_max,
                                                                    tolerance.fraction)
        _, dec = _robust_decomposition(est, tolerance, settings)
        _spectrum_summary(outcome, 'robust', dec.R, k, spec.r, settings.rank_rel_tol)
        outcome.certified = dec.certificate.passed

        for fraction in settings.sweep:
            swept_tolerance = make_tolerance(est, fraction)
            _, swept = _robust_decomposition(est, swept_tolerance, settings)
            values = singular_value_report(swept.R, k)
            outcome.sweep.append({
                'fraction': fraction,
                'delta': swept_tolerance.delta,
                'rank': numerical_rank(swept.R, settings.rank_rel_tol),
                'ratio': spectral_ratio(values, spec.r),
                'trace': swept.R.trace(),
            })
    except (RobustFactorError, np.linalg.LinAlgError) as e:
        logging.warning(f'Seed {seed} failed: {type(e).__name__}: {e}')
        outcome.error = f'{type(e).__name__}: {e}'
    outcome.seconds = time.perf_counter() - started
    return outcome


def _median(values):
    values = [v for v in values if v is not None and np.isfinite(v)]
    return statistics.median(values) if values else None


def summarize(outcomes, r):
    succeeded = [o for o in outcomes if o.error is None]
    summary = {
        'n_seeds': len(outcomes),
        'n_failed': len(outcomes) - len(succeeded),
        'median_ratio': {label: _median([o.ratios.get(label) for o in succeeded])
                         for label in ('mtfa_true', 'mtfa_sample', 'robust')},
        'median_rank': {label: _median([o.ranks.get(label) for o in succeeded])
                        for label in ('mtfa_true', 'mtfa_sample', 'robust')},
        'robust_rank_hit_rate': (sum(1 for o in succeeded if o.ranks.get('robust') == r) / len(succeeded)
                                 if succeeded else None),
        'robust_certified_rate': (sum(1 for o in succeeded if o.certified) / len(succeeded)
                                  if succeeded else None),
    }
    return summary


def run_experiment(spec, n_samples, delta_fraction=_DEFAULTS['delta_fraction'], seeds=(0,), jobs=1,
                   settings=None):
    """Per-seed comparison of MTFA(Sigma), MTFA(Sigma_hat) and the KL-robust solution, reduced in seed order"""
    if settings is None:
        settings = ExperimentSettings(n_samples=n_samples, delta_fraction=delta_fraction)
    if min(settings.report_k, spec.n) <= spec.r:
        raise ValueError(f'report_k must exceed r={spec.r} to report sigma_{{r+1}} / sigma_r, got {settings.report_k}')
    seeds = list(seeds)
    logging.info(f'Running experiment: n={spec.n}, r={spec.r}, N={n_samples}, seeds={len(seeds)}, jobs={jobs}')
    started = time.perf_counter()

    outcomes = {}
    if jobs <= 1:
        for seed in seeds:
            outcomes[seed] = run_seed(spec, seed, settings)
    else:
        with concurrent.futures.ThreadPoolExecutor(max_workers=jobs) as executor:
            futures = {executor.submit(run_seed, spec, seed, settings): seed for seed in seeds}
            for future in concurrent.futures.as_completed(futures):
                outcomes[futures[future]] = future.result()
    ordered = [outcomes[seed] for seed in seeds]

    elapsed = time.perf_counter() - started
    logging.info(f'Experiment finished in '
                 f'{humanize.precisedelta(datetime.timedelta(seconds=elapsed), minimum_unit="seconds")}')
    return {
        'version': consts.EXPERIMENT_SCHEMA_VERSION,
        'config': {
            'n': spec.n,
            'r': spec.r,
            'N': n_samples,
            'loading_scale': spec.loading_scale,
            'noise_range': list(spec.noise_range),
            'seeds': seeds,
            'delta_rule': settings.delta_rule,
            'delta_fraction': settings.delta_fraction,
            'sweep': list(settings.sweep),
            'rank_rel_tol': settings.rank_rel_tol,
            'report_k': settings.report_k,
        },
        'seeds': [_outcome_payload(o) for o in ordered],
        'summary': summarize(ordered, spec.r),
        'timings': {
            'total_seconds': elapsed,
            'per_seed_seconds': {str(o.seed): o.seconds for o in ordered},
        },
    }


def _outcome_payload(outcome):
    payload = dataclasses.asdict(outcome)
    del payload['seconds']
    return payload


def write_spectra_csv(report, out_dir):
    """One plot-ready CSV per seed: index and the top singular values of each R"""
    out_dir = Path(out_dir)
    labels = ('mtfa_true', 'mtfa_sample', 'robust')
    for entry in report['seeds']:
        spectra = entry['spectra']
        if not all(label in spectra for label in labels):
            continue
        rows = [(i + 1,) + tuple(spectra[label][i] for label in labels) for i in range(len(spectra['robust']))]
        matrix_io.write_table_csv(out_dir / f'spectra_seed{entry["seed"]}.csv', ('index',) + labels, rows)
    logging.info(f'Spectra written to {out_dir}/')
