"""One handler per CLI subcommand. Each takes the validated RunConfig, runs its part of the pipeline and
returns the payload it wrote (or would have written) as JSON"""

import dataclasses
import datetime
import logging
import time
from pathlib import Path

import humanize

import consts
import matrix_io
import simulator
from dual_solver import DualOptions, solve_dual
from errors import ParseError
from estimation import (CovarianceEstimate, delta_max, make_tolerance, sample_covariance, sample_size_tolerance,
                        tolerance_from_delta)
from mtfa_solver import MtfaOptions, mtfa_certificate, singular_value_report, solve_mtfa
from recovery import RecoveryOptions, primal_problem_residuals, recover
from symmat import SymMat, numerical_rank


class _Stopwatch:
    def __init__(self):
        self.timings = {}

    def time(self, label, func, *args, **kwargs):
        started = time.perf_counter()
        result = func(*args, **kwargs)
        self.timings[f'{label}_seconds'] = time.perf_counter() - started
        return result

    def total(self):
        return sum(self.timings.values())

    def describe(self):
        return humanize.precisedelta(datetime.timedelta(seconds=self.total()), minimum_unit='milliseconds')


def config_echo(config):
    echo = {}
    for key, value in dataclasses.asdict(config).items():
        if value is None or key == 'verbosity':
            continue
        echo[key] = str(value) if isinstance(value, Path) else value
    return echo


def load_estimate(config):
    """Sigma_hat either read directly (--sigma-hat) or estimated from an observations CSV (--input)"""
    if config.sigma_hat is not None:
        sigma_hat = matrix_io.read_matrix_csv(config.sigma_hat, symmetric=True)
        if config.ridge:
            sigma_hat = sigma_hat + SymMat.identity(sigma_hat.n) * config.ridge
        logging.info(f'Read {sigma_hat.n}x{sigma_hat.n} sample covariance from {config.sigma_hat}')
        return CovarianceEstimate.from_sigma_hat(sigma_hat, n_samples=config.n_samples)
    data = matrix_io.read_data_csv(config.input)
    logging.info(f'Read {data.shape[1]} observations of {data.shape[0]} variables from {config.input}')
    return sample_covariance(data, center=config.center, unbiased=config.unbiased, ridge=config.ridge)


def _tolerance(config, est):
    if config.delta is not None:
        return tolerance_from_delta(est, config.delta)
    if config.delta_rule == 'samples':
        return sample_size_tolerance(est)
    fraction = config.delta_fraction if config.delta_fraction is not None else consts.DEFAULTS['estimation'][
        'delta_fraction']
    return make_tolerance(est, fraction)


def handle_delta_max(config):
    est = load_estimate(config)
    result = delta_max(est)
    # both conventions: delta_max is twice the minimal divergence from a diagonal covariance
    logging.info(f'delta_max = {result.delta_max:.12g} (minimal D_KL to a diagonal covariance = '
                 f'{0.5 * result.delta_max:.12g})')
    payload = {
        'version': consts.RESULT_SCHEMA_VERSION,
        'config_echo': config_echo(config),
        'n': est.n,
        'delta_max': result.delta_max,
        'min_kl_diagonal': 0.5 * result.delta_max,
        'sigma_d_diagonal': result.sigma_d.diag(),
    }
    if config.out is not None:
        matrix_io.write_json(config.out, payload)
    return payload


def handle_mtfa(config):
    sigma = matrix_io.read_matrix_csv(config.input, symmetric=True)
    opts = MtfaOptions(strict=config.strict)
    if config.tol is not None:
        opts.tol = config.tol
    if config.max_iter is not None:
        opts.max_iter = config.max_iter
    stopwatch = _Stopwatch()
    solution = stopwatch.time('solve', solve_mtfa, sigma, opts)
    certificate = mtfa_certificate(solution)
    k = min(config.report_k, sigma.n)
    values = singular_value_report(solution.R, k)
    logging.info(f'MTFA: tr(R)={solution.trace_R:.10g}, rank(R)={numerical_rank(solution.R)}, '
                 f'certified={certificate["passed"]} ({stopwatch.describe()})')

    payload = {
        'version': consts.RESULT_SCHEMA_VERSION,
        'config_echo': config_echo(config),
        'trace_R': solution.trace_R,
        'rank_R': numerical_rank(solution.R),
        'R': solution.R,
        'D': solution.D.diag(),
        'singular_values': values,
        'iterations': solution.iterations,
        'converged': solution.converged,
        'residuals': {'primal': solution.primal_residual, 'dual': solution.dual_residual},
        'certificate': certificate,
        'timings': stopwatch.timings,
    }
    if config.output is not None:
        matrix_io.write_matrix_csv(Path(config.output) / 'R.csv', solution.R)
        matrix_io.write_matrix_csv(Path(config.output) / 'D.csv', solution.D)
    if config.out is not None:
        matrix_io.write_json(config.out, payload)
    return payload


def handle_robust(config):
    stopwatch = _Stopwatch()
    est = stopwatch.time('estimate', load_estimate, config)
    tolerance = _tolerance(config, est)
    logging.info(f'Tolerance: delta={tolerance.delta:.8g} ({tolerance.fraction:.3g} of delta_max='
                 f'{tolerance.delta_max:.8g})')

    dual_opts = DualOptions(strict=config.strict, record_trace=config.trace is not None)
    if config.tol is not None:
        dual_opts.tol = config.tol
    if config.max_iter is not None:
        dual_opts.max_iter = config.max_iter
    solution = stopwatch.time('dual', solve_dual, est, tolerance.delta, dual_opts)

    recovery_opts = RecoveryOptions()
    if config.kernel_rel_tol is not None:
        recovery_opts.kernel_rel_tol = config.kernel_rel_tol
    decomposition = stopwatch.time('recovery', recover, solution, est, tolerance.delta, recovery_opts)
    residuals = primal_problem_residuals(decomposition, est, tolerance.delta)
    logging.debug(f'Primal residuals: {residuals}')
    logging.info(f'Robust factor analysis finished in {stopwatch.describe()}: rank(R*)={decomposition.rank_R}, '
                 f'tr(R*)={decomposition.R.trace():.10g}, lambda*={solution.point.lam:.8g}')

    if config.trace is not None:
        matrix_io.write_table_csv(config.trace, ('iteration', 'objective', 'lambda', 'measure', 'step'),
                                  solution.trace)
    if config.output is not None:
        matrix_io.write_decomposition_csv(config.output, decomposition, solution)
    if config.out is not None:
        return matrix_io.emit_result_json(decomposition, solution, decomposition.certificate, config.out, tolerance,
                                          config_echo(config), stopwatch.timings)
    return matrix_io.build_result_payload(decomposition, solution, decomposition.certificate, tolerance,
                                          config_echo(config), stopwatch.timings)


def handle_simulate(config):
    spec = simulator.FactorModelSpec(n=config.n, r=config.r, loading_scale=config.loading_scale,
                                     noise_range=tuple(config.noise_range))
    settings = simulator.ExperimentSettings(n_samples=config.n_samples,
                                            delta_fraction=config.delta_fraction or consts.DEFAULTS['simulator'][
                                                'delta_fraction'],
                                            delta_rule=config.delta_rule,
                                            sweep=tuple(config.sweep),
                                            report_k=min(config.report_k, config.n),
                                            mtfa=MtfaOptions(strict=config.strict),
                                            dual=DualOptions(strict=config.strict))
    if config.tol is not None:
        settings.dual.tol = config.tol
    report = simulator.run_experiment(spec, config.n_samples, seeds=config.seeds, jobs=config.jobs,
                                      settings=settings)
    summary = report['summary']
    logging.info(f'Median sigma_(r+1)/sigma_r: {summary["median_ratio"]}')
    logging.info(f'Robust rank hit rate: {summary["robust_rank_hit_rate"]}, '
                 f'failed seeds: {summary["n_failed"]}/{summary["n_seeds"]}')
    if config.out is not None:
        matrix_io.write_json(config.out, report)
    if config.output is not None:
        simulator.write_spectra_csv(report, config.output)
    return report


def _format_values(values, k=5):
    shown = ', '.join('-' if v is None else f'{v:.4g}' for v in values[:k])
    return f'[{shown}{", ..." if len(values) > k else ""}]'


def _summarize_result(payload):
    logging.info(f'Robust result (schema {payload["version"]}): delta={payload.get("delta")}, '
                 f'lambda*={payload["lambda_star"]:.8g}, objective={payload["objective"]:.10g}')
    logging.info(f'rank(R*)={payload["rank_R"]}, duality gap={payload["duality_gap"]:.3e}, '
                 f'boundary residual={payload["boundary_residual"]:.3e}, certified={payload.get("certified")}')
    kkt = payload['kkt']
    logging.info(f'KKT residuals: c1={kkt["c1"]:.3e}, c2={kkt["c2"]:.3e}, c3={kkt["c3"]:.3e}')
    logging.info(f'Top singular values of R*: {_format_values(payload["spectra"]["R"])}')
    logging.info(f'Smallest eigenvalues of Lambda: {_format_values(payload["spectra"]["Lambda"][::-1])}')


def _summarize_experiment(payload):
    config = payload['config']
    summary = payload['summary']
    logging.info(f'Experiment (schema {payload["version"]}): n={config["n"]}, r={config["r"]}, N={config["N"]}, '
                 f'{summary["n_seeds"]} seeds, {summary["n_failed"]} failed')
    for label in ('mtfa_true', 'mtfa_sample', 'robust'):
        logging.info(f'{label}: median ratio {summary["median_ratio"][label]}, '
                     f'median rank {summary["median_rank"][label]}')
    logging.info(f'Robust rank hit rate {summary["robust_rank_hit_rate"]}, '
                 f'certified rate {summary["robust_certified_rate"]}')
    for entry in payload['seeds']:
        if entry.get('error'):
            logging.warning(f'Seed {entry["seed"]}: {entry["error"]}')


def _summarize_mtfa(payload):
    logging.info(f'MTFA result: tr(R)={payload["trace_R"]:.10g}, rank(R)={payload["rank_R"]}, '
                 f'converged={payload["converged"]}, certified={payload["certificate"]["passed"]}')
    logging.info(f'Top singular values of R: {_format_values(payload["singular_values"])}')


def _summarize_delta_max(payload):
    logging.info(f'delta_max={payload["delta_max"]:.12g}, minimal divergence={payload["min_kl_diagonal"]:.12g}')


def handle_report(config):
    payload = matrix_io.read_json(config.input)
    if not isinstance(payload, dict) or 'version' not in payload:
        raise ParseError('not a result file (missing "version")', config.input)
    if 'summary' in payload and 'seeds' in payload:
        _summarize_experiment(payload)
    elif 'lambda_star' in payload:
        _summarize_result(payload)
    elif 'singular_values' in payload:
        _summarize_mtfa(payload)
    elif 'delta_max' in payload:
        _summarize_delta_max(payload)
    else:
        raise ParseError('unrecognized result layout', config.input)
    return payload


HANDLERS = {
    'delta-max': handle_delta_max,
    'mtfa': handle_mtfa,
    'robust': handle_robust,
    'simulate': handle_simulate,
    'report': handle_report,
}
