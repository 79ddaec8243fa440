"""Main entry point of the program"""

import argparse
import logging
import os
import sys
from dataclasses import dataclass, field
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import List, Optional, Tuple

import toml
from dotenv import load_dotenv

import consts
from command_handlers import HANDLERS
from errors import EXIT_OK, EXIT_SOLVER_FAILURE, RobustFactorError, UsageError

LOG_FORMAT = '%(asctime)-15s - %(name)s - %(levelname)s - %(message)s'

_TRUTHY = ('y', 'yes', 't', 'true', 'on', '1')
_FALSY = ('n', 'no', 'f', 'false', 'off', '0', '')


def env_flag(name, default=False):
    value = os.environ.get(name)
    if value is None:
        return default
    value = value.strip().lower()
    if value in _TRUTHY:
        return True
    if value in _FALSY:
        return False
    raise UsageError(f'Environment variable {name} has invalid boolean value "{value}"')


def configure_logging(verbosity=0):
    level_name = os.environ.get('RF_LOG', 'INFO').upper()
    level = logging.getLevelName(level_name)
    if not isinstance(level, int):
        level = logging.INFO
    if verbosity >= 1:
        level = logging.DEBUG

    handlers = [logging.StreamHandler()]
    log_file = os.environ.get('RF_LOG_FILE')
    if log_file:
        file_handler = RotatingFileHandler(log_file, mode='a', delay=True,
                                           maxBytes=5 * 1024 * 1024,
                                           backupCount=1, encoding='utf-8')
        handlers.append(file_handler)

    logging.basicConfig(format=LOG_FORMAT, level=level, handlers=handlers, force=True)


@dataclass
class RunConfig:
    command: Optional[str] = None
    input: Optional[Path] = None
    sigma_hat: Optional[Path] = None
    out: Optional[Path] = None
    output: Optional[Path] = None
    trace: Optional[Path] = None
    delta: Optional[float] = None
    delta_fraction: Optional[float] = None
    delta_rule: str = 'fraction'
    tol: Optional[float] = None
    max_iter: Optional[int] = None
    kernel_rel_tol: Optional[float] = None
    report_k: int = consts.DEFAULTS['mtfa']['report_k']
    ridge: float = 0.0
    center: bool = False
    unbiased: bool = False
    n_samples: Optional[int] = None
    strict: bool = False
    n: Optional[int] = None
    r: Optional[int] = None
    seeds: List[int] = field(default_factory=list)
    jobs: int = 1
    sweep: List[float] = field(default_factory=list)
    loading_scale: float = consts.DEFAULTS['simulator']['loading_scale']
    noise_range: Tuple[float, float] = consts.DEFAULTS['simulator']['noise_range']
    verbosity: int = 0
    print_defaults: bool = False


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f'{self.prog}: {message}')


def parse_seeds(text):
    """'0..19' (inclusive), '1,4,7' or a single integer"""
    try:
        if '..' in text:
            first, last = (int(part) for part in text.split('..', 1))
            if last < first:
                raise UsageError(f'Seed range {text} is empty')
            return list(range(first, last + 1))
        return [int(part) for part in text.split(',') if part.strip()]
    except ValueError:
        raise UsageError(f'Cannot parse seeds "{text}"; use e.g. 0..19 or 1,4,7') from None


def _parse_fractions(text):
    try:
        return [float(part) for part in text.split(',') if part.strip()]
    except ValueError:
        raise UsageError(f'Cannot parse fractions "{text}"; use e.g. 0.1,0.5,0.9') from None


def _add_common(parser):
    parser.add_argument('-v', '--verbose', dest='verbosity', action='count', default=0,
                        help='log solver progress at DEBUG level')
    parser.add_argument('--out', type=Path, help='JSON file for the result')
    parser.add_argument('--output', type=Path, help='directory for CSV matrices / spectra')


def _add_estimate_source(parser):
    parser.add_argument('--input', type=Path, help='CSV of observations, one row per sample')
    parser.add_argument('--sigma-hat', type=Path, help='CSV of a precomputed sample covariance')
    parser.add_argument('--n-samples', type=int, help='sample count behind --sigma-hat (for --delta-rule samples)')
    parser.add_argument('--center', action='store_true', help='subtract the sample mean before estimating')
    parser.add_argument('--unbiased', action='store_true', help='divide by N-1 instead of N')
    parser.add_argument('--ridge', type=float, default=0.0, help='add ridge * I to the sample covariance')


def build_parser():
    parser = _ArgumentParser(prog='robust_factor_analysis', allow_abbrev=False,
                             formatter_class=argparse.ArgumentDefaultsHelpFormatter,
                             description='Factor analysis of a sample covariance with a Kullback-Leibler '
                                         'uncertainty ball around it')
    parser.add_argument('--print-defaults', action='store_true', help='print the default tolerance table as TOML')
    subparsers = parser.add_subparsers(dest='command', parser_class=_ArgumentParser)

    dm = subparsers.add_parser('delta-max', help='largest useful tolerance for a sample covariance',
                               formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    _add_estimate_source(dm)
    _add_common(dm)

    mtfa = subparsers.add_parser('mtfa', help='minimum trace factor analysis of a covariance matrix',
                                 formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    mtfa.add_argument('--input', type=Path, required=True, help='CSV of the covariance matrix')
    mtfa.add_argument('--tol', type=float, help=f'stopping tolerance (default {consts.DEFAULTS["mtfa"]["tol"]})')
    mtfa.add_argument('--max-iter', type=int,
                      help=f'iteration cap (default {consts.DEFAULTS["mtfa"]["max_iter"]})')
    mtfa.add_argument('--report-k', type=int, default=consts.DEFAULTS['mtfa']['report_k'],
                      help='number of singular values to report')
    mtfa.add_argument('--strict', action='store_true', help='fail instead of returning a non-converged solution')
    _add_common(mtfa)

    robust = subparsers.add_parser('robust', help='KL-robust factor analysis through the dual problem',
                                   formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    _add_estimate_source(robust)
    robust.add_argument('--delta', type=float, help='tolerance of the divergence ball')
    robust.add_argument('--delta-fraction', type=float,
                        help=f'tolerance as a fraction of delta_max '
                             f'(default {consts.DEFAULTS["estimation"]["delta_fraction"]})')
    robust.add_argument('--delta-rule', choices=('fraction', 'samples'), default='fraction',
                        help='"samples" sets delta = n(n+1)/(2N)')
    robust.add_argument('--tol', type=float, help=f'stopping tolerance (default {consts.DEFAULTS["dual"]["tol"]})')
    robust.add_argument('--max-iter', type=int,
                        help=f'iteration cap (default {consts.DEFAULTS["dual"]["max_iter"]})')
    robust.add_argument('--kernel-rel-tol', type=float,
                        help=f'relative kernel threshold for Lambda '
                             f'(default {consts.DEFAULTS["recovery"]["kernel_rel_tol"]})')
    robust.add_argument('--trace', type=Path, help='CSV file for the solver iteration trace')
    robust.add_argument('--strict', action='store_true', help='fail instead of returning a non-converged solution')
    _add_common(robust)

    sim = subparsers.add_parser('simulate', help='Monte Carlo comparison of MTFA and the robust solution',
                                formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    sim.add_argument('--n', type=int, required=True, help='number of variables')
    sim.add_argument('--r', type=int, required=True, help='number of factors')
    sim.add_argument('--N', dest='n_samples', type=int, required=True, help='samples per seed')
    sim.add_argument('--seeds', type=parse_seeds, default=[0], help='e.g. 0..19 or 1,4,7')
    sim.add_argument('--jobs', type=int, default=1, help='seeds solved in parallel')
    sim.add_argument('--delta-fraction', type=float, default=consts.DEFAULTS['simulator']['delta_fraction'],
                     help='tolerance as a fraction of delta_max')
    sim.add_argument('--delta-rule', choices=('fraction', 'samples'), default='fraction')
    sim.add_argument('--sweep', type=_parse_fractions, default=[],
                     help='extra delta fractions to solve per seed, e.g. 0.1,0.3,0.5,0.7,0.9')
    sim.add_argument('--loading-scale', type=float, default=consts.DEFAULTS['simulator']['loading_scale'])
    sim.add_argument('--noise-range', type=float, nargs=2, metavar=('LO', 'HI'),
                     default=list(consts.DEFAULTS['simulator']['noise_range']))
    sim.add_argument('--report-k', type=int, default=consts.DEFAULTS['simulator']['report_k'])
    sim.add_argument('--tol', type=float, help='dual solver stopping tolerance')
    sim.add_argument('--strict', action='store_true')
    _add_common(sim)

    report = subparsers.add_parser('report', help='summarize a result or experiment JSON file')
    report.add_argument('--input', type=Path, required=True, help='JSON written by robust, mtfa or simulate')
    report.add_argument('-v', '--verbose', dest='verbosity', action='count', default=0)
    return parser


def _require_existing(path, flag):
    if path is not None and not path.exists():
        raise UsageError(f'{flag} {path}: no such file')


def _validate(config):
    if config.print_defaults:
        return
    if config.command is None:
        raise UsageError('A command is required: delta-max, mtfa, robust, simulate or report')

    if config.command in ('delta-max', 'robust'):
        if (config.input is None) == (config.sigma_hat is None):
            raise UsageError(f'{config.command} needs exactly one of --input (observations) and --sigma-hat')
        if config.ridge < 0:
            raise UsageError(f'--ridge must be nonnegative, got {config.ridge}')
    if config.command == 'robust':
        chosen = [flag for flag, given in (('--delta', config.delta is not None),
                                           ('--delta-fraction', config.delta_fraction is not None),
                                           ('--delta-rule samples', config.delta_rule == 'samples')) if given]
        if len(chosen) > 1:
            raise UsageError(f'{" and ".join(chosen)} are mutually exclusive')
        if config.delta is not None and config.delta <= 0:
            raise UsageError(f'--delta must be positive, got {config.delta}')
        if config.delta_fraction is not None and not 0 < config.delta_fraction < 1:
            raise UsageError(f'--delta-fraction must lie in (0, 1), got {config.delta_fraction}')
        if config.delta_rule == 'samples' and config.sigma_hat is not None and config.n_samples is None:
            raise UsageError('--delta-rule samples with --sigma-hat needs --n-samples')
    if config.command == 'simulate':
        if config.n is None or config.r is None or not 1 <= config.r < config.n:
            raise UsageError(f'simulate needs 1 <= --r < --n, got n={config.n}, r={config.r}')
        if config.report_k <= config.r:
            raise UsageError(f'--report-k must exceed --r to report sigma_{{r+1}} / sigma_r, got {config.report_k}')
        if config.loading_scale <= 0:
            raise UsageError(f'--loading-scale must be positive, got {config.loading_scale}')
        if config.n_samples < 1:
            raise UsageError(f'--N must be positive, got {config.n_samples}')
        if not config.seeds:
            raise UsageError('--seeds selects no seed')
        if config.jobs < 1:
            raise UsageError(f'--jobs must be at least 1, got {config.jobs}')
        if not 0 < config.delta_fraction < 1 or any(not 0 < f < 1 for f in config.sweep):
            raise UsageError('delta fractions must lie in (0, 1)')
        if not 0 < config.noise_range[0] <= config.noise_range[1]:
            raise UsageError(f'--noise-range must satisfy 0 < LO <= HI, got {config.noise_range}')
    if config.report_k < 1:
        raise UsageError(f'--report-k must be positive, got {config.report_k}')
    if config.max_iter is not None and config.max_iter < 1:
        raise UsageError(f'--max-iter must be at least 1, got {config.max_iter}')
    for flag in ('tol', 'kernel_rel_tol'):
        value = getattr(config, flag)
        if value is not None and value <= 0:
            raise UsageError(f'--{flag.replace("_", "-")} must be positive, got {value}')

    _require_existing(config.input, '--input')
    _require_existing(config.sigma_hat, '--sigma-hat')


def parse_args(argv=None):
    namespace = build_parser().parse_args(argv)
    known = RunConfig.__dataclass_fields__
    config = RunConfig(**{key: value for key, value in vars(namespace).items() if key in known})
    if isinstance(config.noise_range, list):
        config.noise_range = tuple(config.noise_range)
    _validate(config)
    return config


def print_defaults():
    print(toml.dumps(consts.DEFAULTS), end='')


def handle_exception(e):
    """Logs the failure and returns the exit code; unexpected errors are re-raised when DEBUG is set"""
    if isinstance(e, RobustFactorError):
        logging.error(f'{type(e).__name__}: {e}')
        return e.exit_code
    logging.exception(e)
    try:
        debug = env_flag('DEBUG')
    except UsageError as flag_error:
        logging.warning(f'{flag_error}; not re-raising')
        debug = False
    if debug:
        raise e
    return EXIT_SOLVER_FAILURE


def main(argv=None):
    load_dotenv()
    configure_logging()
    try:
        config = parse_args(argv)
        if config.verbosity:
            configure_logging(config.verbosity)
        if config.print_defaults:
            print_defaults()
            return EXIT_OK
        logging.info(f'Running robust_factor_analysis {config.command}')
        HANDLERS[config.command](config)
    except Exception as e:
        return handle_exception(e)
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
