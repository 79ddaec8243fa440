# Default tolerances and iteration caps, in one place so that `--print-defaults` shows all of them
DEFAULTS = {
    'symmat': {
        'rank_floor': 1e-14,
        'rank_rel_tol': 1e-8,
    },
    'estimation': {
        'delta_fraction': 0.5,
        'degenerate_delta_max': 1e-12,
        'asymmetry_tol': 1e-9,
    },
    'mtfa': {
        'tol': 1e-7,
        'max_iter': 50000,
        'rho': 1.0,
        'balance_ratio': 10.0,
        'balance_factor': 2.0,
        'report_k': 20,
        'log_every': 1000,
    },
    'dual': {
        'tol': 1e-8,
        'max_iter': 100000,
        'armijo_c': 1e-4,
        'armijo_factor': 0.5,
        'max_backtracks': 60,
        'projection_rounds': 50,
        'objective_noise': 1e-12,
        'lambda_min': 1e-10,
        'lambda_max': 1e10,
        'x_norm_max': 1e8,
        'step_min': 1e-12,
        'step_max': 1e12,
        'log_every': 1000,
    },
    'recovery': {
        'kernel_rel_tol': 1e-6,
        'act_tol': 1e-8,
        'proj_tol': 1e-6,
        'inconsistency_tol': 1e-4,
        'nonunique_tol': 1e-10,
        'rank_rel_tol': 1e-6,
        'cert_tol': 1e-5,
    },
    'simulator': {
        'loading_scale': 0.25,
        'noise_range': (0.1, 1.0),
        'delta_fraction': 0.5,
        'rank_rel_tol': 1e-3,
        'report_k': 20,
        'sweep': (0.1, 0.3, 0.5, 0.7, 0.9),
    },
}

RESULT_SCHEMA_VERSION = '1.0'
EXPERIMENT_SCHEMA_VERSION = '1.0'
