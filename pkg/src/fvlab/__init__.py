"""Fluctuations of the Fleming-Viot empirical measure around the quasi-stationary distribution."""
from .chain import (
    FiniteChain,
    bracket,
    build_chain,
    load_chain,
    project_zero_mean,
    project_zero_sum,
    random_chain,
    theta,
)
from .covariance import (
    covariance_finite_time,
    covariance_integral,
    covariance_lyapunov,
    contract_dirichlet,
    diagonalize_symmetric,
    is_positive_definite,
    solve_lyapunov,
)
from .experiment import ExperimentConfig, lln_check, run_experiment
from .oracle import (
    build_fv_generator,
    check_moment_estimate,
    check_variance_condition,
    compare_fluctuation_generators,
    enumerate_simplex,
    exact_fluctuation_covariance,
    exact_stationary,
)
from .simulate import fluctuation, fv_step, sample_stationary, simulate_ou, simulate_pi_return
from .spectral import (
    build_pi_return,
    check_decay,
    diffusion_operator,
    dirichlet_form,
    drift_operator,
    killed_semigroup,
    pi_semigroup,
    solve_qsd,
    yaglom_conditional,
)

__version__ = "0.1.0"
