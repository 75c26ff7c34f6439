"""Score-based deterministic transport for jump-diffusion McKean-Vlasov SDEs."""

__version__ = "0.1.0"

from .config import ConfigError, ExperimentConfig, load_config
from .levyquad import LevyQuadrature, build_quadrature, compensator, fractional_score_check, levy_score_oracle
from .model import (
    InteractionKernel,
    SdeModel,
    build_example,
    eval_hat_drift,
    eval_kernel,
    register_model,
)
from .scorenet import ScoreNetwork, adam_step, divergence, fit_initial_score, forward, loss_gradient
from .training import BatchLossSpec, assemble_loss, oracle_gap, train_step
from .transport import ParticleEnsemble, TrajectoryRecord, propagate_alg1, propagate_alg2, run_sbtm, update_log_density
from .mcref import RngStream, em_run, em_step, sample_stable
from .eval import check_l2_kl_bound, convergence_study, kde, kl_divergence_binned, tv_distance
