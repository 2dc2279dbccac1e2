"""Hamiltonian variational inference with tempered leapfrog flows.

The flow, its unbiased bound estimators and their hand-written adjoints live
in :mod:`hamvi.flow`, :mod:`hamvi.estimators` and :mod:`hamvi.adjoint`; the
conjugate Gaussian model in :mod:`hamvi.models` supplies exact oracles.
"""
from .adjoint import FlowParameterization, GradientBundle, backprop_his, backprop_vanilla, finite_diff_gradient
from .ais import MCMCConfig, ais_log_likelihood
from .data import ConfigurationError, Dataset, DomainError, load, read_binary, read_csv, write_binary, write_csv
from .estimators import (HISNoise, PlanarFlowParams, his_elbo, his_elbo_rao_blackwell, importance_sampled_nll,
                         iwae_bound, planar_nf_elbo, vanilla_elbo)
from .experiment import ExperimentSpec, MethodSpec, ResultRow, emit_plot, generate_dataset, run_experiment
from .flow import (FixedTempering, FlowConfig, FreeTempering, IntegrationError, NoTempering, PhasePoint,
                   forward_flow, hamiltonian, inverse_flow, leapfrog_step, quadratic_beta, temper_momentum)
from .models import (BernoulliDecoderModel, GaussianModel, GaussianModelParams, gaussian_exact_log_marginal,
                     gaussian_grad_U, gaussian_log_joint, make_true_params)
from .optim import OptimizerState, adamax_step, rmsprop_step
from .priors import AmortizedGaussianPrior, MeanFieldParams, MeanFieldPrior, StandardNormalPrior
from .rng import make_rng
from .trainer import TrainConfig, TrainingError, early_stop, train

__version__ = "0.1.0"
