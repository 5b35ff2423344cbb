"""Entropic-smoothed Wasserstein distributionally robust training with
brute-force certification oracles for the small-regularization limits."""

from .errors import (CertificateError, ConfigError, ContractError,
                     DimensionMismatchError, NumericError, ReplayMismatchError,
                     SmoothDROError, ValidationError)
from .model import (ColumnSchema, CostParams, Dataset, NoiseBank, ParamBox,
                    ParamPoint, RobustnessConfig, Sample, load_dataset,
                    mixed_cost, project_box, sample_noise_bank)
from .losses import (GrowthCert, LinearRegressionLoss, LogisticLoss, LossModel,
                     MLPLoss, growth_certificate, lambda_min_for_dataset,
                     make_loss, sigmoid, softplus)
from .smoothing import (ConcentrationReport, ExponentTable, GradPair,
                        SoftmaxWeights, concentration_report, exponent_table,
                        full_gradient, grad_pair, objective_F, phi_beta_m,
                        softmax_weights)
from .oracle import (ArgmaxSet, CompactWindow, SubdiffSet, brute_force_phi,
                     clarke_subdiff, compact_window, crit_set_grid,
                     dist_to_hull, enlargement_member, objective_subdiff_map,
                     oracle_residual)
from .optimizer import (CertReport, RunRecord, StepSchedule, certify_run,
                        criticality_residual, full_gd_run, sgd_run)
from .config import RunContext, build_context, load_config

__version__ = "0.1.0"
