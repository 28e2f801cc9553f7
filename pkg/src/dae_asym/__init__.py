"""Exact asymptotics of tied-weight denoising autoencoders on Gaussian mixtures."""

from .baselines import (BayesConfig, BayesStats, PcaBasis, bayes_fixed_point, bayes_mse, oracle_mse_theory,
                        pca_denoise, pca_fit, pca_plugin_denoise, pca_reconstruction_mse, tweedie_denoise)
from .errors import (CommutativityViolation, ConfigError, DaeAsymError, DegenerateCluster, DegenerateProblem,
                     Divergence, NoConvergence, NotPSD, ProxNoConvergence, RankDeficient, SingularCovariance,
                     SingularResolvent)
from .metrics import TheoryMetrics, bottleneck_gap, cosine_theory, mse_rescaling, mse_theory, theory_metrics
from .mixture import (Dataset, MixtureSpec, SpectralMeasure, binary_isotropic_spec, binary_spec,
                      build_spectral_measure, isotropic_binary_measure, sample_dataset)
from .numerics import Activation, Quadrature
from .replica import (ReplicaSolution, SolverConfig, skip_strength, solve_anisotropic_binary, solve_dense,
                      solve_fixed_point, solve_rae)
from .sim import DaeParams, EmpiricalMetrics, TrainConfig, adam_train, dae_forward, empirical_metrics, simulate_point

__version__ = "0.1.0"
