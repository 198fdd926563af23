"""Meta-learned deep-kernel Gaussian process priors with weighted transfer
from a source task environment to a shifted target environment."""
from .autodiff import NumericError, Tape, Var, grad_scalar, value_and_grad
from .classify import (
    ClassPredictConfig,
    ClassTaskDataset,
    LaplaceState,
    approx_log_marginal,
    class_probability,
    laplace_mode,
    latent_predict,
)
from .environments import (
    MetaDataFormatError,
    SinusoidEnvParams,
    SinusoidTask,
    SyntheticClassEnv,
    build_meta_dataset,
    load_meta_dataset,
    sample_test_tasks,
    save_meta_dataset,
)
from .gp import (
    GPPredictive,
    IllConditionedError,
    LikelihoodConfig,
    TaskDataset,
    kernel_eval,
    log_marginal_likelihood,
    posterior_predict,
    posterior_predict_many,
)
from .harness import ExperimentConfig, ResultRow, SchemeSpec, mean_accuracy, rmse, sweep
from .inference import FitError, MapConfig, ParticleEnsemble, SvgdConfig, map_fit, svgd_fit, svgd_step
from .meta import (
    MetaConfig,
    MetaDataset,
    TemperatureWarning,
    default_temperature,
    log_gibbs_density,
    meta_loss,
    task_loss,
    weighted_meta_loss,
)
from .nn import HyperParams, MlpSpec, deep_kernel_layout, init_params

__version__ = "0.1.0"
