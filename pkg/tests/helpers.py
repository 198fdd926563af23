"""Small constructors shared by the test modules."""
import numpy as np

from wfem_gp.gp import TaskDataset
from wfem_gp.nn import HyperParams, deep_kernel_layout, init_params


def linear_theta(feature_weight, mean_weight=0.0, mean_bias=0.0):
    """Deep-kernel parameters without hidden layers for 1-D inputs.

    The feature map is ``x * feature_weight`` (feature_weight is a length-k
    vector) and the prior mean is ``mean_weight * x + mean_bias``.
    """
    w = np.atleast_1d(np.asarray(feature_weight, dtype=float))
    layout = deep_kernel_layout(1, (), w.size)
    values = np.concatenate([[mean_weight, mean_bias], w, np.zeros(w.size)])
    return HyperParams(values, layout)


def small_theta(seed=0, d=1, hidden=(8, 8), feature_dim=2, scale=1.0):
    layout = deep_kernel_layout(d, hidden, feature_dim)
    return init_params(layout, np.random.default_rng(seed), scale)


def random_task(rng, m, d=1, environment="unlabeled"):
    return TaskDataset(rng.uniform(-2, 2, (m, d)), rng.standard_normal(m), environment)
