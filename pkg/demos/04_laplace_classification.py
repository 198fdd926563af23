"""Binary GP classification with the Laplace approximation.

With a logistic likelihood the latent posterior is not Gaussian.  Newton's
method finds its mode and a Gaussian is fitted there.  Class probabilities
average the sigmoid over latent samples.  The approximate evidence used to
meta-train classification priors comes out of the same Newton recursion.
"""
import numpy as np

from wfem_gp.classify import ClassPredictConfig, approx_log_marginal, class_probability, laplace_mode
from wfem_gp.environments import SyntheticClassEnv, sample_class_task
from wfem_gp.harness import mean_accuracy
from wfem_gp.nn import deep_kernel_layout, init_params

env = SyntheticClassEnv()
support, query, params = sample_class_task(env, shots=5, rng=np.random.default_rng(3))
print(f"task axis angle {params.angle:.2f} rad; {len(support)} support and {len(query)} query points")

theta = init_params(deep_kernel_layout(2), np.random.default_rng(0))
state = laplace_mode(theta, support)
print(f"Newton converged={state.converged} after {state.iterations} steps, residual {state.residual:.1e}")

p = class_probability(theta, support, state, query.x, ClassPredictConfig(n_samples=2000))
acc = mean_accuracy((p >= 0.5).astype(float), query.y)
bayes = mean_accuracy(params.bayes_predict(query.x), query.y)
print(f"query accuracy {acc:.3f} with an untrained prior; Bayes rule {bayes:.3f}")
print(f"Laplace log evidence {float(approx_log_marginal(theta, support)):.3f}")
