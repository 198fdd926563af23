"""Binary GP classification with a logistic likelihood (Laplace approximation).

Newton's method runs on centered latents ``u = t - mu(X)`` with prior
``N(0, K)``; the learned prior mean is added back when predicting.  Each
Newton step uses the ``B = I + W^1/2 K W^1/2`` form so that ``K`` is never
inverted, and it keeps ``a`` with ``u = K a``, which gives ``K^-1 u`` for free.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .gp import (
    GPPredictive,
    TaskDataset,
    add_diagonal,
    jittered_cholesky,
    kernel_matrix,
    prior_mean,
    prior_moments,
)
from .nn import HyperParams

W_FLOOR = 1e-10


class ClassTaskDataset(TaskDataset):
    """Task with binary labels in {0, 1}."""

    def __post_init__(self):
        super().__post_init__()
        if not np.all((self.y == 0) | (self.y == 1)):
            raise ValueError(f"task {self.id!r}: labels must be 0 or 1")

    @property
    def labels(self) -> np.ndarray:
        return self.y

    @classmethod
    def from_signed(cls, x, y, environment="unlabeled", id=""):
        """Build from labels in {-1, +1} (or {0, 1})."""
        y = np.asarray(y, dtype=float)
        if np.all(np.isin(y, (-1.0, 1.0))) and np.any(y == -1):
            y = (y + 1.0) / 2.0
        return cls(x, y, environment, id)


@dataclass(frozen=True)
class LaplaceState:
    mode: np.ndarray          # centered latent u at the mode
    prior_mean: np.ndarray    # mu(X); latent mode is mode + prior_mean
    W: np.ndarray
    converged: bool
    iterations: int
    residual: float

    @property
    def latent(self) -> np.ndarray:
        return self.mode + self.prior_mean


@dataclass(frozen=True)
class ClassPredictConfig:
    n_samples: int = 1000
    seed: int = 0
    max_iter: int = 20
    tol: float = 1e-8

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("need at least one latent sample")


def _newton_step(K, mu, y, u):
    """One Newton update of the centered latent; returns (u_new, a_new)."""
    t = u + mu
    g = y - ad.sigmoid(t)
    W = ad.sigmoid(t) * ad.sigmoid(-t)
    sW = ad.sqrt(W)
    B = add_diagonal(ad.expand_dims(sW, -1) * K * ad.expand_dims(sW, -2), 1.0)
    L = ad.cholesky(B)
    b = W * u + g
    Kb = ad.matmul(K, ad.expand_dims(b, -1))
    c = ad.solve_triangular(L, ad.expand_dims(sW, -1) * Kb)
    a = b - sW * ad.reshape(ad.solve(ad.swap_last(L), c), np.shape(ad.value_of(b)))
    u_new = ad.reshape(ad.matmul(K, ad.expand_dims(a, -1)), np.shape(ad.value_of(a)))
    return u_new, a


def _stationarity_residual(mu, y, u, a):
    """Infinity norm of grad log p(y|u+mu) - K^-1 u, using K^-1 u = a."""
    t = u + mu
    return np.max(np.abs(y - ad._sigmoid(t) - a), axis=-1)


def laplace_mode_from_prior(K, mean, y, max_iter: int = 20, tol: float = 1e-8) -> LaplaceState:
    """Newton mode finding for prior ``N(mean, K)`` and labels ``y`` in {0,1}."""
    K = np.asarray(K, dtype=float)
    mean = np.asarray(mean, dtype=float)
    y = np.asarray(y, dtype=float)
    u = np.zeros_like(y)
    converged, it, res = False, 0, np.inf
    for it in range(1, max_iter + 1):
        u, a = _newton_step(K, mean, y, u)
        res = float(np.max(_stationarity_residual(mean, y, u, a)))
        if res < tol:
            converged = True
            break
    t = u + mean
    W = ad._sigmoid(t) * ad._sigmoid(-t)
    return LaplaceState(u, mean, W, converged, it, res)


def laplace_mode(theta: HyperParams, data: ClassTaskDataset, max_iter: int = 20, tol: float = 1e-8) -> LaplaceState:
    if len(data) < 1:
        raise ValueError("laplace_mode needs M >= 1")
    mu, K = prior_moments(theta, data.x)
    return laplace_mode_from_prior(K, mu, data.y, max_iter, tol)


def latent_moments_from_prior(K, mean, y, state: LaplaceState, k_cross, k_self, mean_query,
                              jitter: float = 1e-8, max_jitter: float = 1e-4) -> GPPredictive:
    """Latent predictive given prior blocks; ``k_cross`` is (Q, M)."""
    grad = np.asarray(y) - ad._sigmoid(state.latent)
    mean_out = np.asarray(mean_query) + k_cross @ grad
    A = np.asarray(K) + np.diag(1.0 / np.maximum(state.W, W_FLOOR))
    L, _ = jittered_cholesky(A, jitter, max_jitter)
    v = np.linalg.solve(L, k_cross.T)
    var = np.asarray(k_self) - np.sum(v * v, axis=0)
    return GPPredictive(mean_out, np.maximum(var, 0.0))


def latent_predict(theta: HyperParams, data: ClassTaskDataset, state: LaplaceState, x) -> GPPredictive:
    """Gaussian approximation of the latent function at query inputs ``x``.

    ``x`` may be a single input vector or an array of shape (Q, d).
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    Xq = x[None, :] if single else x
    mq = prior_mean(theta, Xq)
    if len(data) == 0:
        pred = GPPredictive(mq, np.full(Xq.shape[0], 0.5))
    else:
        K = kernel_matrix(theta, data.x)
        kq = kernel_matrix(theta, Xq, data.x)
        pred = latent_moments_from_prior(K, state.prior_mean, data.y, state, kq, np.full(Xq.shape[0], 0.5), mq)
    if single:
        return GPPredictive(float(pred.mean[0]), float(pred.variance[0]))
    return pred


def probability_from_latent(mean, variance, n_samples: int, rng: np.random.Generator):
    """Monte-Carlo average of sigmoid over N(mean, variance)."""
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    std = np.sqrt(np.maximum(np.atleast_1d(variance), 0.0))
    z = rng.standard_normal((mean.shape[0], n_samples))
    return ad._sigmoid(mean[:, None] + std[:, None] * z).mean(axis=1)


def class_probability(theta: HyperParams, data: ClassTaskDataset, state: LaplaceState, x,
                      cfg: ClassPredictConfig = ClassPredictConfig()):
    """Predictive P(y=1 | x, data); scalar for a single input, else a vector."""
    x = np.asarray(x, dtype=float)
    pred = latent_predict(theta, data, state, x)
    p = probability_from_latent(pred.mean, pred.variance, cfg.n_samples, np.random.default_rng(cfg.seed))
    return float(p[0]) if x.ndim == 1 else p


def approx_log_marginal_from_prior(K, mean, y, n_newton: int = 10):
    """Laplace log evidence after ``n_newton`` unrolled Newton steps from zero.

    Differentiable with respect to ``K`` and ``mean``.  Returns the (batched)
    value and the stationarity residual of the final iterate.
    """
    y = np.asarray(y, dtype=float)
    u = np.zeros(y.shape)
    a = None
    for _ in range(n_newton):
        u, a = _newton_step(K, mean, y, u)
    t = u + mean
    loglik = ad.sum(y * t - ad.softplus(t), axis=-1)
    W = ad.sigmoid(t) * ad.sigmoid(-t)
    sW = ad.sqrt(W)
    B = add_diagonal(ad.expand_dims(sW, -1) * K * ad.expand_dims(sW, -2), 1.0)
    L = ad.cholesky(B)
    value = -0.5 * ad.sum(a * u, axis=-1) + loglik - ad.sum(ad.log(ad.diagonal(L)), axis=-1)
    residual = _stationarity_residual(ad.value_of(mean), y, ad.value_of(u), ad.value_of(a))
    return value, residual


def batch_approx_log_marginal(theta: HyperParams, X, Y, n_newton: int = 10):
    """Per-task Laplace log evidence for a batch ``X`` (B, M, d), ``Y`` (B, M)."""
    mu, K = prior_moments(theta, np.asarray(X, dtype=float))
    return approx_log_marginal_from_prior(K, mu, Y, n_newton)


def approx_log_marginal(theta: HyperParams, data: ClassTaskDataset, n_newton: int = 10,
                        tol: float = 1e-8, return_converged: bool = False):
    """Laplace approximation of log p(Y | X) for one task.

    With ``return_converged`` the result is ``(value, converged)`` where
    ``converged`` reports whether the unrolled Newton iterate met ``tol``.
    """
    if len(data) < 1:
        raise ValueError("approx_log_marginal needs M >= 1")
    value, residual = batch_approx_log_marginal(theta, data.x[None], data.y[None], n_newton)
    value = ad.reshape(value, ())
    if return_converged:
        return value, bool(residual[0] < tol)
    return value
