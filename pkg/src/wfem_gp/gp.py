"""GP regression with a learned mean network and a deep squared-exponential kernel.

The kernel is ``k(x, x') = 0.5 * exp(-||phi(x) - phi(x')||^2)`` where ``phi`` is
the "feature" block of the hyperparameter vector and the prior mean is the
"mean" block.  All functions accept a leading batch axis on the inputs so the
training loss can process many equally sized tasks at once.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .nn import HyperParams, mlp_forward

ENVIRONMENTS = ("source", "target", "unlabeled")

LOG_2PI = math.log(2.0 * math.pi)


class IllConditionedError(np.linalg.LinAlgError):
    """Cholesky factorization failed even at the largest jitter."""


@dataclass
class TaskDataset:
    x: np.ndarray
    y: np.ndarray
    environment: str = "unlabeled"
    id: str = ""

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2:
            raise ValueError(f"task {self.id!r}: inputs must be a list of vectors")
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if x.shape[0] != y.shape[0]:
            raise ValueError(f"task {self.id!r}: {x.shape[0]} inputs but {y.shape[0]} outputs")
        if self.environment not in ENVIRONMENTS:
            raise ValueError(f"task {self.id!r}: unknown environment {self.environment!r}")
        self.x, self.y = x, y

    def __len__(self):
        return self.y.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def __eq__(self, other):
        if not isinstance(other, type(self)):
            return NotImplemented
        return (self.id == other.id and self.environment == other.environment
                and np.array_equal(self.x, other.x) and np.array_equal(self.y, other.y))


@dataclass(frozen=True)
class LikelihoodConfig:
    noise_variance: float = 0.01
    jitter: float = 1e-8
    max_jitter: float = 1e-4

    def __post_init__(self):
        if not self.noise_variance > 0:
            raise ValueError("noise variance must be positive")


@dataclass
class GPPredictive:
    mean: np.ndarray | float
    variance: np.ndarray | float

    @property
    def std(self):
        return np.sqrt(np.maximum(self.variance, 0.0))


def features(theta: HyperParams, x):
    return mlp_forward(theta, "feature", x)


def prior_mean(theta: HyperParams, x):
    """Mean network output with the trailing unit axis dropped."""
    out = mlp_forward(theta, "mean", x)
    return ad.reshape(out, np.shape(ad.value_of(out))[:-1])


def kernel_from_features(fa, fb):
    """0.5 * exp(-squared distance) between rows of ``fa`` and ``fb``."""
    fa = ad.expand_dims(fa, -2)
    fb = ad.expand_dims(fb, -3)
    d2 = ad.sum(ad.square(fa - fb), axis=-1)
    return 0.5 * ad.exp(-d2)


def kernel_matrix(theta: HyperParams, xa, xb=None):
    fa = features(theta, xa)
    fb = fa if xb is None else features(theta, xb)
    return kernel_from_features(fa, fb)


def kernel_eval(theta: HyperParams, x, x2) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    if x.shape != x2.shape:
        raise ValueError(f"input dimensions differ: {x.shape} vs {x2.shape}")
    k = kernel_matrix(theta, x[None, :], x2[None, :])
    return float(ad.value_of(k)[0, 0])


def prior_moments(theta: HyperParams, X):
    """Prior mean vector and covariance matrix at inputs ``X`` of shape (..., M, d)."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[-2] == 0:
        raise ValueError("prior_moments needs at least one input")
    return prior_mean(theta, X), kernel_matrix(theta, X)


def add_diagonal(A, value):
    n = np.shape(ad.value_of(A))[-1]
    return A + value * np.eye(n)


def jittered_cholesky(A, jitter: float = 1e-8, max_jitter: float = 1e-4):
    """Cholesky of ``A``, retrying with ``jitter*I`` added (tenfold each
    retry) when the plain factorization fails.

    The trial factorizations run on raw values; only the successful one is
    recorded on the tape.  Returns ``(L, jitter_used)``.
    """
    raw = ad.value_of(A)
    eye = np.eye(raw.shape[-1])
    j = 0.0
    while True:
        try:
            np.linalg.cholesky(raw + j * eye if j else raw)
            break
        except np.linalg.LinAlgError:
            j = jitter if j == 0.0 else 10.0 * j
            if j > max_jitter * (1 + 1e-9):
                raise IllConditionedError(
                    f"matrix not positive definite with jitter up to {max_jitter:g}"
                ) from None
    return ad.cholesky(add_diagonal(A, j) if j else A), j


def batch_log_marginal_likelihood(theta: HyperParams, X, Y, lik: LikelihoodConfig):
    """Log evidence of each task in a batch; ``X`` (B, M, d), ``Y`` (B, M).

    Returns a length-B vector (a Var when ``theta`` is on a tape).
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    M = Y.shape[-1]
    mu, K = prior_moments(theta, X)
    L, _ = jittered_cholesky(add_diagonal(K, lik.noise_variance), lik.jitter, lik.max_jitter)
    r = ad.expand_dims(Y - mu, -1)
    z = ad.solve_triangular(L, r)
    quad = ad.sum(ad.square(z), axis=(-2, -1))
    half_logdet = ad.sum(ad.log(ad.diagonal(L)), axis=-1)
    return -0.5 * quad - half_logdet - 0.5 * M * LOG_2PI


def log_marginal_likelihood(theta: HyperParams, data: TaskDataset, lik: LikelihoodConfig):
    if len(data) < 1:
        raise ValueError("log marginal likelihood needs M >= 1")
    out = batch_log_marginal_likelihood(theta, data.x[None], data.y[None], lik)
    return ad.reshape(out, ())


@dataclass
class PosteriorCache:
    """Factorization of a task's training set, reused across query points."""

    theta: HyperParams
    data: TaskDataset
    lik: LikelihoodConfig
    L: np.ndarray | None = None
    alpha: np.ndarray | None = None
    jitter: float = field(default=0.0)

    @classmethod
    def build(cls, theta: HyperParams, data: TaskDataset, lik: LikelihoodConfig):
        if len(data) == 0:
            return cls(theta, data, lik)
        mu, K = prior_moments(theta, data.x)
        L, j = jittered_cholesky(add_diagonal(K, lik.noise_variance), lik.jitter, lik.max_jitter)
        alpha = np.linalg.solve(L.T, np.linalg.solve(L, data.y - mu))
        return cls(theta, data, lik, L, alpha, j)

    def predict(self, Xq) -> GPPredictive:
        Xq = np.asarray(Xq, dtype=float)
        if Xq.ndim == 1:
            Xq = Xq[:, None]
        if Xq.shape[-1] != self.theta.layout.blocks["mean"].input_dim:
            raise ValueError(f"query dimension {Xq.shape[-1]} does not match the model")
        mq = prior_mean(self.theta, Xq)
        kqq = np.full(Xq.shape[0], 0.5)
        if self.L is None:
            return GPPredictive(mq, kqq)
        kq = kernel_matrix(self.theta, Xq, self.data.x)
        mean = mq + kq @ self.alpha
        v = np.linalg.solve(self.L, kq.T)
        var = kqq - np.sum(v * v, axis=0)
        return GPPredictive(mean, np.maximum(var, 0.0))


def posterior_predict(theta: HyperParams, data: TaskDataset, lik: LikelihoodConfig, x) -> GPPredictive:
    """Posterior predictive of the latent function at a single input ``x``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    pred = PosteriorCache.build(theta, data, lik).predict(x[None, :])
    return GPPredictive(float(pred.mean[0]), float(pred.variance[0]))


def posterior_predict_many(theta: HyperParams, data: TaskDataset, lik: LikelihoodConfig, Xq) -> GPPredictive:
    return PosteriorCache.build(theta, data, lik).predict(Xq)
