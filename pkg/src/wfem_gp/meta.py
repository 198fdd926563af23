"""Meta-training losses, temperatures and the log Gibbs hyper-posterior.

Two schemes share this module:

* ``pacoh`` -- the plain average of per-task losses over all tasks;
* ``wfem``  -- a convex combination ``alpha * L_source + (1 - alpha) * L_target``
  of the per-environment averages.

Per-task loss is the negative log evidence divided by the task size.  Task
losses are always reduced in canonical order (source block, then target
block, each in insertion order), which keeps results bitwise reproducible.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .classify import batch_approx_log_marginal
from .gp import LikelihoodConfig, TaskDataset, batch_log_marginal_likelihood
from .nn import HyperParams

PROBLEMS = ("regression", "classification")
MODES = ("pacoh", "wfem")


class TemperatureWarning(UserWarning):
    pass


def canonical_order(tasks: Sequence[TaskDataset]) -> list[TaskDataset]:
    return ([t for t in tasks if t.environment == "source"]
            + [t for t in tasks if t.environment == "target"])


@dataclass
class MetaDataset:
    """Meta-training tasks, kept in canonical order."""

    tasks: list[TaskDataset]
    problem: str = "regression"

    def __post_init__(self):
        if self.problem not in PROBLEMS:
            raise ValueError(f"unknown problem {self.problem!r}")
        for t in self.tasks:
            if t.environment not in ("source", "target"):
                raise ValueError(f"task {t.id!r} has no source/target environment tag")
        dims = {t.dim for t in self.tasks}
        if len(dims) > 1:
            raise ValueError(f"tasks have mixed input dimensions {sorted(dims)}")
        self.tasks = canonical_order(self.tasks)

    def __len__(self):
        return len(self.tasks)

    @property
    def source(self) -> list[TaskDataset]:
        return [t for t in self.tasks if t.environment == "source"]

    @property
    def target(self) -> list[TaskDataset]:
        return [t for t in self.tasks if t.environment == "target"]

    @property
    def beta(self) -> float:
        """Realized fraction of source tasks."""
        return len(self.source) / len(self.tasks) if self.tasks else 0.0

    @property
    def sample_counts(self) -> list[int]:
        return [len(t) for t in self.tasks]

    def subset(self, environment: str) -> "MetaDataset":
        return MetaDataset([t for t in self.tasks if t.environment == environment], self.problem)


@dataclass(frozen=True)
class MetaConfig:
    """Objective settings.  ``gamma=None`` selects the default temperature."""

    alpha: float = 0.5
    gamma: float | None = None
    prior_std: float = 1.0
    mode: str = "wfem"
    lik: LikelihoodConfig = field(default_factory=LikelihoodConfig)
    n_newton: int = 10

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.gamma is not None and not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if not self.prior_std > 0:
            raise ValueError("prior_std must be positive")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")

    def resolved(self, meta: MetaDataset) -> "MetaConfig":
        """Copy with the temperature filled in from ``meta``."""
        if self.gamma is not None:
            return self
        return replace(self, gamma=default_temperature(meta.sample_counts, self.mode))


def default_temperature(sample_counts: Sequence[int], mode: str = "pacoh") -> float:
    """gamma = (1/N + 1/M)^-1 with M the harmonic mean task size.

    In ``wfem`` mode all tasks must have the same size; otherwise the
    harmonic-mean rule is used and a :class:`TemperatureWarning` is issued.
    """
    counts = [int(m) for m in sample_counts]
    n = len(counts)
    if n < 1 or min(counts) < 1:
        raise ValueError("need N >= 1 tasks, each with M >= 1 samples")
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if len(set(counts)) == 1:
        # the harmonic mean of equal sizes is that size; one expression keeps both modes bitwise equal
        return 1.0 / (1.0 / n + 1.0 / counts[0])
    if mode == "wfem":
        warnings.warn("unequal task sizes; using the harmonic-mean temperature", TemperatureWarning)
    m_harm = 1.0 / (sum(1.0 / m for m in counts) / n)
    return 1.0 / (1.0 / n + 1.0 / m_harm)


def _batch_evidence(theta, X, Y, problem, lik, n_newton):
    if problem == "regression":
        return batch_log_marginal_likelihood(theta, X, Y, lik)
    value, _ = batch_approx_log_marginal(theta, X, Y, n_newton)
    return value


def task_losses(theta: HyperParams, tasks: Sequence[TaskDataset], problem: str = "regression",
                lik: LikelihoodConfig = LikelihoodConfig(), n_newton: int = 10):
    """Vector of ``-log evidence / M`` in the given task order.

    Tasks of equal size are evaluated as one batch.
    """
    if not tasks:
        raise ValueError("no tasks")
    groups: dict[int, list[int]] = {}
    for i, t in enumerate(tasks):
        if len(t) < 1:
            raise ValueError(f"task {t.id!r} is empty")
        groups.setdefault(len(t), []).append(i)
    parts, order = [], []
    for m, idx in groups.items():
        X = np.stack([tasks[i].x for i in idx])
        Y = np.stack([tasks[i].y for i in idx])
        parts.append(-_batch_evidence(theta, X, Y, problem, lik, n_newton) / float(m))
        order.extend(idx)
    if len(parts) == 1:
        return parts[0]
    losses = ad.concatenate(parts)
    return ad.take(losses, np.argsort(order, kind="stable"))


def task_loss(theta: HyperParams, data: TaskDataset, problem: str = "regression",
              lik: LikelihoodConfig = LikelihoodConfig(), n_newton: int = 10):
    return ad.reshape(task_losses(theta, [data], problem, lik, n_newton), ())


def meta_loss(theta: HyperParams, tasks: Sequence[TaskDataset], problem: str = "regression",
              lik: LikelihoodConfig = LikelihoodConfig(), n_newton: int = 10):
    """Average per-task loss."""
    if len(tasks) == 0:
        raise ValueError("meta_loss over an empty task list")
    return ad.sum(task_losses(theta, tasks, problem, lik, n_newton)) / float(len(tasks))


def weighted_meta_loss(theta: HyperParams, meta: MetaDataset, alpha: float,
                       lik: LikelihoodConfig = LikelihoodConfig(), n_newton: int = 10):
    """``alpha * L_source + (1 - alpha) * L_target``.

    A term with zero weight is not evaluated, so the endpoints return the
    pure environment losses exactly.
    """
    src, tgt = meta.source, meta.target
    if alpha > 0 and not src:
        raise ValueError("weighted_meta_loss: source subset is empty but alpha > 0")
    if alpha < 1 and not tgt:
        raise ValueError("weighted_meta_loss: target subset is empty but alpha < 1")
    if alpha == 0:
        return meta_loss(theta, tgt, meta.problem, lik, n_newton)
    if alpha == 1:
        return meta_loss(theta, src, meta.problem, lik, n_newton)
    return (alpha * meta_loss(theta, src, meta.problem, lik, n_newton)
            + (1.0 - alpha) * meta_loss(theta, tgt, meta.problem, lik, n_newton))


def objective_loss(theta: HyperParams, meta: MetaDataset, cfg: MetaConfig):
    """Meta-training loss targeted by ``cfg.mode``.

    In ``wfem`` mode an environment with no tasks hands its weight to the
    other one, so with no source tasks the objective is the target average,
    identical to ``pacoh`` on the same tasks.
    """
    if cfg.mode == "pacoh":
        return meta_loss(theta, meta.tasks, meta.problem, cfg.lik, cfg.n_newton)
    if not meta.source:
        return meta_loss(theta, meta.target, meta.problem, cfg.lik, cfg.n_newton)
    if not meta.target:
        return meta_loss(theta, meta.source, meta.problem, cfg.lik, cfg.n_newton)
    return weighted_meta_loss(theta, meta, cfg.alpha, cfg.lik, cfg.n_newton)


def log_hyperprior(values, prior_std: float):
    """Isotropic Gaussian log density without its normalizing constant."""
    return -ad.sum(ad.square(values)) / (2.0 * prior_std ** 2)


def log_gibbs_density(theta: HyperParams, meta: MetaDataset, cfg: MetaConfig):
    """Unnormalized ``log p(theta) - gamma * loss(theta)``."""
    cfg = cfg.resolved(meta)
    return log_hyperprior(theta.values, cfg.prior_std) - cfg.gamma * objective_loss(theta, meta, cfg)


def gibbs_value_and_grad(values: np.ndarray, layout, meta: MetaDataset, cfg: MetaConfig):
    return ad.value_and_grad(lambda v: log_gibbs_density(HyperParams(v, layout), meta, cfg), values)


def batch_size_split(n: int, beta: float) -> tuple[int, int]:
    """Source/target counts for a stratified batch of ``n`` tasks."""
    n_src = int(math.floor(beta * n + 0.5))
    return n_src, n - n_src
