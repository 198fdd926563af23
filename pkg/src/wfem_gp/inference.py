"""Approximations of the Gibbs hyper-posterior: MAP point and SVGD particles."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .autodiff import NumericError
from .meta import MetaConfig, MetaDataset, batch_size_split, gibbs_value_and_grad
from .nn import AdamState, HyperParams, ParamLayout, adam_step


class FitError(RuntimeError):
    """Numerical failure during a fit; ``iteration`` is where it happened."""

    def __init__(self, message, iteration=None, particle=None):
        super().__init__(message)
        self.iteration = iteration
        self.particle = particle


@dataclass(frozen=True)
class MapConfig:
    iterations: int = 1000
    batch_size: int | None = None     # None: all tasks every step
    optimizer: str = "adam"           # "adam" or "sgd" (plain gradient steps)
    lr: float = 5e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch size must be >= 1")


@dataclass(frozen=True)
class SvgdConfig:
    n_particles: int = 10
    step_size: float = 1e-3
    lengthscale: float | None = None  # None: median heuristic every step
    iterations: int = 1000
    batch_size: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.n_particles < 1:
            raise ValueError("need at least one particle")
        if not self.step_size > 0:
            raise ValueError("step size must be positive")
        if self.lengthscale is not None and not self.lengthscale > 0:
            raise ValueError("lengthscale must be positive")


@dataclass
class ParticleEnsemble:
    values: np.ndarray            # (K, D)
    layout: ParamLayout
    iteration: int = 0

    def __len__(self):
        return self.values.shape[0]

    @property
    def particles(self) -> list[HyperParams]:
        return [HyperParams(v, self.layout) for v in self.values]

    @classmethod
    def from_point(cls, theta: HyperParams) -> "ParticleEnsemble":
        return cls(np.asarray(theta.values, dtype=float)[None, :].copy(), theta.layout)


def batch_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng([seed, 1])


def sample_meta_batch(meta: MetaDataset, n: int | None, rng: np.random.Generator,
                      stratified: bool = True) -> MetaDataset:
    """Tasks for one step; stratified by environment at the data's source fraction.

    A full batch (``n`` None or >= N) returns ``meta`` itself without touching
    ``rng``.  Drawn indices are sorted so the batch stays in canonical order.
    """
    N = len(meta)
    if n is None or n >= N:
        return meta
    if not stratified:
        idx = np.sort(rng.choice(N, size=n, replace=False))
        return MetaDataset([meta.tasks[i] for i in idx], meta.problem)
    src, tgt = meta.source, meta.target
    if src and tgt and n < 2:
        raise ValueError("a stratified meta-batch needs room for both environments (n >= 2)")
    n_src, n_tgt = batch_size_split(n, meta.beta)
    if src and n_src == 0 and n >= 2:
        n_src, n_tgt = 1, n - 1
    if tgt and n_tgt == 0 and n >= 2:
        n_src, n_tgt = n - 1, 1
    if n_src != meta.beta * n:
        warnings.warn(f"meta-batch of {n} rounded to {n_src} source / {n_tgt} target tasks", stacklevel=2)
    chosen = []
    for pool, k in ((src, n_src), (tgt, n_tgt)):
        k = min(k, len(pool))
        if k:
            chosen += [pool[i] for i in np.sort(rng.choice(len(pool), size=k, replace=False))]
    return MetaDataset(chosen, meta.problem)


def score_estimate(values: np.ndarray, batch: MetaDataset, cfg: MetaConfig, layout: ParamLayout) -> np.ndarray:
    """Gradient of the log Gibbs density on a meta-batch.

    ``cfg`` must carry the temperature of the full meta-dataset.  Each
    environment's sum is normalized by its own count in the batch, which makes
    this an unbiased estimate of the full-data gradient under stratified
    sampling; the full batch gives the exact gradient.
    """
    if cfg.gamma is None:
        raise ValueError("score_estimate needs a resolved temperature (cfg.resolved(meta))")
    grad, _ = gibbs_value_and_grad(np.asarray(values, dtype=float), layout, batch, cfg)
    return grad


def minimize(grad_fn: Callable[[np.ndarray, int], np.ndarray], init: np.ndarray, opt: MapConfig) -> np.ndarray:
    """Descend ``grad_fn(values, iteration)`` from ``init``."""
    values = np.array(init, dtype=float)
    state = AdamState.fresh(values.size, opt.lr, opt.beta1, opt.beta2, opt.eps)
    for it in range(opt.iterations):
        g = grad_fn(values, it)
        if not np.all(np.isfinite(g)):
            raise FitError(f"non-finite gradient at iteration {it}", iteration=it)
        if opt.optimizer == "adam":
            state, values = adam_step(state, values, g)
        else:
            values = values - opt.lr * g
    return values


def map_fit(meta: MetaDataset, cfg: MetaConfig, opt: MapConfig, init: HyperParams) -> HyperParams:
    """Mode of the Gibbs hyper-posterior by (mini-batch) gradient descent.

    Minimizes ``gamma * loss(theta) + ||theta||^2 / (2 prior_std^2)``.  With no
    meta-training tasks there is nothing to fit and ``init`` is returned.
    """
    if len(meta) == 0:
        return init
    cfg = cfg.resolved(meta)
    rng = batch_rng(opt.seed)
    stratified = cfg.mode == "wfem"

    def grad_fn(values, it):
        batch = sample_meta_batch(meta, opt.batch_size, rng, stratified)
        try:
            g, _ = gibbs_value_and_grad(values, init.layout, batch, cfg)
        except (NumericError, np.linalg.LinAlgError) as exc:
            raise FitError(f"MAP step {it} failed: {exc}", iteration=it) from exc
        return -g

    return HyperParams(minimize(grad_fn, init.values, opt), init.layout)


def svgd_kernel(a, b, lengthscale: float) -> float:
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    return float(np.exp(-np.dot(d, d) / (2.0 * lengthscale)))


def median_lengthscale(values: np.ndarray) -> float:
    """Bandwidth ``l`` with ``exp(-d^2/(2l))`` giving ``sum_j k ~ 1`` at the median distance."""
    K = values.shape[0]
    if K < 2:
        return 1.0
    sq = np.sum(values * values, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * values @ values.T, 0.0)
    med = np.median(d2[np.triu_indices(K, 1)])
    if med <= 0:
        return 1.0
    return float(med / (2.0 * math.log(K)))


def svgd_direction(values: np.ndarray, scores: np.ndarray, lengthscale: float) -> np.ndarray:
    """Stein transport direction for every particle (rows)."""
    K = values.shape[0]
    diff = values[None, :, :] - values[:, None, :]          # [j, k] = theta_k - theta_j
    kmat = np.exp(-np.sum(diff * diff, axis=-1) / (2.0 * lengthscale))
    drive = kmat.T @ scores
    repulse = np.einsum("jk,jkd->kd", kmat, diff) / lengthscale
    return (drive + repulse) / K


def svgd_step(ens: ParticleEnsemble, scores: np.ndarray, cfg: SvgdConfig) -> ParticleEnsemble:
    scores = np.asarray(scores, dtype=float)
    if scores.shape != ens.values.shape:
        raise ValueError(f"scores shape {scores.shape} does not match particles {ens.values.shape}")
    l = cfg.lengthscale if cfg.lengthscale is not None else median_lengthscale(ens.values)
    with np.errstate(all="ignore"):     # reported below per particle
        new = ens.values + cfg.step_size * svgd_direction(ens.values, scores, l)
    bad = ~np.all(np.isfinite(new), axis=1)
    if bad.any():
        k = int(np.argmax(bad))
        raise FitError(f"non-finite SVGD update for particle {k}", iteration=ens.iteration, particle=k)
    return ParticleEnsemble(new, ens.layout, ens.iteration + 1)


def prior_particles(layout: ParamLayout, n: int, prior_std: float, seed: int) -> np.ndarray:
    return np.random.default_rng([seed, 0]).normal(0.0, prior_std, size=(n, layout.size))


def svgd_fit(meta: MetaDataset, cfg: MetaConfig, svgd: SvgdConfig, layout: ParamLayout,
             init: np.ndarray | None = None, score_fn=None) -> ParticleEnsemble:
    """Transport particles toward the Gibbs hyper-posterior.

    ``init`` (K, D) defaults to K draws from the hyper-prior.  All particles
    see the same meta-batch at each step.  ``score_fn(values, batch)``
    overrides the score (used for toy targets).
    """
    if init is None:
        init = prior_particles(layout, svgd.n_particles, cfg.prior_std, svgd.seed)
    ens = ParticleEnsemble(np.array(init, dtype=float), layout)
    if score_fn is None and len(meta) == 0:
        return ens
    if score_fn is None:
        cfg = cfg.resolved(meta)

        def score_fn(values, batch):
            return score_estimate(values, batch, cfg, layout)

    rng = batch_rng(svgd.seed)
    stratified = cfg.mode == "wfem"
    for it in range(svgd.iterations):
        batch = sample_meta_batch(meta, svgd.batch_size, rng, stratified) if len(meta) else meta
        try:
            scores = np.stack([score_fn(v, batch) for v in ens.values])
        except (NumericError, np.linalg.LinAlgError) as exc:
            raise FitError(f"SVGD step {it} failed: {exc}", iteration=it) from exc
        ens = svgd_step(ens, scores, svgd)
    return ens
