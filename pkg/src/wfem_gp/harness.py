"""Experiment runner: train the four schemes, score them on meta-test tasks,
sweep a parameter and write plot-ready CSV files.

Schemes
-------
``gp``
    untrained initial hyperparameters (shared with every trained scheme).
``pacoh_full_target``
    PACOH on N target-environment tasks generated with the same per-task
    seeds as the mixed meta-dataset (the ideal reference).
``pacoh_partial_target``
    PACOH on the (1 - beta) N target tasks of the mixed meta-dataset.
``wfem``
    weighted objective on all N tasks.
"""
from __future__ import annotations

import csv
import io
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .classify import ClassPredictConfig, ClassTaskDataset, latent_moments_from_prior, laplace_mode, probability_from_latent
from .environments import (
    EvalTask,
    SinusoidEnvParams,
    SyntheticClassEnv,
    build_meta_dataset,
    load_meta_dataset,
    sample_test_tasks,
)
from .gp import GPPredictive, LikelihoodConfig, PosteriorCache, TaskDataset, kernel_matrix, prior_mean, prior_moments
from .inference import FitError, MapConfig, ParticleEnsemble, SvgdConfig, map_fit, svgd_fit
from .meta import MetaConfig, MetaDataset
from .nn import HyperParams, ParamLayout, deep_kernel_layout, init_params

SCHEMES = ("gp", "pacoh_full_target", "pacoh_partial_target", "wfem")
APPROXIMATIONS = ("map", "svgd")
SWEEPS = ("deviation", "beta", "alpha")
FIELDS = ("scheme", "approx", "alpha", "beta", "deviation", "seed", "metric", "value", "wall_time", "error")

HyperPosterior = Union[HyperParams, ParticleEnsemble]


@dataclass(frozen=True)
class SchemeSpec:
    scheme: str
    approx: str = "map"

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; choose from {SCHEMES}")
        if self.approx not in APPROXIMATIONS:
            raise ValueError(f"unknown approximation {self.approx!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    problem: str = "regression"
    n_tasks: int = 30
    samples: int = 5                 # points per task, or shots per class
    sigma: float = 0.1
    alpha: float = 0.5
    beta: float = 0.5
    alpha_equals_beta: bool = False
    mu_c: float = 0.0
    deviation: float = 0.0           # regression: mu_c' - mu_c; classification: rotation delta
    seeds: tuple[int, ...] = (0,)
    sweep: str | None = None
    grid: tuple[float, ...] = ()
    schemes: tuple[str, ...] = SCHEMES
    approx: str = "map"
    particles: int = 10
    n_test_tasks: int = 20
    prior_std: float = 10.0
    feature_dim: int = 2
    hidden_layers: tuple[int, ...] = (32, 32, 32, 32)
    init_scale: float = 1.0
    map_iterations: int = 2000
    map_lr: float = 3e-3
    batch_size: int | None = None
    svgd_iterations: int = 2000
    svgd_step: float = 1e-3
    svgd_lengthscale: float | None = None
    class_samples: int = 1000
    meta_data: str | None = None
    test_data: str | None = None
    record_time: bool = False

    def __post_init__(self):
        if self.problem not in ("regression", "classification"):
            raise ValueError(f"unknown problem {self.problem!r}")
        if not self.seeds:
            raise ValueError("seeds must be non-empty")
        if self.sweep is not None:
            if self.sweep not in SWEEPS:
                raise ValueError(f"unknown sweep variable {self.sweep!r}")
            if not self.grid:
                raise ValueError("sweep grid must be non-empty")
        for s in self.schemes:
            SchemeSpec(s, self.approx)

    def at(self, value: float) -> "ExperimentConfig":
        """Configuration for one grid point of the sweep."""
        if self.sweep is None:
            return self
        cfg = replace(self, **{self.sweep: float(value)})
        return cfg

    @property
    def effective_alpha(self) -> float:
        return self.beta if self.alpha_equals_beta else self.alpha

    @property
    def metric(self) -> str:
        return "rmse" if self.problem == "regression" else "mean_accuracy"

    def layout(self, input_dim: int) -> ParamLayout:
        return deep_kernel_layout(input_dim, self.hidden_layers, self.feature_dim)

    def lik(self) -> LikelihoodConfig:
        return LikelihoodConfig(self.sigma ** 2)

    def environments(self):
        if self.problem == "regression":
            src = SinusoidEnvParams(self.mu_c)
        else:
            src = SyntheticClassEnv()
        return src, src.shifted(self.deviation)


@dataclass
class ResultRow:
    scheme: str
    approx: str
    alpha: float
    beta: float
    deviation: float
    seed: int
    metric: str
    value: float
    wall_time: float | None = None
    error: str = ""


# --- metrics ---------------------------------------------------------------

def rmse(predictions, labels) -> float:
    p = np.asarray(predictions, dtype=float)
    y = np.asarray(labels, dtype=float)
    if p.size == 0 or p.shape != y.shape:
        raise ValueError("rmse needs equal-length, non-empty inputs")
    return float(np.sqrt(np.mean((p - y) ** 2)))


def mean_accuracy(predicted, labels) -> float:
    p = np.asarray(predicted, dtype=float)
    y = np.asarray(labels, dtype=float)
    if p.size == 0 or p.shape != y.shape:
        raise ValueError("mean_accuracy needs equal-length, non-empty inputs")
    return float(1.0 - np.mean(np.abs(p - y)))


# --- ensemble prediction ---------------------------------------------------

def _thetas(post: HyperPosterior) -> list[HyperParams]:
    return [post] if isinstance(post, HyperParams) else post.particles


def predictive_ensemble(post: HyperPosterior, data: TaskDataset, x, lik: LikelihoodConfig) -> GPPredictive:
    """Equal-weight mixture moments of the per-particle GP posteriors."""
    preds = [PosteriorCache.build(th, data, lik).predict(x) for th in _thetas(post)]
    means = np.stack([p.mean for p in preds])
    mean = np.sum(means, axis=0) / len(preds)
    second = np.sum(np.stack([p.variance for p in preds]) + means ** 2, axis=0) / len(preds)
    return GPPredictive(mean, np.maximum(second - mean ** 2, 0.0))


def predictive_mean_ensemble(post: HyperPosterior, data: TaskDataset, x, lik: LikelihoodConfig = LikelihoodConfig()):
    """Average of per-particle posterior means (the MAP mean for a point)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1 and isinstance(post, HyperParams) and post.layout.blocks["mean"].input_dim == x.shape[0]
    Xq = x[None, :] if single else x
    means = [PosteriorCache.build(th, data, lik).predict(Xq).mean for th in _thetas(post)]
    out = np.sum(np.stack(means), axis=0) / len(means)
    return float(out[0]) if single else out


def class_probability_ensemble(post: HyperPosterior, data: ClassTaskDataset, x,
                               cfg: ClassPredictConfig = ClassPredictConfig()):
    """Average predictive P(y=1) over particles."""
    x = np.asarray(x, dtype=float)
    probs = []
    for k, th in enumerate(_thetas(post)):
        state = laplace_mode(th, data, cfg.max_iter, cfg.tol)
        mu, K = prior_moments(th, data.x)
        pred = latent_moments_from_prior(K, mu, data.y, state, kernel_matrix(th, x, data.x),
                                         np.full(x.shape[0], 0.5), prior_mean(th, x))
        rng = np.random.default_rng([cfg.seed, k])
        probs.append(probability_from_latent(pred.mean, pred.variance, cfg.n_samples, rng))
    return np.sum(np.stack(probs), axis=0) / len(probs)


def evaluate(post: HyperPosterior, tests: Sequence[EvalTask], cfg: ExperimentConfig) -> float:
    """Average metric over meta-test tasks."""
    scores = []
    for j, t in enumerate(tests):
        if cfg.problem == "regression":
            scores.append(rmse(predictive_mean_ensemble(post, t.train, t.test.x, cfg.lik()), t.test.y))
        else:
            p = class_probability_ensemble(post, t.train, t.test.x, ClassPredictConfig(cfg.class_samples, seed=j))
            scores.append(mean_accuracy((p >= 0.5).astype(float), t.test.y))
    return float(np.mean(scores))


# --- training ----------------------------------------------------------------

def initial_ensemble(layout: ParamLayout, seed: int, k: int, scale: float = 1.0) -> np.ndarray:
    """Shared starting point per seed; row 0 is the MAP initialization."""
    return np.stack([init_params(layout, np.random.default_rng([seed, 2, i]), scale).values for i in range(k)])


def fit_scheme(spec: SchemeSpec, data: MetaDataset, cfg: ExperimentConfig, init: np.ndarray,
               layout: ParamLayout, seed: int) -> HyperPosterior:
    """Train one scheme; ``data`` is the meta-dataset the scheme sees."""
    mode = "wfem" if spec.scheme == "wfem" else "pacoh"
    mcfg = MetaConfig(alpha=cfg.effective_alpha, prior_std=cfg.prior_std, mode=mode, lik=cfg.lik())
    untrained = spec.scheme == "gp" or len(data) == 0
    if spec.approx == "map":
        theta0 = HyperParams(init[0], layout)
        if untrained:
            return theta0
        opt = MapConfig(iterations=cfg.map_iterations, lr=cfg.map_lr, batch_size=cfg.batch_size, seed=seed)
        return map_fit(data, mcfg, opt, theta0)
    if untrained:
        return ParticleEnsemble(init.copy(), layout)
    scfg = SvgdConfig(n_particles=init.shape[0], step_size=cfg.svgd_step, lengthscale=cfg.svgd_lengthscale,
                      iterations=cfg.svgd_iterations, batch_size=cfg.batch_size, seed=seed)
    return svgd_fit(data, mcfg, scfg, layout, init=init)


def scheme_data(scheme: str, meta: MetaDataset, full: MetaDataset | None) -> MetaDataset:
    if scheme == "pacoh_full_target":
        if full is None:
            raise ValueError("pacoh_full_target needs generated tasks (unavailable with --meta-data)")
        return full
    if scheme == "pacoh_partial_target":
        return meta.subset("target")
    if scheme == "wfem":
        return meta
    return MetaDataset([], meta.problem)


def _split_test_file(path, samples: int, problem: str) -> list[EvalTask]:
    raw = load_meta_dataset(path)
    out = []
    per = samples if problem == "regression" else 2 * samples
    for t in raw.tasks:
        cls = type(t)
        out.append(EvalTask(cls(t.x[:per], t.y[:per], "target", t.id),
                            cls(t.x[per:], t.y[per:], "target", t.id + "/test")))
    return out


def prepare_cell(cfg: ExperimentConfig, seed: int):
    """Meta-training data, ideal all-target data and meta-test tasks for one seed."""
    src, tgt = cfg.environments()
    if cfg.meta_data:
        meta = load_meta_dataset(cfg.meta_data)
        if meta.problem != cfg.problem:
            raise ValueError(f"{cfg.meta_data} holds a {meta.problem} meta-dataset")
        full = None
    else:
        meta = build_meta_dataset(cfg.n_tasks, cfg.beta, src, tgt, cfg.samples, cfg.sigma, seed)
        full = build_meta_dataset(cfg.n_tasks, 0.0, tgt, tgt, cfg.samples, cfg.sigma, seed)
    if cfg.test_data:
        tests = _split_test_file(cfg.test_data, cfg.samples, cfg.problem)
    else:
        tests = sample_test_tasks(tgt, cfg.n_test_tasks, cfg.samples, cfg.sigma, seed)
    return meta, full, tests


def run_scheme(spec: SchemeSpec, meta: MetaDataset, tests: Sequence[EvalTask], cfg: ExperimentConfig,
               seed: int, full: MetaDataset | None = None, grid_value: float | None = None) -> list[ResultRow]:
    """Train ``spec`` and score it; failures become a row with ``error`` set."""
    dim = meta.tasks[0].dim if len(meta) else tests[0].train.dim
    layout = cfg.layout(dim)
    k = cfg.particles if spec.approx == "svgd" else 1
    init = initial_ensemble(layout, seed, k, cfg.init_scale)
    t0 = time.perf_counter()
    row = ResultRow(spec.scheme, spec.approx, cfg.effective_alpha, meta.beta if len(meta) else cfg.beta,
                    cfg.deviation, seed, cfg.metric, math.nan)
    try:
        post = fit_scheme(spec, scheme_data(spec.scheme, meta, full), cfg, init, layout, seed)
        row.value = evaluate(post, tests, cfg)
    except (FitError, ValueError, np.linalg.LinAlgError, FloatingPointError) as exc:
        row.error = f"{type(exc).__name__}: {exc}"
    if cfg.record_time:
        row.wall_time = time.perf_counter() - t0
    return [row]


def run_cell(cfg: ExperimentConfig, seed: int) -> list[ResultRow]:
    try:
        meta, full, tests = prepare_cell(cfg, seed)
    except (ValueError, OSError) as exc:
        return [ResultRow(s, cfg.approx, cfg.effective_alpha, cfg.beta, cfg.deviation, seed, cfg.metric,
                          math.nan, None, f"{type(exc).__name__}: {exc}") for s in cfg.schemes]
    rows = []
    for s in cfg.schemes:
        rows += run_scheme(SchemeSpec(s, cfg.approx), meta, tests, cfg, seed, full)
    return rows


def _run_cell_args(args):
    return run_cell(*args)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def rows_to_csv(rows: Sequence[ResultRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(FIELDS)
    for r in rows:
        w.writerow([_fmt(getattr(r, f)) for f in FIELDS])
    return buf.getvalue()


def read_results(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("WFEM_GP_THREADS", "1")))
    except ValueError:
        return 1


def sweep(cfg: ExperimentConfig, out: str | os.PathLike | None = None, workers: int | None = None) -> list[ResultRow]:
    """Run every (grid value, seed) cell and write rows in (grid, scheme, seed) order."""
    grid = list(cfg.grid) if cfg.sweep else [None]
    cells = [(cfg.at(g) if g is not None else cfg, seed) for g in grid for seed in cfg.seeds]
    workers = worker_count() if workers is None else workers
    if workers > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(cells))) as pool:
            results = list(pool.map(_run_cell_args, cells))
    else:
        results = [run_cell(c, s) for c, s in cells]
    by_cell = {(gi, si): rows for (gi, si), rows in
               zip([(gi, si) for gi in range(len(grid)) for si in range(len(cfg.seeds))], results)}
    ordered = []
    for gi in range(len(grid)):
        for scheme in cfg.schemes:
            for si in range(len(cfg.seeds)):
                ordered += [r for r in by_cell[(gi, si)] if r.scheme == scheme]
    if out is not None:
        Path(out).write_text(rows_to_csv(ordered))
    return ordered


def summarize(rows: Sequence[ResultRow], key: str = "deviation") -> dict:
    """Seed-averaged metric per (grid value, scheme)."""
    acc: dict = {}
    for r in rows:
        acc.setdefault((getattr(r, key), r.scheme), []).append(r.value)
    return {k: float(np.mean(v)) for k, v in acc.items()}


# --- posterior curves ------------------------------------------------------

def export_posterior_curve(cfg: ExperimentConfig, x_grid, out=None, seed: int | None = None,
                           test_index: int = 0) -> list[dict]:
    """Posterior mean/std of every scheme on one meta-test task over ``x_grid``."""
    if cfg.problem != "regression":
        raise ValueError("posterior curves are only defined for regression")
    seed = cfg.seeds[0] if seed is None else seed
    meta, full, tests = prepare_cell(cfg, seed)
    task = tests[test_index]
    x_grid = np.asarray(x_grid, dtype=float)
    Xq = x_grid[:, None]
    layout = cfg.layout(task.train.dim)
    rows = []
    for s in cfg.schemes:
        spec = SchemeSpec(s, cfg.approx)
        k = cfg.particles if spec.approx == "svgd" else 1
        post = fit_scheme(spec, scheme_data(s, meta, full), cfg, initial_ensemble(layout, seed, k, cfg.init_scale),
                          layout, seed)
        pred = predictive_ensemble(post, task.train, Xq, cfg.lik())
        truth = task.truth(x_grid) if task.truth is not None else np.full_like(x_grid, np.nan)
        for xi, m, v, f in zip(x_grid, pred.mean, pred.variance, truth):
            rows.append({"scheme": s, "x": float(xi), "mean": float(m), "std": float(np.sqrt(v)), "truth": float(f)})
    if out is not None:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("scheme", "x", "mean", "std", "truth"))
        for r in rows:
            w.writerow([r["scheme"], repr(r["x"]), repr(r["mean"]), repr(r["std"]), repr(r["truth"])])
        Path(out).write_text(buf.getvalue())
    return rows
