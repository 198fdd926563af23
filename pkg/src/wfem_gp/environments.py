"""Task environments (shifted sinusoids and a synthetic 2-way classification
environment) plus JSON ingestion of externally supplied meta-datasets.

Every task draws from its own generator seeded by ``(master seed, stream,
task index)``, so adding tasks never changes existing ones and a source and a
target environment with the same parameters produce identical tasks.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .classify import ClassTaskDataset
from .gp import TaskDataset
from .meta import MetaDataset, batch_size_split

SCHEMA = "wfem-gp/v1"

# generator streams
TRAIN, TEST, PARALLEL = 0, 1, 2


def task_rng(seed: int, stream: int, index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(stream), int(index)])


@dataclass(frozen=True)
class SinusoidEnvParams:
    mu_c: float = 0.0
    a_mean: float = 0.5
    a_std: float = 0.2
    b_low: float = 0.7
    b_high: float = 1.3
    c_std: float = 0.1
    d_mean: float = 5.0
    d_std: float = 0.1

    def shifted(self, deviation: float) -> "SinusoidEnvParams":
        return SinusoidEnvParams(self.mu_c + deviation, self.a_mean, self.a_std, self.b_low,
                                 self.b_high, self.c_std, self.d_mean, self.d_std)


@dataclass(frozen=True)
class SinusoidTask:
    a: float
    b: float
    c: float
    d: float

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.a * x + self.b * np.sin(1.5 * (x - self.c)) + self.d


def sample_sinusoid_task(env: SinusoidEnvParams, rng: np.random.Generator) -> SinusoidTask:
    a = env.a_mean + env.a_std * rng.standard_normal()
    b = rng.uniform(env.b_low, env.b_high)
    c = env.mu_c + env.c_std * rng.standard_normal()
    d = env.d_mean + env.d_std * rng.standard_normal()
    return SinusoidTask(float(a), float(b), float(c), float(d))


def generate_task_dataset(task: SinusoidTask, n_samples: int, sigma: float, rng: np.random.Generator,
                          environment: str = "unlabeled", id: str = "") -> TaskDataset:
    """``n_samples`` noisy observations with inputs uniform on [-5, 5]."""
    if n_samples < 0 or not sigma > 0:
        raise ValueError("need n_samples >= 0 and sigma > 0")
    x = rng.uniform(-5.0, 5.0, size=n_samples)
    y = task(x) + sigma * rng.standard_normal(n_samples)
    return TaskDataset(x[:, None], y, environment, id)


@dataclass(frozen=True)
class SyntheticClassEnv:
    """Two Gaussian clusters in the plane, one per class.

    A task draws its class axis angle around ``axis_angle`` and shifts both
    centers by a common random offset.  The target environment is the source
    one rotated by ``delta`` radians (:meth:`shifted`).
    """

    axis_angle: float = 0.0
    angle_std: float = 0.3
    separation: float = 2.0
    cluster_std: float = 0.6
    offset_std: float = 1.0

    def shifted(self, delta: float) -> "SyntheticClassEnv":
        return SyntheticClassEnv(self.axis_angle + delta, self.angle_std, self.separation,
                                 self.cluster_std, self.offset_std)


@dataclass(frozen=True)
class ClassTaskParams:
    angle: float
    offset: tuple[float, float]
    separation: float
    cluster_std: float

    @property
    def centers(self) -> np.ndarray:
        """Row 0 is the class-0 center, row 1 the class-1 center."""
        axis = np.array([math.cos(self.angle), math.sin(self.angle)])
        o = np.asarray(self.offset)
        return np.stack([o - 0.5 * self.separation * axis, o + 0.5 * self.separation * axis])

    def bayes_predict(self, x) -> np.ndarray:
        """Bayes-optimal labels: the nearer center wins (equal isotropic clusters)."""
        c = self.centers
        x = np.asarray(x, dtype=float)
        return (np.sum((x - c[1]) ** 2, axis=1) < np.sum((x - c[0]) ** 2, axis=1)).astype(float)


def sample_class_params(env: SyntheticClassEnv, rng: np.random.Generator) -> ClassTaskParams:
    angle = env.axis_angle + env.angle_std * rng.standard_normal()
    offset = env.offset_std * rng.standard_normal(2)
    return ClassTaskParams(float(angle), (float(offset[0]), float(offset[1])), env.separation, env.cluster_std)


def _draw_points(params: ClassTaskParams, per_class: int, rng: np.random.Generator):
    c = params.centers
    y = np.repeat([0.0, 1.0], per_class)
    x = c[y.astype(int)] + params.cluster_std * rng.standard_normal((2 * per_class, 2))
    return x, y


def sample_class_task(env: SyntheticClassEnv, shots: int, rng: np.random.Generator, n_query: int = 15,
                      environment: str = "unlabeled", id: str = ""):
    """Balanced 2-way task: (support set, query set, task parameters)."""
    if shots < 1:
        raise ValueError("shots must be >= 1")
    params = sample_class_params(env, rng)
    xs, ys = _draw_points(params, shots, rng)
    xq, yq = _draw_points(params, n_query, rng)
    return (ClassTaskDataset(xs, ys, environment, id),
            ClassTaskDataset(xq, yq, environment, id + "/query"),
            params)


@dataclass
class EvalTask:
    """Meta-test task: fit on ``train``, score on ``test``."""

    train: TaskDataset
    test: TaskDataset
    truth: object = None


def _training_task(env, index, environment, samples, sigma, seed, stream):
    rng = task_rng(seed, stream, index)
    tid = f"{environment}-{index}"
    if isinstance(env, SinusoidEnvParams):
        task = sample_sinusoid_task(env, rng)
        return generate_task_dataset(task, samples, sigma, rng, environment, tid)
    if isinstance(env, SyntheticClassEnv):
        support, _, _ = sample_class_task(env, samples, rng, 0, environment, tid)
        return support
    raise TypeError(f"unsupported environment {type(env).__name__}")


def build_meta_dataset(n_tasks: int, beta: float, source_env, target_env, samples: int = 5,
                       sigma: float = 0.1, seed: int = 0, stream: int = TRAIN) -> MetaDataset:
    """``round(beta N)`` source tasks followed by target tasks.

    ``samples`` is the number of points per regression task, or shots per
    class for classification environments.  Task ``i`` always uses the
    generator for index ``i`` whatever its environment.
    """
    if n_tasks < 1:
        raise ValueError("need at least one task")
    if not 0.0 <= beta <= 1.0:
        raise ValueError("beta must lie in [0, 1]")
    n_src, _ = batch_size_split(n_tasks, beta)
    problem = "classification" if isinstance(source_env, SyntheticClassEnv) else "regression"
    tasks = [
        _training_task(source_env if i < n_src else target_env, i,
                       "source" if i < n_src else "target", samples, sigma, seed, stream)
        for i in range(n_tasks)
    ]
    return MetaDataset(tasks, problem)


def sample_test_tasks(env, n_tasks: int, samples: int = 5, sigma: float = 0.1, seed: int = 0,
                      n_test: int | None = None) -> list[EvalTask]:
    """Held-out tasks from ``env`` with train/test splits.

    Regression tasks get ``samples`` training points and ``n_test`` (default
    ``samples``) test points; classification tasks get ``samples`` shots per
    class and ``n_test`` (default 15) query points per class.
    """
    out = []
    for j in range(n_tasks):
        rng = task_rng(seed, TEST, j)
        tid = f"test-{j}"
        if isinstance(env, SinusoidEnvParams):
            task = sample_sinusoid_task(env, rng)
            train = generate_task_dataset(task, samples, sigma, rng, "target", tid)
            test = generate_task_dataset(task, samples if n_test is None else n_test, sigma, rng,
                                         "target", tid + "/test")
            out.append(EvalTask(train, test, task))
        elif isinstance(env, SyntheticClassEnv):
            support, query, params = sample_class_task(env, samples, rng, 15 if n_test is None else n_test,
                                                       "target", tid)
            out.append(EvalTask(support, query, params))
        else:
            raise TypeError(f"unsupported environment {type(env).__name__}")
    return out


# --- file format -----------------------------------------------------------

class MetaDataFormatError(ValueError):
    pass


def meta_dataset_to_dict(meta: MetaDataset) -> dict:
    return {
        "schema": SCHEMA,
        "problem": meta.problem,
        "tasks": [
            {"id": t.id, "environment": t.environment, "x": t.x.tolist(), "y": t.y.tolist()}
            for t in meta.tasks
        ],
    }


def save_meta_dataset(meta: MetaDataset, path) -> None:
    Path(path).write_text(json.dumps(meta_dataset_to_dict(meta), indent=1))


def meta_dataset_from_dict(doc: dict) -> MetaDataset:
    if not isinstance(doc, dict):
        raise MetaDataFormatError("top level must be an object")
    if doc.get("schema") != SCHEMA:
        raise MetaDataFormatError(f"schema must be {SCHEMA!r}, got {doc.get('schema')!r}")
    problem = doc.get("problem")
    if problem not in ("regression", "classification"):
        raise MetaDataFormatError(f"problem must be 'regression' or 'classification', got {problem!r}")
    raw = doc.get("tasks")
    if not isinstance(raw, list) or not raw:
        raise MetaDataFormatError("'tasks' must be a non-empty list")
    tasks, dim = [], None
    for i, t in enumerate(raw):
        tid = t.get("id", f"#{i}") if isinstance(t, dict) else f"#{i}"
        if not isinstance(t, dict):
            raise MetaDataFormatError(f"task {tid}: must be an object")
        for key in ("id", "environment", "x", "y"):
            if key not in t:
                raise MetaDataFormatError(f"task {tid!r}: missing field {key!r}")
        if t["environment"] not in ("source", "target"):
            raise MetaDataFormatError(f"task {tid!r}: environment must be 'source' or 'target'")
        try:
            x = np.asarray(t["x"], dtype=float)
            y = np.asarray(t["y"], dtype=float)
        except (TypeError, ValueError) as exc:
            raise MetaDataFormatError(f"task {tid!r}: non-numeric or ragged data ({exc})") from None
        if x.ndim != 2:
            raise MetaDataFormatError(f"task {tid!r}: 'x' must be a list of input vectors")
        if dim is None:
            dim = x.shape[1]
        elif x.shape[1] != dim:
            raise MetaDataFormatError(f"task {tid!r}: input dimension {x.shape[1]} differs from {dim}")
        try:
            if problem == "classification":
                tasks.append(ClassTaskDataset.from_signed(x, y, t["environment"], str(t["id"])))
            else:
                tasks.append(TaskDataset(x, y, t["environment"], str(t["id"])))
        except ValueError as exc:
            raise MetaDataFormatError(str(exc)) from None
    return MetaDataset(tasks, problem)


def load_meta_dataset(path) -> MetaDataset:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MetaDataFormatError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return meta_dataset_from_dict(doc)
