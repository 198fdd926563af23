"""Multilayer perceptrons over a flat hyperparameter vector, plus Adam."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import autodiff as ad


@dataclass(frozen=True)
class MlpSpec:
    """Fully connected tanh network; the output layer is linear."""

    input_dim: int
    hidden_layers: tuple[int, ...] = (32, 32, 32, 32)
    output_dim: int = 1
    activation: str = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "hidden_layers", tuple(int(h) for h in self.hidden_layers))
        widths = (self.input_dim, *self.hidden_layers, self.output_dim)
        if any(w < 1 for w in widths):
            raise ValueError(f"all layer widths must be >= 1, got {widths}")
        if self.activation != "tanh":
            raise ValueError(f"unsupported activation {self.activation!r}")

    @property
    def widths(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_layers, self.output_dim)

    def layer_shapes(self) -> list[tuple[int, int]]:
        w = self.widths
        return [(w[i], w[i + 1]) for i in range(len(w) - 1)]

    @property
    def size(self) -> int:
        return sum(fi * fo + fo for fi, fo in self.layer_shapes())


@dataclass(frozen=True)
class ParamLayout:
    """Named MLP blocks packed back to back into one vector."""

    blocks: Mapping[str, MlpSpec]
    ranges: Mapping[str, tuple[int, int]] = field(init=False)

    def __post_init__(self):
        ranges, start = {}, 0
        for name, spec in self.blocks.items():
            ranges[name] = (start, start + spec.size)
            start += spec.size
        object.__setattr__(self, "ranges", ranges)

    @property
    def size(self) -> int:
        return sum(spec.size for spec in self.blocks.values())

    def unpack(self, values, block: str):
        """List of (W, b) pairs for ``block``; works on arrays and Vars."""
        spec = self.blocks[block]
        pos = self.ranges[block][0]
        layers = []
        for fi, fo in spec.layer_shapes():
            W = ad.reshape(values[pos:pos + fi * fo], (fi, fo))
            pos += fi * fo
            b = values[pos:pos + fo]
            pos += fo
            layers.append((W, b))
        return layers


@dataclass(frozen=True)
class HyperParams:
    """Flat hyperparameter vector with its block layout.

    ``values`` is normally an ndarray; inside a gradient computation it is a
    :class:`~wfem_gp.autodiff.Var` on the active tape.
    """

    values: object
    layout: ParamLayout

    def __post_init__(self):
        n = np.shape(ad.value_of(self.values))
        if n != (self.layout.size,):
            raise ValueError(f"parameter vector of shape {n} does not match layout size {self.layout.size}")

    def with_values(self, values) -> "HyperParams":
        return HyperParams(values, self.layout)

    def block(self, name: str):
        lo, hi = self.layout.ranges[name]
        return self.values[lo:hi]


def deep_kernel_layout(input_dim: int, hidden_layers=(32, 32, 32, 32), feature_dim: int = 2) -> ParamLayout:
    """Layout holding a scalar mean network and a feature network."""
    return ParamLayout({
        "mean": MlpSpec(input_dim, hidden_layers, 1),
        "feature": MlpSpec(input_dim, hidden_layers, feature_dim),
    })


def mlp_forward(params: HyperParams, block: str, inputs):
    """Evaluate the ``block`` network on ``inputs`` of shape (..., input_dim)."""
    spec = params.layout.blocks[block]
    shape = np.shape(ad.value_of(inputs))
    if len(shape) == 0 or shape[-1] != spec.input_dim:
        raise ValueError(f"{block} network expects inputs of trailing dimension {spec.input_dim}, got shape {shape}")
    h = inputs
    squeeze = len(shape) == 1
    if squeeze:
        h = ad.reshape(h, (1, spec.input_dim))
    layers = params.layout.unpack(params.values, block)
    for i, (W, b) in enumerate(layers):
        h = ad.matmul(h, W) + b
        if i < len(layers) - 1:
            h = ad.tanh(h)
    if squeeze:
        h = ad.reshape(h, (spec.output_dim,))
    return h


def init_params(layout: ParamLayout, rng: np.random.Generator, scale: float = 1.0) -> HyperParams:
    """Gaussian weights with std ``scale / sqrt(fan_in)``, zero biases."""
    if scale <= 0:
        raise ValueError("scale must be positive")
    values = np.zeros(layout.size)
    for name, spec in layout.blocks.items():
        pos = layout.ranges[name][0]
        for fi, fo in spec.layer_shapes():
            values[pos:pos + fi * fo] = rng.normal(0.0, scale / np.sqrt(fi), size=fi * fo)
            pos += fi * fo + fo
    return HyperParams(values, layout)


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, n: int, lr: float = 1e-2, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        return cls(np.zeros(n), np.zeros(n), 0, lr, beta1, beta2, eps)


def adam_step(state: AdamState, params: np.ndarray, grad: np.ndarray) -> tuple[AdamState, np.ndarray]:
    """One bias-corrected Adam descent step; returns new state and params."""
    params = np.asarray(params, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if grad.shape != params.shape or state.m.shape != params.shape:
        raise ValueError(f"shape mismatch: params {params.shape}, grad {grad.shape}, state {state.m.shape}")
    t = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return AdamState(m, v, t, state.lr, state.beta1, state.beta2, state.eps), new
