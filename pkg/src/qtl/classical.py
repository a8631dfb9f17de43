"""Dense/residual layers with manual backprop, cross-entropy, SGD and Adam.

All layer methods take batched inputs of shape (batch, width).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .rng import Rng


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_grad(x: np.ndarray) -> np.ndarray:
    # subgradient at 0 is 0
    return (x > 0).astype(np.float64)


def glorot_uniform(rng: Rng, fan_out: int, fan_in: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform_array((fan_out, fan_in), -limit, limit)


@dataclass
class DenseLayer:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    frozen: bool = False

    def __post_init__(self):
        self.weights = np.array(self.weights, dtype=np.float64)
        self.bias = np.array(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ValueError(
                f"inconsistent dense shapes: weights {self.weights.shape}, bias {self.bias.shape}"
            )

    @classmethod
    def init(cls, rng: Rng, n_in: int, n_out: int) -> "DenseLayer":
        return cls(glorot_uniform(rng, n_out, n_in), np.zeros(n_out))

    @property
    def n_in(self) -> int:
        return self.weights.shape[1]

    @property
    def n_out(self) -> int:
        return self.weights.shape[0]

    def params(self) -> list[np.ndarray]:
        return [self.weights, self.bias]

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.n_in:
            raise ValueError(f"expected input width {self.n_in}, got {x.shape[-1]}")
        # broadcast + reduce rather than BLAS: each row's result must not depend on
        # how many other rows share the batch
        return (x[..., None, :] * self.weights).sum(axis=-1) + self.bias

    def backward(self, x: np.ndarray, dy: np.ndarray):
        """Returns ``(dx, [dW, db])`` with parameter gradients summed over the batch."""
        dx = (dy[..., :, None] * self.weights).sum(axis=-2)
        dw = (dy[:, :, None] * x[:, None, :]).sum(axis=0)
        return dx, [dw, dy.sum(axis=0)]


@dataclass
class ResidualBlock:
    """``y = F(x) + x`` with ``F = dense2(relu(dense1(x)))``."""

    first: DenseLayer
    second: DenseLayer

    def __post_init__(self):
        w = self.first.n_in
        if not (self.first.n_out == self.second.n_in and self.second.n_out == w):
            raise ValueError("residual block layers must keep the input width")

    @classmethod
    def init(cls, rng: Rng, width: int) -> "ResidualBlock":
        return cls(DenseLayer.init(rng, width, width), DenseLayer.init(rng, width, width))

    @property
    def frozen(self) -> bool:
        return self.first.frozen and self.second.frozen

    @frozen.setter
    def frozen(self, value: bool) -> None:
        self.first.frozen = self.second.frozen = value

    def params(self) -> list[np.ndarray]:
        return self.first.params() + self.second.params()

    def residual(self, x: np.ndarray) -> np.ndarray:
        return self.second.forward(relu(self.first.forward(x)))

    def forward(self, x: np.ndarray):
        """Returns ``(y, cache)``."""
        pre = self.first.forward(x)
        h = relu(pre)
        return self.second.forward(h) + x, (x, pre, h)

    def backward(self, cache, dy: np.ndarray):
        x, pre, h = cache
        dh, g2 = self.second.backward(h, dy)
        dpre = dh * relu_grad(pre)
        dx, g1 = self.first.backward(x, dpre)
        return dx + dy, g1 + g2


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(logits, label: int) -> tuple[float, np.ndarray]:
    """Softmax cross-entropy ``-log p_label`` and its gradient ``p - onehot``."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 1 or logits.size < 2:
        raise ValueError("need a 1-d vector of at least 2 logits")
    if not 0 <= label < logits.size:
        raise ValueError(f"label {label} out of range for {logits.size} classes")
    loss, grad = cross_entropy_batch(logits[None, :], np.array([label]))
    return float(loss[0]), grad[0]


def cross_entropy_batch(logits: np.ndarray, labels: np.ndarray):
    """Per-sample losses (B,) and gradients (B, C)."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= logits.shape[1]:
        raise ValueError("label out of range")
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(logits.shape[0])
    losses = log_norm - z[rows, labels]
    grad = np.exp(z - log_norm[:, None])
    grad[rows, labels] -= 1.0
    return losses, grad


def binary_cross_entropy(p: float, y: int) -> float:
    """``-[y log p + (1 - y) log(1 - p)]`` for a positive-class probability ``p``."""
    if y not in (0, 1):
        raise ValueError("y must be 0 or 1")
    return -(y * math.log(p) + (1 - y) * math.log(1.0 - p))


@dataclass(frozen=True)
class StepDecay:
    factor: float = 0.1
    every_n_epochs: int = 10


@dataclass(frozen=True)
class ConstThenLinear:
    const_epochs: int = 25
    decay_epochs: int = 25


def make_schedule(name: str, **kwargs):
    if name in ("step", "step_decay", "StepDecay"):
        return StepDecay(**kwargs)
    if name in ("const_linear", "const_then_linear", "ConstThenLinear"):
        return ConstThenLinear(**kwargs)
    raise ValueError(f"unknown schedule {name!r}")


def schedule_name(schedule) -> str:
    return "step" if isinstance(schedule, StepDecay) else "const_linear"


@dataclass
class OptimizerState:
    kind: str = "adam"
    learning_rate: float = 0.0004
    schedule: StepDecay | ConstThenLinear = field(default_factory=StepDecay)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    step_count: int = 0

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"optimizer must be 'sgd' or 'adam', got {self.kind!r}")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")


def schedule_lr(state: OptimizerState, epoch: int) -> float:
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    lr0, s = state.learning_rate, state.schedule
    if isinstance(s, StepDecay):
        return lr0 * s.factor ** (epoch // s.every_n_epochs)
    if epoch < s.const_epochs:
        return lr0
    end = s.const_epochs + s.decay_epochs
    if epoch >= end:
        return 0.0
    return lr0 * (end - epoch) / s.decay_epochs


def _check_shapes(params, grads):
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    for p, g in zip(params, grads):
        if p.shape != np.shape(g):
            raise ValueError(f"gradient shape {np.shape(g)} does not match {p.shape}")


def sgd_step(params: list[np.ndarray], grads: list[np.ndarray], lr: float) -> None:
    """In-place ``theta <- theta - lr * grad``."""
    _check_shapes(params, grads)
    for p, g in zip(params, grads):
        p -= lr * g


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: OptimizerState,
              lr: float) -> None:
    """In-place bias-corrected Adam update; moments live on ``state``."""
    _check_shapes(params, grads)
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def optimizer_step(params, grads, state: OptimizerState, epoch: int) -> None:
    lr = schedule_lr(state, epoch)
    if state.kind == "sgd":
        sgd_step(params, grads, lr)
    else:
        adam_step(params, grads, state, lr)
