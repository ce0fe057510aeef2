"""Small NumPy neural-network engine: layers with explicit forward and backward passes.

Activations are ``(N, C, H, W)`` arrays for the convolutional part and
``(N, F)`` arrays after flattening. Every layer caches what its backward pass
needs during ``forward``; :class:`Sequential` enforces that ordering.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Literal, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .errors import DEGENERATE_BATCH, GRAPH_ERROR, NON_FINITE, SHAPE_ERROR, NetworkError

__all__ = [
    "BatchNorm2d",
    "Conv2D",
    "Flatten",
    "Layer",
    "Linear",
    "Mode",
    "ReLU",
    "Sequential",
    "Softplus",
    "Tanh",
    "Tensor",
    "batchnorm_forward",
    "conv2d_backward",
    "conv2d_forward",
    "kaiming_uniform",
    "l1_loss",
    "relu",
    "softplus",
    "tanh_act",
]

Mode = Literal["train", "eval"]
SOFTPLUS_LINEAR_FROM = 30.0


@dataclass(slots=True)
class Tensor:
    """Parameter or buffer value with an optional gradient of the same shape."""

    value: np.ndarray
    grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.value.shape)

    @property
    def size(self) -> int:
        return int(self.value.size)

    @property
    def values(self) -> np.ndarray:
        return self.value.reshape(-1)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.value)

    def accumulate(self, grad: np.ndarray) -> None:
        if grad.shape != self.value.shape:
            raise NetworkError(SHAPE_ERROR, f"gradient shape {grad.shape} does not match {self.value.shape}")
        if self.grad is None:
            self.grad = grad.astype(self.value.dtype, copy=True)
        else:
            self.grad += grad


def kaiming_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, dtype: np.dtype | str) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


# functional kernels


def conv2d_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Valid stride-1 cross-correlation of ``(N, C, H, W)`` input with ``(O, C, kh, kw)`` kernels."""

    if x.ndim != 4:
        raise NetworkError(SHAPE_ERROR, f"conv input must be (N, C, H, W), got {x.shape}")
    n, c, h, w = x.shape
    o, c_w, kh, kw = weight.shape
    if c != c_w:
        raise NetworkError(SHAPE_ERROR, f"conv expects {c_w} input channels, got {c}")
    if h < kh or w < kw:
        raise NetworkError(SHAPE_ERROR, f"input {h}x{w} smaller than kernel {kh}x{kw}")
    ho, wo = h - kh + 1, w - kw + 1
    acc = np.zeros((n, ho, wo, o), dtype=np.result_type(x, weight))
    for i in range(kh):
        windows = sliding_window_view(x[:, :, i : i + ho, :], kw, axis=3)
        acc += np.tensordot(windows, weight[:, :, i, :], axes=([1, 4], [1, 2]))
    out = acc.transpose(0, 3, 1, 2) + bias[None, :, None, None]
    return np.ascontiguousarray(out)


def conv2d_backward(
    x: np.ndarray, weight: np.ndarray, grad_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(grad_x, grad_weight, grad_bias)`` for :func:`conv2d_forward`."""

    n, c, h, w = x.shape
    o, _, kh, kw = weight.shape
    ho, wo = h - kh + 1, w - kw + 1
    if grad_out.shape != (n, o, ho, wo):
        raise NetworkError(SHAPE_ERROR, f"conv gradient shape {grad_out.shape} does not match output")
    grad_w = np.empty_like(weight)
    grad_x = np.zeros_like(x)
    for i in range(kh):
        windows = sliding_window_view(x[:, :, i : i + ho, :], kw, axis=3)
        grad_w[:, :, i, :] = np.tensordot(grad_out, windows, axes=([0, 2, 3], [0, 2, 3]))
        spread = np.tensordot(grad_out, weight[:, :, i, :], axes=([1], [0]))
        for j in range(kw):
            grad_x[:, :, i : i + ho, j : j + wo] += spread[..., j].transpose(0, 3, 1, 2)
    grad_b = grad_out.sum(axis=(0, 2, 3))
    return grad_x, grad_w, grad_b


def batchnorm_forward(
    x: np.ndarray,
    gamma: np.ndarray,
    beta: np.ndarray,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    mode: Mode,
    *,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-channel batch normalisation of ``(N, C, H, W)`` input.

    Returns ``(y, x_hat, inv_std)``. In train mode ``running_mean`` and
    ``running_var`` are updated in place, the variance with Bessel's correction.
    """

    if x.ndim != 4 or x.shape[1] != gamma.shape[0]:
        raise NetworkError(SHAPE_ERROR, f"batch norm expects (N, {gamma.shape[0]}, H, W), got {x.shape}")
    if mode == "train":
        count = x.shape[0] * x.shape[2] * x.shape[3]
        if count < 2:
            raise NetworkError(DEGENERATE_BATCH, "batch statistics need at least two values per channel")
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var * count / (count - 1)
    elif mode == "eval":
        mean, var = running_mean, running_var
    else:
        raise NetworkError(GRAPH_ERROR, f"unknown mode {mode!r}")
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
    y = gamma[None, :, None, None] * x_hat + beta[None, :, None, None]
    return y, x_hat, inv_std


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def tanh_act(x: np.ndarray) -> np.ndarray:
    return np.tanh(x)


def softplus(x: np.ndarray) -> np.ndarray:
    """``log(1 + exp(x))``, returning ``x`` itself above 30."""

    x = np.asarray(x)
    return np.where(x > SOFTPLUS_LINEAR_FROM, x, np.log1p(np.exp(np.minimum(x, SOFTPLUS_LINEAR_FROM))))


def l1_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean absolute error and its gradient ``sign(pred - target) / pred.size``."""

    if pred.shape != target.shape:
        raise NetworkError(SHAPE_ERROR, f"prediction shape {pred.shape} != target shape {target.shape}")
    diff = pred - target
    value = float(np.mean(np.abs(diff)))
    return value, np.sign(diff) / diff.size


# layers


class Layer:
    """Base layer; stateless layers expose no parameters."""

    kind = "layer"

    def forward(self, x: np.ndarray, mode: Mode) -> np.ndarray:  # pragma: no cover - interface
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:  # pragma: no cover - interface
        raise NotImplementedError

    def parameters(self) -> dict[str, Tensor]:
        return {}

    def buffers(self) -> dict[str, Tensor]:
        return {}


class Conv2D(Layer):
    kind = "conv"

    def __init__(self, in_channels: int, out_channels: int, kernel: tuple[int, int], rng: np.random.Generator, dtype: str = "float64") -> None:
        kh, kw = kernel
        fan_in = in_channels * kh * kw
        self.weight = Tensor(kaiming_uniform(rng, (out_channels, in_channels, kh, kw), fan_in, dtype))
        self.bias = Tensor(np.zeros(out_channels, dtype=dtype))
        self._x: np.ndarray | None = None

    def forward(self, x: np.ndarray, mode: Mode) -> np.ndarray:
        self._x = x
        return conv2d_forward(x, self.weight.value, self.bias.value)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        assert self._x is not None
        grad_x, grad_w, grad_b = conv2d_backward(self._x, self.weight.value, grad)
        self.weight.accumulate(grad_w)
        self.bias.accumulate(grad_b)
        return grad_x

    def parameters(self) -> dict[str, Tensor]:
        return {"weight": self.weight, "bias": self.bias}


class BatchNorm2d(Layer):
    kind = "bn"

    def __init__(self, channels: int, *, momentum: float = 0.1, eps: float = 1e-5, dtype: str = "float64") -> None:
        self.gamma = Tensor(np.ones(channels, dtype=dtype))
        self.beta = Tensor(np.zeros(channels, dtype=dtype))
        self.running_mean = Tensor(np.zeros(channels, dtype=dtype))
        self.running_var = Tensor(np.ones(channels, dtype=dtype))
        self.momentum = momentum
        self.eps = eps
        self._cache: tuple[np.ndarray, np.ndarray, Mode] | None = None

    def forward(self, x: np.ndarray, mode: Mode) -> np.ndarray:
        y, x_hat, inv_std = batchnorm_forward(
            x,
            self.gamma.value,
            self.beta.value,
            self.running_mean.value,
            self.running_var.value,
            mode,
            momentum=self.momentum,
            eps=self.eps,
        )
        self._cache = (x_hat, inv_std, mode)
        return y

    def backward(self, grad: np.ndarray) -> np.ndarray:
        assert self._cache is not None
        x_hat, inv_std, mode = self._cache
        axes = (0, 2, 3)
        self.gamma.accumulate((grad * x_hat).sum(axis=axes))
        self.beta.accumulate(grad.sum(axis=axes))
        scale = (self.gamma.value * inv_std)[None, :, None, None]
        if mode == "eval":
            return grad * scale
        mean_grad = grad.mean(axis=axes, keepdims=True)
        mean_grad_xhat = (grad * x_hat).mean(axis=axes, keepdims=True)
        return scale * (grad - mean_grad - x_hat * mean_grad_xhat)

    def parameters(self) -> dict[str, Tensor]:
        return {"gamma": self.gamma, "beta": self.beta}

    def buffers(self) -> dict[str, Tensor]:
        return {"running_mean": self.running_mean, "running_var": self.running_var}


class Linear(Layer):
    kind = "linear"

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, dtype: str = "float64") -> None:
        self.weight = Tensor(kaiming_uniform(rng, (out_features, in_features), in_features, dtype))
        self.bias = Tensor(np.zeros(out_features, dtype=dtype))
        self._x: np.ndarray | None = None

    def forward(self, x: np.ndarray, mode: Mode) -> np.ndarray:
        if x.ndim != 2 or x.shape[1] != self.weight.shape[1]:
            raise NetworkError(SHAPE_ERROR, f"linear layer expects (N, {self.weight.shape[1]}), got {x.shape}")
        self._x = x
        return x @ self.weight.value.T + self.bias.value

    def backward(self, grad: np.ndarray) -> np.ndarray:
        assert self._x is not None
        self.weight.accumulate(grad.T @ self._x)
        self.bias.accumulate(grad.sum(axis=0))
        return grad @ self.weight.value

    def parameters(self) -> dict[str, Tensor]:
        return {"weight": self.weight, "bias": self.bias}


class ReLU(Layer):
    kind = "relu"

    def __init__(self) -> None:
        self._mask: np.ndarray | None = None

    def forward(self, x: np.ndarray, mode: Mode) -> np.ndarray:
        self._mask = x > 0
        return relu(x)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        assert self._mask is not None
        return grad * self._mask


class Tanh(Layer):
    kind = "tanh"

    def __init__(self) -> None:
        self._y: np.ndarray | None = None

    def forward(self, x: np.ndarray, mode: Mode) -> np.ndarray:
        self._y = tanh_act(x)
        return self._y

    def backward(self, grad: np.ndarray) -> np.ndarray:
        assert self._y is not None
        return grad * (1.0 - self._y * self._y)


class Softplus(Layer):
    kind = "softplus"

    def __init__(self) -> None:
        self._x: np.ndarray | None = None

    def forward(self, x: np.ndarray, mode: Mode) -> np.ndarray:
        self._x = x
        return softplus(x)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        assert self._x is not None
        return grad * expit(self._x)


class Flatten(Layer):
    kind = "flatten"

    def __init__(self) -> None:
        self._shape: tuple[int, ...] | None = None

    def forward(self, x: np.ndarray, mode: Mode) -> np.ndarray:
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        assert self._shape is not None
        return grad.reshape(self._shape)


class Sequential:
    """Ordered, named layers with a recorded forward pass."""

    def __init__(self, layers: Sequence[tuple[str, Layer]]) -> None:
        names = [name for name, _ in layers]
        if len(set(names)) != len(names):
            raise NetworkError(GRAPH_ERROR, "layer names must be unique")
        self.layers: list[tuple[str, Layer]] = list(layers)
        self._recorded = False

    def __iter__(self) -> Iterator[tuple[str, Layer]]:
        return iter(self.layers)

    def forward(self, x: np.ndarray, mode: Mode = "eval") -> np.ndarray:
        out = x
        for name, layer in self.layers:
            out = layer.forward(out, mode)
            if not np.all(np.isfinite(out)):
                self._recorded = False
                raise NetworkError(NON_FINITE, f"non-finite activations after layer {name}", details={"layer": name})
        self._recorded = True
        return out

    def backward(self, grad: np.ndarray) -> np.ndarray:
        """Propagate ``grad`` from the output, accumulating into every parameter."""

        if not self._recorded:
            raise NetworkError(GRAPH_ERROR, "backward called before forward")
        self._recorded = False
        for _, layer in reversed(self.layers):
            grad = layer.backward(grad)
        for name, tensor in self.named_parameters():
            if tensor.grad is not None and not np.all(np.isfinite(tensor.grad)):
                raise NetworkError(NON_FINITE, f"non-finite gradient for {name}", details={"parameter": name})
        return grad

    def zero_grad(self) -> None:
        for _, tensor in self.named_parameters():
            tensor.zero_grad()

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return [(f"{name}.{key}", tensor) for name, layer in self.layers for key, tensor in layer.parameters().items()]

    def named_buffers(self) -> list[tuple[str, Tensor]]:
        return [(f"{name}.{key}", tensor) for name, layer in self.layers for key, tensor in layer.buffers().items()]

    def state(self) -> list[tuple[str, Tensor]]:
        """Parameters followed by buffers, in layer order; the checkpoint order."""

        entries: list[tuple[str, Tensor]] = []
        for name, layer in self.layers:
            entries.extend((f"{name}.{key}", tensor) for key, tensor in layer.parameters().items())
            entries.extend((f"{name}.{key}", tensor) for key, tensor in layer.buffers().items())
        return entries

    def parameter_count(self) -> int:
        return sum(tensor.size for _, tensor in self.named_parameters())
