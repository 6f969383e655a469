"""Layers with explicit forward/backward passes over numpy arrays.

Activations are laid out ``(batch, channels, length)`` for the 1-d layers and
``(batch, features)`` for dense ones. Every layer caches what it needs from
the last forward pass; ``backward`` returns the gradient with respect to the
layer input and accumulates parameter gradients into ``Tensor.grad``.
"""
from __future__ import annotations

from typing import Dict, List, Optional, Sequence

import numpy as np

from ..core import PLCError


class NNError(PLCError, RuntimeError):
    pass


class ShapeError(NNError, ValueError):
    pass


class Tensor:
    """A parameter array with its gradient buffer."""

    def __init__(self, data, name: str = "", frozen: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = np.zeros_like(self.data)
        self.name = name
        self.frozen = frozen

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def zero_grad(self):
        self.grad[...] = 0.0

    def __repr__(self):
        return f"Tensor({self.name!r}, shape={self.shape}, frozen={self.frozen})"


def _uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Layer:
    name = "layer"

    def __init__(self):
        self._cache = None

    def params(self) -> List[Tensor]:
        return []

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def spec(self) -> dict:
        return {"type": type(self).__name__}

    def __call__(self, x):
        return self.forward(x)

    def _need_cache(self):
        if self._cache is None:
            raise NNError(f"{self.name}: backward called before forward")
        return self._cache

    def freeze(self, frozen: bool = True):
        for p in self.params():
            p.frozen = frozen
        return self


class Dense(Layer):
    """``y = x W^T + b`` over the last axis; ``W`` has shape (out, in)."""

    def __init__(self, in_features: int, out_features: int, rng: Optional[np.random.Generator] = None, bias: bool = True):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.in_features, self.out_features = in_features, out_features
        self.W = Tensor(_uniform(rng, in_features, (out_features, in_features)), "W")
        self.b = Tensor(_uniform(rng, in_features, out_features), "b") if bias else None
        self.name = f"Dense({in_features}->{out_features})"

    def params(self):
        return [self.W] + ([self.b] if self.b is not None else [])

    def forward(self, x):
        if x.shape[-1] != self.in_features:
            raise ShapeError(f"{self.name}: expected last dimension {self.in_features}, got {x.shape}")
        self._cache = x
        y = x @ self.W.data.T
        if self.b is not None:
            y = y + self.b.data
        return y

    def backward(self, grad):
        x = self._need_cache()
        x2 = x.reshape(-1, self.in_features)
        g2 = grad.reshape(-1, self.out_features)
        if not self.W.frozen:
            self.W.grad += g2.T @ x2
        if self.b is not None and not self.b.frozen:
            self.b.grad += g2.sum(axis=0)
        return grad @ self.W.data

    def spec(self):
        return {"type": "Dense", "in_features": self.in_features, "out_features": self.out_features, "bias": self.b is not None}


class Conv1d(Layer):
    """Dilated 1-d convolution with stride one.

    ``padding`` is ``"same"`` (output length equals input length), ``"causal"``
    (all padding on the left) or ``"valid"``.
    """

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        dilation: int = 1,
        padding: str = "same",
        rng: Optional[np.random.Generator] = None,
    ):
        super().__init__()
        if padding not in ("same", "causal", "valid"):
            raise ValueError(f"unknown padding {padding!r}")
        rng = rng or np.random.default_rng(0)
        self.in_channels, self.out_channels = in_channels, out_channels
        self.kernel_size, self.dilation, self.padding = kernel_size, dilation, padding
        fan_in = in_channels * kernel_size
        self.W = Tensor(_uniform(rng, fan_in, (out_channels, in_channels, kernel_size)), "W")
        self.b = Tensor(_uniform(rng, fan_in, out_channels), "b")
        self.name = f"Conv1d({in_channels}->{out_channels}, k={kernel_size}, d={dilation})"

    @property
    def receptive_field(self) -> int:
        return 1 + (self.kernel_size - 1) * self.dilation

    def params(self):
        return [self.W, self.b]

    def _pads(self):
        total = (self.kernel_size - 1) * self.dilation
        if self.padding == "same":
            return total // 2, total - total // 2
        if self.padding == "causal":
            return total, 0
        return 0, 0

    def forward(self, x):
        if x.ndim != 3 or x.shape[1] != self.in_channels:
            raise ShapeError(f"{self.name}: expected (batch, {self.in_channels}, length), got {x.shape}")
        left, right = self._pads()
        xp = np.pad(x, ((0, 0), (0, 0), (left, right))) if left or right else x
        L_out = xp.shape[2] - (self.kernel_size - 1) * self.dilation
        if L_out < 1:
            raise ShapeError(f"{self.name}: input length {x.shape[2]} shorter than the receptive field")
        d = self.dilation
        cols = np.stack([xp[:, :, k * d : k * d + L_out] for k in range(self.kernel_size)], axis=2)
        cols = cols.reshape(x.shape[0], self.in_channels * self.kernel_size, L_out)
        self._cache = (cols, x.shape, xp.shape)
        W2 = self.W.data.reshape(self.out_channels, -1)
        return np.matmul(W2, cols) + self.b.data[None, :, None]

    def backward(self, grad):
        cols, x_shape, xp_shape = self._need_cache()
        B, _, L_out = grad.shape
        ck = self.in_channels * self.kernel_size
        if not self.W.frozen:
            gw = grad.transpose(1, 0, 2).reshape(self.out_channels, -1) @ cols.transpose(1, 0, 2).reshape(ck, -1).T
            self.W.grad += gw.reshape(self.W.shape)
        if not self.b.frozen:
            self.b.grad += grad.sum(axis=(0, 2))
        W2 = self.W.data.reshape(self.out_channels, -1)
        gcols = np.matmul(W2.T, grad).reshape(B, self.in_channels, self.kernel_size, L_out)
        gxp = np.zeros(xp_shape)
        d = self.dilation
        for k in range(self.kernel_size):
            gxp[:, :, k * d : k * d + L_out] += gcols[:, :, k, :]
        left, _ = self._pads()
        return gxp[:, :, left : left + x_shape[2]]

    def spec(self):
        return {
            "type": "Conv1d",
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "kernel_size": self.kernel_size,
            "dilation": self.dilation,
            "padding": self.padding,
        }


class ReLU(Layer):
    name = "ReLU"

    def forward(self, x):
        self._cache = x > 0
        return np.where(self._cache, x, 0.0)

    def backward(self, grad):
        return grad * self._need_cache()


class Tanh(Layer):
    name = "Tanh"

    def forward(self, x):
        self._cache = np.tanh(x)
        return self._cache

    def backward(self, grad):
        return grad * (1.0 - self._need_cache() ** 2)


class Sigmoid(Layer):
    name = "Sigmoid"

    def forward(self, x):
        self._cache = 1.0 / (1.0 + np.exp(-x))
        return self._cache

    def backward(self, grad):
        s = self._need_cache()
        return grad * s * (1.0 - s)


class Standardize(Layer):
    """Fixed affine map ``(x - shift) / scale``."""

    def __init__(self, shift: float = 0.0, scale: float = 1.0):
        super().__init__()
        self.shift, self.scale = float(shift), float(scale)
        self.name = f"Standardize({shift}, {scale})"

    def forward(self, x):
        self._cache = True
        return (x - self.shift) / self.scale

    def backward(self, grad):
        self._need_cache()
        return grad / self.scale

    def spec(self):
        return {"type": "Standardize", "shift": self.shift, "scale": self.scale}


class AvgPool1d(Layer):
    """Non-overlapping mean pooling along the last axis; a ragged tail is dropped."""

    def __init__(self, size: int = 2):
        super().__init__()
        self.size = size
        self.name = f"AvgPool1d({size})"

    def forward(self, x):
        B, C, L = x.shape
        n = L // self.size
        if n < 1:
            raise ShapeError(f"{self.name}: input length {L} shorter than pool size")
        self._cache = x.shape
        return x[:, :, : n * self.size].reshape(B, C, n, self.size).mean(axis=3)

    def backward(self, grad):
        shape = self._need_cache()
        out = np.zeros(shape)
        n = grad.shape[2]
        out[:, :, : n * self.size] = np.repeat(grad, self.size, axis=2) / self.size
        return out

    def spec(self):
        return {"type": "AvgPool1d", "size": self.size}


class MeanPool(Layer):
    """Mean over one axis, kept as a length-one axis."""

    def __init__(self, axis: int = 1):
        super().__init__()
        self.axis = axis
        self.name = f"MeanPool(axis={axis})"

    def forward(self, x):
        self._cache = x.shape
        return x.mean(axis=self.axis, keepdims=True)

    def backward(self, grad):
        shape = self._need_cache()
        return np.broadcast_to(grad, shape) / shape[self.axis]

    def spec(self):
        return {"type": "MeanPool", "axis": self.axis}


class Flatten(Layer):
    name = "Flatten"

    def forward(self, x):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._need_cache())


class ToSequence(Layer):
    """``(items, features)`` to a single-batch sequence ``(1, features, items)``."""

    name = "ToSequence"

    def forward(self, x):
        if x.ndim != 2:
            raise ShapeError(f"{self.name}: expected (items, features), got {x.shape}")
        self._cache = True
        return x.T[None]

    def backward(self, grad):
        self._need_cache()
        return grad[0].T


class Sequential(Layer):
    """Ordered container; also serves as a whole network."""

    def __init__(self, layers: Sequence[Layer], seed: Optional[int] = None):
        super().__init__()
        self.layers = list(layers)
        self.seed = seed
        self.name = "Sequential"
        self._forwarded = False

    def params(self):
        return [p for layer in self.layers for p in layer.params()]

    def named_params(self, prefix: str = "") -> Dict[str, Tensor]:
        out = {}
        for i, layer in enumerate(self.layers):
            if isinstance(layer, (Sequential, Residual)):
                out.update(layer.named_params(f"{prefix}{i}."))
            else:
                for p in layer.params():
                    out[f"{prefix}{i}.{p.name}"] = p
        return out

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        for i, layer in enumerate(self.layers):
            try:
                x = layer.forward(x)
            except ShapeError as exc:
                raise ShapeError(f"layer {i} ({layer.name}): {exc}") from None
        self._forwarded = True
        return x

    def backward(self, grad):
        if not self._forwarded:
            raise NNError("backward called before forward")
        grad = np.asarray(grad, dtype=np.float64)
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def zero_grad(self):
        for p in self.params():
            p.zero_grad()

    def n_params(self) -> int:
        return int(sum(p.size for p in self.params()))

    def spec(self):
        return {"type": "Sequential", "layers": [layer.spec() for layer in self.layers]}


class Residual(Layer):
    """``y = body(x) + shortcut(x)``; the shortcut defaults to the identity."""

    def __init__(self, body: Sequential, shortcut: Optional[Layer] = None):
        super().__init__()
        self.body = body
        self.shortcut = shortcut
        self.name = "Residual"

    def params(self):
        return self.body.params() + (self.shortcut.params() if self.shortcut else [])

    def named_params(self, prefix: str = "") -> Dict[str, Tensor]:
        out = self.body.named_params(prefix + "body.")
        if self.shortcut is not None:
            for p in self.shortcut.params():
                out[f"{prefix}shortcut.{p.name}"] = p
        return out

    def forward(self, x):
        self._cache = True
        y = self.body.forward(x)
        s = self.shortcut.forward(x) if self.shortcut is not None else x
        if y.shape != s.shape:
            raise ShapeError(f"residual branch shape {y.shape} does not match shortcut {s.shape}")
        return y + s

    def backward(self, grad):
        self._need_cache()
        g = self.body.backward(grad)
        return g + (self.shortcut.backward(grad) if self.shortcut is not None else grad)

    def spec(self):
        return {
            "type": "Residual",
            "body": self.body.spec(),
            "shortcut": self.shortcut.spec() if self.shortcut is not None else None,
        }


def residual_block(in_ch: int, out_ch: int, kernel_size: int, dilation: int, rng) -> Residual:
    """conv-relu-conv with a 1x1 projection shortcut when channel counts differ."""
    body = Sequential(
        [
            Conv1d(in_ch, out_ch, kernel_size, dilation, "same", rng),
            ReLU(),
            Conv1d(out_ch, out_ch, kernel_size, dilation, "same", rng),
        ]
    )
    shortcut = Conv1d(in_ch, out_ch, 1, 1, "same", rng) if in_ch != out_ch else None
    return Residual(body, shortcut)


def layer_from_spec(spec: dict) -> Layer:
    kind = spec["type"]
    if kind == "Dense":
        return Dense(spec["in_features"], spec["out_features"], bias=spec.get("bias", True))
    if kind == "Conv1d":
        return Conv1d(spec["in_channels"], spec["out_channels"], spec["kernel_size"], spec["dilation"], spec["padding"])
    if kind == "Sequential":
        return Sequential([layer_from_spec(s) for s in spec["layers"]])
    if kind == "Residual":
        shortcut = layer_from_spec(spec["shortcut"]) if spec.get("shortcut") else None
        return Residual(layer_from_spec(spec["body"]), shortcut)
    if kind == "Standardize":
        return Standardize(spec["shift"], spec["scale"])
    if kind == "AvgPool1d":
        return AvgPool1d(spec["size"])
    if kind == "MeanPool":
        return MeanPool(spec["axis"])
    simple = {"ReLU": ReLU, "Tanh": Tanh, "Sigmoid": Sigmoid, "Flatten": Flatten, "ToSequence": ToSequence}
    if kind in simple:
        return simple[kind]()
    raise NNError(f"unknown layer type {kind!r}")
