"""Parameter containers and the layer types shared by every network."""

from __future__ import annotations

import hashlib
import math

import numpy as np

from scvq.tensor import ops
from scvq.tensor.core import Tensor, get_default_dtype


class Parameter(Tensor):
    """A trainable leaf tensor."""

    __slots__ = ()

    def __init__(self, data, name=None):
        super().__init__(np.asarray(data, dtype=get_default_dtype()), requires_grad=True, name=name)


class Module:
    """Collects parameters from attributes (and lists of sub-modules) in definition order."""

    def named_parameters(self, prefix: str = ""):
        for key, val in vars(self).items():
            if isinstance(val, Parameter):
                yield prefix + key, val
            elif isinstance(val, Module):
                yield from val.named_parameters(f"{prefix}{key}/")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{key}/{i}/")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def freeze(self, frozen: bool = True) -> None:
        for p in self.parameters():
            p.requires_grad = not frozen

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self, prefix: str = "") -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters(prefix)}

    def load_state_dict(self, state: dict, prefix: str = "") -> None:
        for name, p in self.named_parameters(prefix):
            if name not in state:
                raise KeyError(f"missing parameter {name!r}")
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {p.shape}")
            p.data = arr.astype(p.dtype, copy=True)

    def astype(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self

    def fingerprint(self) -> str:
        """SHA-256 over parameter names and bytes."""
        h = hashlib.sha256()
        for name, p in self.named_parameters():
            h.update(name.encode())
            h.update(np.ascontiguousarray(p.data).tobytes())
        return h.hexdigest()


def _he_normal(rng: np.random.Generator, shape, fan_in: float) -> np.ndarray:
    return rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)


class Conv2d(Module):
    def __init__(self, cin, cout, k, rng, stride=1, pad=None, bias=True):
        self.stride = stride
        self.pad = (k - 1) // 2 if pad is None else pad
        self.weight = Parameter(_he_normal(rng, (k, k, cin, cout), cin * k * k))
        self.bias = Parameter(np.zeros(cout)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.pad)


class ConvTranspose2d(Module):
    def __init__(self, cin, cout, k, rng, stride=2, pad=1, bias=True):
        self.stride = stride
        self.pad = pad
        fan_in = cin * k * k / (stride * stride)
        self.weight = Parameter(_he_normal(rng, (cin, k, k, cout), fan_in))
        self.bias = Parameter(np.zeros(cout)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv_transpose2d(x, self.weight, self.bias, self.stride, self.pad)


class GroupNorm(Module):
    def __init__(self, channels, groups=4):
        self.groups = groups
        self.gamma = Parameter(np.ones(channels))
        self.beta = Parameter(np.zeros(channels))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.group_norm(x, self.groups, self.gamma, self.beta)


class LayerNorm(Module):
    def __init__(self, dim):
        self.gamma = Parameter(np.ones(dim))
        self.beta = Parameter(np.zeros(dim))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.gamma, self.beta)


class Linear(Module):
    """``y = x @ W + b`` with ``W`` stored as (in, out)."""

    def __init__(self, din, dout, rng, bias=True, std=None):
        std = math.sqrt(1.0 / din) if std is None else std
        self.weight = Parameter(rng.standard_normal((din, dout)) * std)
        self.bias = Parameter(np.zeros(dout)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


class ConvNormAct(Module):
    """3x3 conv, group norm, leaky ReLU."""

    def __init__(self, cin, cout, rng, groups=4):
        self.conv = Conv2d(cin, cout, 3, rng)
        self.norm = GroupNorm(cout, groups)

    def __call__(self, x: Tensor) -> Tensor:
        return ops.leaky_relu(self.norm(self.conv(x)))
