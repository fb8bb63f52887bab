"""Parameters, modules and the basic differentiable layers."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DimensionError

INIT_STD = 0.02


class Parameter(Tensor):
    """A named leaf tensor that accumulates gradients."""

    def __init__(self, data, name: str | None = None):
        super().__init__(data, requires_grad=True, name=name)


def trunc_normal(rng: np.random.Generator | None, shape, std: float = INIT_STD) -> np.ndarray:
    """Normal(0, std) truncated to two standard deviations; zeros when ``rng`` is None."""
    if rng is None:
        return np.zeros(shape, dtype=ad.default_dtype())
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return (out * std).astype(ad.default_dtype())


class Module:
    """Container whose Parameter / Module attributes form a named parameter tree.

    Attribute insertion order fixes parameter order, so checkpoints and
    optimizer state line up across runs.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        seen = set()
        for key, value in vars(self).items():
            for name, p in _walk(value, prefix + key):
                if id(p) not in seen:
                    seen.add(id(p))
                    yield name, p

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        if missing:
            raise DimensionError(f"missing parameter {sorted(missing)[0]} ({len(missing)} missing)")
        for name, p in own.items():
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise DimensionError(f"{name}: shape {value.shape} != expected {p.shape}")
            p.data = value.astype(p.dtype, copy=True)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_params(self) -> int:
        return int(sum(p.data.size for p in self.parameters()))

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _walk(value, name):
    if isinstance(value, Parameter):
        if value.name is None:
            value.name = name
        yield name, value
    elif isinstance(value, Module):
        yield from value.named_parameters(name + ".")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk(item, f"{name}.{i}")


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator | None = None,
                 bias: bool = True):
        self.weight = Parameter(trunc_normal(rng, (d_in, d_out)))
        self.bias = Parameter(np.zeros(d_out, dtype=ad.default_dtype())) if bias else None

    @property
    def d_in(self) -> int:
        return self.weight.shape[0]

    @property
    def d_out(self) -> int:
        return self.weight.shape[1]

    def forward(self, x) -> Tensor:
        return ad.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-6):
        self.weight = Parameter(np.ones(dim, dtype=ad.default_dtype()))
        self.bias = Parameter(np.zeros(dim, dtype=ad.default_dtype()))
        self.eps = eps

    def forward(self, x) -> Tensor:
        return ad.layer_norm(x, self.weight, self.bias, self.eps)


class MLP(Module):
    """Two linear layers with GELU between; hidden width is ``ratio * dim``."""

    def __init__(self, dim: int, rng: np.random.Generator | None = None, ratio: int = 4):
        self.fc1 = Linear(dim, ratio * dim, rng)
        self.fc2 = Linear(ratio * dim, dim, rng)

    @property
    def hidden(self) -> int:
        return self.fc1.d_out

    def forward(self, x) -> Tensor:
        return self.fc2(ad.gelu(self.fc1(x)))


def linear_forward(x, W, b) -> Tensor:
    return ad.linear(x, W, b)


def layer_norm(x, gamma, beta, eps: float = 1e-6) -> Tensor:
    return ad.layer_norm(x, gamma, beta, eps)


def mlp_forward(x, mlp: MLP) -> Tensor:
    return mlp(x)
