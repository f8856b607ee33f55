"""Small dense networks that host adapters.

Inputs are column-major: a batch is a ``d_in x batch`` matrix.
"""

from __future__ import annotations

import hashlib
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .adapters import AdapterConfig, AdapterLayer, init_adapter, merge
from .autodiff import ShapeError, Tensor

__all__ = ["Linear", "MLP", "build_adapter_mlp", "build_full_mlp", "merge_model"]


class Linear:
    """Dense ``W x + b``; both trainable or both frozen."""

    def __init__(self, weight, bias=None, trainable: bool = True):
        self.weight = Tensor(np.array(weight, dtype=np.float64), requires_grad=trainable, name="weight")
        self.bias = None
        if bias is not None:
            self.bias = Tensor(np.asarray(bias, dtype=np.float64).reshape(-1, 1),
                               requires_grad=trainable, name="bias")
            if self.bias.shape[0] != self.weight.shape[0]:
                raise ShapeError(f"bias length {self.bias.shape[0]} != weight rows {self.weight.shape[0]}")
        self.trainable = trainable

    def __call__(self, x: Tensor, beta: float = 0.0) -> Tensor:
        out = ad.matmul(self.weight, x)
        if self.bias is not None:
            out = ad.add(out, self.bias)
        return out

    def parameters(self) -> list[Tensor]:
        if not self.trainable:
            return []
        return [t for t in (self.weight, self.bias) if t is not None]

    def named_tensors(self) -> dict[str, Tensor]:
        out = {"weight": self.weight}
        if self.bias is not None:
            out["bias"] = self.bias
        return out

    @property
    def nonlinear(self) -> bool:
        return False


class MLP:
    """Stack of layers with ReLU between them (not after the last)."""

    def __init__(self, layers: Sequence):
        if not layers:
            raise ValueError("MLP needs at least one layer")
        self.layers = list(layers)

    def __call__(self, x, beta: float = 0.0) -> Tensor:
        h = ad._as_tensor(x)
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            h = layer(h, beta)
            if i < last:
                h = ad.relu(h)
        return h

    def predict(self, X: np.ndarray, beta: float = 0.0) -> np.ndarray:
        return self(Tensor(X), beta).values

    def parameters(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    @property
    def nonlinear_adapters(self) -> bool:
        return any(layer.nonlinear for layer in self.layers)

    def named_tensors(self) -> dict[str, Tensor]:
        return {f"layer{i}.{k}": t for i, layer in enumerate(self.layers)
                for k, t in layer.named_tensors().items()}


def build_adapter_mlp(base: Sequence[tuple[np.ndarray, np.ndarray | None]], *, rank: int, alpha: float,
                      placement, activation, dora: bool = False, trainable_base: bool = False,
                      seed: int = 0) -> MLP:
    """Attach an adapter to every dense layer of ``base``; layer ``i`` is seeded with ``seed + i``."""
    layers = []
    for i, (W, b) in enumerate(base):
        W = np.asarray(W, dtype=np.float64)
        cfg = AdapterConfig(d_in=W.shape[1], d_out=W.shape[0], rank=rank, alpha=alpha,
                            placement=placement, activation=activation, dora=dora)
        layers.append(init_adapter(cfg, W, rng_seed=seed + i, bias=b, trainable_base=trainable_base))
    return MLP(layers)


def build_full_mlp(base: Sequence[tuple[np.ndarray, np.ndarray | None]]) -> MLP:
    return MLP([Linear(W, b, trainable=True) for W, b in base])


def merge_model(model: MLP) -> MLP:
    """Frozen copy where each adapter layer is folded into one dense weight."""
    layers = []
    for layer in model.layers:
        if isinstance(layer, AdapterLayer):
            bias = None if layer.bias is None else layer.bias.values.copy()
            layers.append(Linear(merge(layer), bias, trainable=False))
        else:
            bias = None if layer.bias is None else layer.bias.values.copy()
            layers.append(Linear(layer.weight.values.copy(), bias, trainable=False))
    return MLP(layers)


def weights_checksum(model: MLP) -> str:
    h = hashlib.sha256()
    for name, t in model.named_tensors().items():
        h.update(name.encode())
        h.update(np.ascontiguousarray(t.values, dtype="<f8").tobytes())
    return h.hexdigest()
