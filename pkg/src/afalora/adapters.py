"""Low-rank adapter layers with annealed activations.

The adapter output is ``W0 x + s * phi3(B phi2(A phi1(x)))`` with
``s = alpha / r``; each ``phi_i`` is the annealed activation when its
placement slot is set and the identity otherwise. At ``beta = 0`` every
placement reduces to ``W0 x + s B A x`` and merges into a single matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .activations import ActivationKind, annealed_apply
from .autodiff import ShapeError, Tensor

__all__ = [
    "Placement",
    "PLACEMENTS",
    "AFA_PLACEMENTS",
    "AdapterConfig",
    "AdapterLayer",
    "init_adapter",
    "forward",
    "dora_forward",
    "lora_forward",
    "merge",
    "merge_error",
    "COLNORM_EPS",
]

COLNORM_EPS = 1e-8


@dataclass(frozen=True)
class Placement:
    """Which slots carry the annealed activation: before A, between A and B, after B."""

    pre: bool = False
    mid: bool = False
    post: bool = False

    @property
    def name(self) -> str:
        parts = []
        if self.pre:
            parts.append("sigma")
        parts.append("a")
        if self.mid:
            parts.append("sigma")
        parts.append("b")
        if self.post:
            parts.append("sigma")
        return "none" if not self.any else "-".join(parts)

    @property
    def label(self) -> str:
        """Compact label as used in result tables, e.g. ``A-σ-B``."""
        if not self.any:
            return "--"
        return self.name.replace("sigma", "σ").replace("a", "A").replace("b", "B")

    @property
    def any(self) -> bool:
        return self.pre or self.mid or self.post

    @classmethod
    def parse(cls, value) -> "Placement":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("σ", "sigma").replace("_", "-")
        try:
            return _BY_NAME[key]
        except KeyError:
            raise ValueError(
                f"unknown placement {value!r}; expected one of {', '.join(_BY_NAME)}"
            ) from None

    def __str__(self) -> str:
        return self.name


PLACEMENTS = tuple(
    Placement(pre, mid, post)
    for pre, mid, post in [
        (0, 0, 0),
        (1, 0, 0),
        (0, 1, 0),
        (0, 0, 1),
        (1, 1, 0),
        (0, 1, 1),
        (1, 0, 1),
        (1, 1, 1),
    ]
)
AFA_PLACEMENTS = PLACEMENTS[1:]
_BY_NAME = {p.name: p for p in PLACEMENTS}


@dataclass(frozen=True)
class AdapterConfig:
    d_in: int
    d_out: int
    rank: int = 4
    alpha: float = 8.0
    placement: Placement = field(default_factory=Placement)
    activation: ActivationKind = ActivationKind.RELU
    dora: bool = False

    def __post_init__(self):
        object.__setattr__(self, "placement", Placement.parse(self.placement))
        object.__setattr__(self, "activation", ActivationKind.parse(self.activation))
        for key in ("d_in", "d_out", "rank"):
            if int(getattr(self, key)) < 1:
                raise ValueError(f"{key} must be a positive integer")
        if self.rank > min(self.d_in, self.d_out):
            raise ValueError(f"rank {self.rank} exceeds min(d_in, d_out) = {min(self.d_in, self.d_out)}")
        if not (np.isfinite(self.alpha) and self.alpha > 0):
            raise ValueError(f"alpha must be finite and positive, got {self.alpha}")

    @property
    def scaling(self) -> float:
        return float(self.alpha) / self.rank

    @property
    def nonlinear(self) -> bool:
        """True when some slot carries a non-identity activation."""
        return self.placement.any and self.activation is not ActivationKind.IDENTITY


class AdapterLayer:
    """Frozen (or trainable) base weight plus low-rank factors.

    ``m`` is the DoRA magnitude row (1 x d_in), present only when
    ``config.dora`` is set. ``bias`` is an optional d_out x 1 column that is
    trained together with the base weight.
    """

    def __init__(self, config: AdapterConfig, W0: Tensor, A: Tensor, B: Tensor,
                 m: Tensor | None = None, bias: Tensor | None = None, trainable_base: bool = False):
        self.config = config
        self.W0 = W0
        self.A = A
        self.B = B
        self.m = m
        self.bias = bias
        self.trainable_base = trainable_base
        self.W0.requires_grad = trainable_base
        self.W0.grad = np.zeros_like(W0.values) if trainable_base else None
        if bias is not None:
            bias.requires_grad = trainable_base
            bias.grad = np.zeros_like(bias.values) if trainable_base else None

    def parameters(self) -> list[Tensor]:
        params = [self.A, self.B]
        if self.m is not None:
            params.append(self.m)
        if self.trainable_base:
            params.append(self.W0)
            if self.bias is not None:
                params.append(self.bias)
        return params

    def named_tensors(self) -> dict[str, Tensor]:
        out = {"W0": self.W0, "A": self.A, "B": self.B}
        if self.m is not None:
            out["m"] = self.m
        if self.bias is not None:
            out["bias"] = self.bias
        return out

    def __call__(self, x: Tensor, beta: float) -> Tensor:
        out = dora_forward(self, x, beta) if self.config.dora else forward(self, x, beta)
        if self.bias is not None:
            out = ad.add(out, self.bias)
        return out

    def merged_weight(self) -> np.ndarray:
        return merge(self)

    @property
    def nonlinear(self) -> bool:
        return self.config.nonlinear

    def __repr__(self) -> str:
        c = self.config
        return (f"AdapterLayer({c.d_out}x{c.d_in}, r={c.rank}, alpha={c.alpha}, "
                f"placement={c.placement.name}, activation={c.activation.value}, dora={c.dora})")


def init_adapter(config: AdapterConfig, W0, rng_seed: int, bias=None,
                 trainable_base: bool = False) -> AdapterLayer:
    """A ~ N(0, 1/d_in), B = 0, DoRA magnitude = column norms of W0."""
    W0 = Tensor(W0.values.copy() if isinstance(W0, Tensor) else W0, name="W0")
    if W0.shape != (config.d_out, config.d_in):
        raise ShapeError(f"W0 has shape {W0.shape}, config expects {(config.d_out, config.d_in)}")
    rng = np.random.default_rng(rng_seed)
    A = Tensor(rng.standard_normal((config.rank, config.d_in)) / np.sqrt(config.d_in),
               requires_grad=True, name="A")
    B = Tensor(np.zeros((config.d_out, config.rank)), requires_grad=True, name="B")
    m = None
    if config.dora:
        norms = np.sqrt((W0.values ** 2).sum(axis=0, keepdims=True))
        m = Tensor(np.maximum(norms, COLNORM_EPS), requires_grad=True, name="m")
    if bias is not None:
        bias = Tensor(bias.values.copy() if isinstance(bias, Tensor) else np.asarray(bias).reshape(-1, 1),
                      name="bias")
        if bias.shape != (config.d_out, 1):
            raise ShapeError(f"bias has shape {bias.shape}, expected {(config.d_out, 1)}")
    return AdapterLayer(config, W0, A, B, m=m, bias=bias, trainable_base=trainable_base)


def _check_input(layer: AdapterLayer, x: Tensor) -> None:
    if x.shape[0] != layer.config.d_in:
        raise ShapeError(f"input has {x.shape[0]} rows, layer expects d_in={layer.config.d_in}")


def _branch(layer: AdapterLayer, x: Tensor, beta: float) -> Tensor:
    c = layer.config
    p, kind = c.placement, c.activation
    z = annealed_apply(kind, x, beta) if p.pre else x
    z = ad.matmul(layer.A, z)
    if p.mid:
        z = annealed_apply(kind, z, beta)
    z = ad.matmul(layer.B, z)
    if p.post:
        z = annealed_apply(kind, z, beta)
    return z


def forward(layer: AdapterLayer, x, beta: float) -> Tensor:
    """Adapter output without bias, d_out x batch."""
    x = ad._as_tensor(x)
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    _check_input(layer, x)
    base = ad.matmul(layer.W0, x)
    return ad.add(base, ad.scale(_branch(layer, x, beta), layer.config.scaling))


def lora_forward(layer: AdapterLayer, x) -> np.ndarray:
    """Plain linear LoRA, ``W0 x + s B A x``, evaluated with numpy."""
    xv = x.values if isinstance(x, Tensor) else np.asarray(x)
    return layer.W0.values @ xv + (layer.B.values @ (layer.A.values @ xv)) * layer.config.scaling


def _dora_input_scale(layer: AdapterLayer) -> Tensor:
    # m / ||W0 + s B A||_col, as a d_in x 1 column
    V = ad.add(layer.W0, ad.scale(ad.matmul(layer.B, layer.A), layer.config.scaling))
    return ad.transpose(ad.div(layer.m, ad.col_norm(V, COLNORM_EPS)))


def dora_forward(layer: AdapterLayer, x, beta: float) -> Tensor:
    """DoRA output without bias.

    The weight ``V = W0 + s B A`` is scaled column-wise by ``m / ||V||``;
    that equals rescaling the input rows before the adapter. The annealed
    branch then acts on the rescaled input, so at ``beta = 0`` this is
    exactly ``(m * V / ||V||) x``.
    """
    if not layer.config.dora or layer.m is None:
        raise ValueError("dora_forward needs a layer built with dora=True")
    x = ad._as_tensor(x)
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    _check_input(layer, x)
    xs = ad.mul(x, _dora_input_scale(layer))
    return forward(layer, xs, beta)


def merge(layer: AdapterLayer) -> np.ndarray:
    """Single weight equal to the adapter at ``beta = 0`` (bias excluded)."""
    s = layer.config.scaling
    V = layer.W0.values + s * (layer.B.values @ layer.A.values)
    if not layer.config.dora:
        return V
    norms = np.maximum(np.sqrt((V * V).sum(axis=0, keepdims=True)), COLNORM_EPS)
    return V * (layer.m.values / norms)


def merge_error(layer: AdapterLayer, beta: float, n_samples: int = 100, rng_seed: int = 0) -> float:
    """Max infinity-norm gap between the adapter at ``beta`` and its merged weight.

    Probes are random unit-norm inputs; bias cancels and is left out.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = np.random.default_rng(rng_seed)
    X = rng.standard_normal((layer.config.d_in, n_samples))
    X /= np.linalg.norm(X, axis=0, keepdims=True)
    fwd = dora_forward if layer.config.dora else forward
    out = fwd(layer, Tensor(X), beta).values
    return float(np.abs(out - merge(layer) @ X).max())
