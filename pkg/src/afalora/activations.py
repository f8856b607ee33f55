"""Activation functions and their annealed blend with the identity.

The annealed activation is ``phi(x; beta) = beta * sigma(x) + (1 - beta) * x``.
``beta`` is a non-trainable scalar: no gradient ever flows into it.
"""

from __future__ import annotations

import enum
import math

import numpy as np
from scipy.special import erfc, expit

from .autodiff import NonFiniteError, Tensor, elementwise

__all__ = [
    "ActivationKind",
    "apply",
    "derivative",
    "annealed_apply",
    "annealed_derivative",
]

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


class ActivationKind(str, enum.Enum):
    IDENTITY = "identity"
    RELU = "relu"
    SILU = "silu"
    GELU = "gelu"

    @classmethod
    def parse(cls, value) -> "ActivationKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            names = ", ".join(k.value for k in cls)
            raise ValueError(f"unknown activation {value!r}; expected one of {names}") from None


def _values(x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64) if not isinstance(x, np.ndarray) else x
    if not np.isfinite(arr).all():
        raise NonFiniteError("activation input contains non-finite values")
    return arr


def _sigma(kind: ActivationKind, v: np.ndarray) -> np.ndarray:
    if kind is ActivationKind.IDENTITY:
        return v
    if kind is ActivationKind.RELU:
        return np.maximum(v, 0.0)
    if kind is ActivationKind.SILU:
        return v * expit(v)
    # exact erf form (not the tanh approximation), written with erfc so the
    # negative tail does not cancel
    return 0.5 * v * erfc(-v * _INV_SQRT2)


def _dsigma(kind: ActivationKind, v: np.ndarray) -> np.ndarray:
    if kind is ActivationKind.IDENTITY:
        return np.ones_like(v)
    if kind is ActivationKind.RELU:
        return (v > 0).astype(v.dtype)
    if kind is ActivationKind.SILU:
        s = expit(v)
        return s * (1.0 + v * (1.0 - s))
    cdf = 0.5 * erfc(-v * _INV_SQRT2)
    return cdf + v * _INV_SQRT2PI * np.exp(-0.5 * v * v)


def _scalar_or_array(out: np.ndarray, like):
    return float(out) if np.ndim(like) == 0 else out


def apply(kind, x):
    """Pointwise ``sigma(x)`` for a scalar or array."""
    kind = ActivationKind.parse(kind)
    v = _values(x)
    return _scalar_or_array(_sigma(kind, v), x)


def derivative(kind, x):
    kind = ActivationKind.parse(kind)
    v = _values(x)
    return _scalar_or_array(_dsigma(kind, v), x)


def _check_beta(beta: float) -> float:
    beta = float(beta)
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    return beta


def _blend(kind: ActivationKind, v: np.ndarray, beta: float) -> np.ndarray:
    return beta * _sigma(kind, v) + (1.0 - beta) * v


def _dblend(kind: ActivationKind, v: np.ndarray, beta: float) -> np.ndarray:
    return beta * _dsigma(kind, v) + (1.0 - beta)


def annealed_apply(kind, x, beta: float):
    """``beta * sigma(x) + (1 - beta) * x``.

    Accepts a scalar, an array, or a :class:`Tensor`; tensors are recorded on
    the active tape. The identity kind returns ``x`` unchanged for every beta,
    since the blend would otherwise reintroduce rounding.
    """
    kind = ActivationKind.parse(kind)
    beta = _check_beta(beta)
    if isinstance(x, Tensor):
        if kind is ActivationKind.IDENTITY:
            return x
        return elementwise(
            x,
            lambda v: _blend(kind, v, beta),
            lambda v: _dblend(kind, v, beta),
            op=f"annealed_{kind.value}",
        )
    v = _values(x)
    if kind is ActivationKind.IDENTITY:
        return _scalar_or_array(v.copy() if v.ndim else v, x)
    return _scalar_or_array(_blend(kind, v, beta), x)


def annealed_derivative(kind, x, beta: float):
    """``beta * sigma'(x) + (1 - beta)``; ReLU's slope at 0 is taken as 0."""
    kind = ActivationKind.parse(kind)
    beta = _check_beta(beta)
    v = _values(x)
    return _scalar_or_array(_dblend(kind, v, beta), x)
