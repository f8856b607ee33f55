"""Adapter training loop.

Each step ``t = 1..T``: compute ``beta(t)``, sample a batch with replacement,
run the forward pass, take the loss, update the trainable parameters. After
the loop the model is merged if it ended linear.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import NonFiniteError, Tape, Tensor
from .models import MLP, merge_model, weights_checksum
from .schedules import ScheduleSpec, beta_at, make_fraction_schedule

logger = logging.getLogger(__name__)

__all__ = [
    "SGD",
    "AdamW",
    "sgd_step",
    "adamw_step",
    "TrainConfig",
    "TrainReport",
    "StepRecord",
    "UnmergeableError",
    "train",
    "evaluate",
    "compute_loss",
]

LOSSES = ("mse", "softmax-cross-entropy")


class UnmergeableError(RuntimeError):
    """Raised when asked to merge an adapter that is still non-linear."""


def sgd_step(param: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
    if not np.isfinite(grad).all():
        raise NonFiniteError("non-finite gradient passed to SGD")
    return param - lr * grad


def adamw_step(param: np.ndarray, grad: np.ndarray, state: dict, *, lr: float, beta1: float = 0.9,
               beta2: float = 0.999, eps: float = 1e-8, weight_decay: float = 0.0) -> np.ndarray:
    """One decoupled-weight-decay Adam update.

    ``state`` holds ``step``, ``m`` and ``v`` and is updated in place; an
    empty dict starts from zero moments.
    """
    if not np.isfinite(grad).all():
        raise NonFiniteError("non-finite gradient passed to AdamW")
    t = state.get("step", 0) + 1
    m = state.get("m", np.zeros_like(param))
    v = state.get("v", np.zeros_like(param))
    m = beta1 * m + (1.0 - beta1) * grad
    v = beta2 * v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    new = param * (1.0 - lr * weight_decay) if weight_decay else param
    new = new - lr * m_hat / (np.sqrt(v_hat) + eps)
    state.update(step=t, m=m, v=v)
    return new


class SGD:
    def __init__(self, params, lr: float):
        self.params = list(params)
        self.lr = lr

    def step(self) -> None:
        for p in self.params:
            p.values = sgd_step(p.values, p.grad, self.lr)


class AdamW:
    def __init__(self, params, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = list(params)
        self.lr = lr
        self.hyper = dict(beta1=beta1, beta2=beta2, eps=eps, weight_decay=weight_decay)
        self.state = [{} for _ in self.params]

    def step(self) -> None:
        for p, st in zip(self.params, self.state):
            p.values = adamw_step(p.values, p.grad, st, lr=self.lr, **self.hyper)


@dataclass
class TrainConfig:
    total_steps: int = 2000
    batch_size: int = 64
    learning_rate: float = 3e-3
    optimizer: str = "adamw"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.0
    loss: str = "mse"
    schedule: ScheduleSpec | None = None
    seed: int = 0
    precision: str = "float64"

    def __post_init__(self):
        if self.schedule is None:
            self.schedule = make_fraction_schedule(self.total_steps, 0.0, 0.3)
        self.validate()

    def validate(self) -> None:
        if self.total_steps < 1:
            raise ValueError("total_steps must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be non-negative")
        if self.optimizer not in ("sgd", "adamw"):
            raise ValueError(f"optimizer must be 'sgd' or 'adamw', got {self.optimizer!r}")
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        if self.precision not in ("float64", "float32"):
            raise ValueError(f"precision must be float64 or float32, got {self.precision!r}")
        if self.schedule.total_steps != self.total_steps:
            raise ValueError(
                f"schedule.total_steps={self.schedule.total_steps} does not match total_steps={self.total_steps}"
            )

    def make_optimizer(self, params):
        if self.optimizer == "sgd":
            return SGD(params, self.learning_rate)
        return AdamW(params, self.learning_rate, self.adam_beta1, self.adam_beta2,
                     self.adam_eps, self.weight_decay)


@dataclass(frozen=True)
class StepRecord:
    step: int
    beta: float
    train_loss: float


@dataclass
class TrainReport:
    records: list[StepRecord] = field(default_factory=list)
    final_beta: float = 0.0
    final_eval_loss: float | None = None
    wall_clock: float = 0.0
    mergeable: bool = True
    merge_deviation: float | None = None
    merged_checksum: str | None = None
    merged_model: MLP | None = field(default=None, repr=False)

    @property
    def losses(self) -> list[float]:
        return [r.train_loss for r in self.records]

    @property
    def betas(self) -> list[float]:
        return [r.beta for r in self.records]


def compute_loss(kind: str, pred: Tensor, target: np.ndarray) -> Tensor:
    if kind == "mse":
        return ad.mse(pred, target)
    return ad.softmax_cross_entropy(pred, target)


def _targets(Y: np.ndarray, idx: np.ndarray, loss: str) -> np.ndarray:
    return Y[..., idx] if loss == "mse" else np.asarray(Y).ravel()[idx]


def _cast(model: MLP, dtype) -> None:
    for t in model.named_tensors().values():
        t.values = t.values.astype(dtype)
        if t.grad is not None:
            t.grad = t.grad.astype(dtype)


def train(model: MLP, dataset, config: TrainConfig, eval_set=None, probe=None) -> TrainReport:
    """Run the step loop and return the per-step record.

    ``dataset`` and ``eval_set`` are ``(X, Y)`` with ``X`` shaped
    ``d_in x n``; ``Y`` is ``d_out x n`` for MSE or ``n`` labels for
    cross-entropy. ``probe`` is a ``d_in x k`` batch for the post-merge check
    and defaults to the first 100 evaluation (else training) inputs.
    """
    config.validate()
    X, Y = dataset
    X = np.asarray(X)
    n = X.shape[1]
    if n == 0:
        raise ValueError("dataset is empty")
    dtype = np.float32 if config.precision == "float32" else np.float64
    X = X.astype(dtype)
    Y = np.asarray(Y).astype(dtype) if config.loss == "mse" else np.asarray(Y)
    if dtype is np.float32:
        _cast(model, dtype)

    rng = np.random.default_rng(config.seed)
    params = model.parameters()
    opt = config.make_optimizer(params)
    report = TrainReport()
    t0 = time.perf_counter()
    for t in range(1, config.total_steps + 1):
        beta = beta_at(config.schedule, t)
        idx = rng.integers(0, n, size=config.batch_size)
        xb = Tensor._wrap(X[:, idx])
        for p in params:
            p.zero_grad()
        with Tape():
            try:
                loss = compute_loss(config.loss, model(xb, beta), _targets(Y, idx, config.loss))
            except NonFiniteError as exc:
                raise NonFiniteError(f"step {t}: {exc}") from exc
        ad.backward(loss)
        opt.step()
        report.records.append(StepRecord(t, beta, loss.item()))
    report.wall_clock = time.perf_counter() - t0
    report.final_beta = beta_at(config.schedule, config.total_steps)

    if eval_set is not None:
        report.final_eval_loss = evaluate(model, eval_set, config.loss, beta=report.final_beta)

    report.mergeable = report.final_beta == 0.0 or not model.nonlinear_adapters
    if report.mergeable:
        merged = merge_model(model)
        if probe is None:
            probe = (eval_set[0] if eval_set is not None else X)[:, :100]
        probe = np.asarray(probe, dtype=dtype)
        dev = np.abs(model.predict(probe, report.final_beta) - merged.predict(probe)).max()
        report.merge_deviation = float(dev)
        report.merged_checksum = weights_checksum(merged)
        report.merged_model = merged
    else:
        logger.info("run ended with beta=%g and non-linear adapters; not merging", report.final_beta)
    return report


def evaluate(model: MLP, dataset, loss: str = "mse", beta: float = 0.0) -> float:
    """Mean loss over the whole dataset; nothing is recorded for gradients."""
    X, Y = dataset
    X = np.asarray(X)
    if X.shape[1] == 0:
        raise ValueError("dataset is empty")
    pred = model(Tensor._wrap(X), beta)
    return compute_loss(loss, pred, np.asarray(Y)).item()
