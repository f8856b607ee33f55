"""Synthetic teacher-student benchmark and the comparison harness.

A frozen two-layer ReLU network is adapted toward a teacher made from the
same network with perturbed weights plus an extra non-linear term. Arms:

* ``full``     every base weight trained, no adapters
* ``lora``     linear low-rank adapters
* ``afa``      adapters with an annealed activation in some placement
* ``dora``     weight-decomposed adapters
* ``afa_dora`` DoRA with an annealed activation

Scores are negative eval losses so that higher is better, which lets the
gap-recovery percentage apply unchanged.
"""

from __future__ import annotations

import math
import os
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .adapters import Placement
from .activations import ActivationKind
from .estimator import AdapterRegressor

__all__ = [
    "TaskSpec",
    "Task",
    "Arm",
    "ArmResult",
    "TrainSettings",
    "GainReport",
    "SweepCell",
    "SweepResult",
    "gen_task",
    "make_estimator",
    "run_arm",
    "gain",
    "gain_report",
    "placement_sweep",
    "ARM_KINDS",
    "GAIN_UNDEFINED",
]

ARM_KINDS = ("full", "lora", "afa", "dora", "afa_dora")
GAIN_TOL = 1e-9
GAIN_UNDEFINED = None


@dataclass(frozen=True)
class TaskSpec:
    d_in: int = 32
    d_hidden: int = 64
    d_out: int = 16
    teacher_seed: int = 1
    base_seed: int = 0
    data_seed: int = 2
    nonlinearity: float = 0.5
    perturbation: float = 0.5
    n_train: int = 4096
    n_eval: int = 1024
    noise: float = 0.01

    def __post_init__(self):
        for key in ("d_in", "d_hidden", "d_out", "n_train", "n_eval"):
            if int(getattr(self, key)) < 1:
                raise ValueError(f"task.{key} must be >= 1, got {getattr(self, key)}")
        if self.teacher_seed == self.base_seed:
            raise ValueError("task.teacher_seed must differ from task.base_seed")
        if self.nonlinearity < 0 or self.noise < 0 or self.perturbation < 0:
            raise ValueError("task.nonlinearity, task.noise and task.perturbation must be >= 0")


@dataclass
class Task:
    spec: TaskSpec
    X_train: np.ndarray  # n x d_in
    y_train: np.ndarray  # n x d_out
    X_eval: np.ndarray
    y_eval: np.ndarray
    base_layers: list
    teacher_layers: list = field(repr=False, default_factory=list)


def _two_layer(rng: np.random.Generator, d_in: int, d_hidden: int, d_out: int):
    W1 = rng.standard_normal((d_hidden, d_in)) / math.sqrt(d_in)
    b1 = 0.1 * rng.standard_normal(d_hidden)
    W2 = rng.standard_normal((d_out, d_hidden)) * math.sqrt(2.0 / d_hidden)
    b2 = np.zeros(d_out)
    return [(W1, b1), (W2, b2)]


def _mlp_rows(layers, X: np.ndarray) -> np.ndarray:
    h = X
    for i, (W, b) in enumerate(layers):
        h = h @ W.T + b
        if i < len(layers) - 1:
            h = np.maximum(h, 0.0)
    return h


def gen_task(spec: TaskSpec) -> Task:
    """Deterministic train/eval data plus the frozen base network."""
    base = _two_layer(np.random.default_rng(spec.base_seed), spec.d_in, spec.d_hidden, spec.d_out)
    trng = np.random.default_rng(spec.teacher_seed)
    teacher = []
    for W, b in base:
        dW = trng.standard_normal(W.shape) * (spec.perturbation / math.sqrt(W.shape[1]))
        teacher.append((W + dW, b.copy()))
    k = max(1, spec.d_hidden // 4)
    V = trng.standard_normal((k, spec.d_in)) / math.sqrt(spec.d_in)
    U = trng.standard_normal((spec.d_out, k)) * math.sqrt(2.0 / k)

    drng = np.random.default_rng(spec.data_seed)

    def sample(n):
        X = drng.standard_normal((n, spec.d_in))
        y = _mlp_rows(teacher, X) + spec.nonlinearity * (np.abs(X @ V.T) @ U.T)
        return X, y + spec.noise * drng.standard_normal(y.shape)

    X_tr, y_tr = sample(spec.n_train)
    X_ev, y_ev = sample(spec.n_eval)
    return Task(spec, X_tr, y_tr, X_ev, y_ev, base, teacher)


@dataclass(frozen=True)
class Arm:
    kind: str = "lora"
    placement: str = "none"
    activation: str = "relu"
    end_frac: float = 0.3
    start_frac: float = 0.0
    schedule: str = "linear"
    constant_beta: float = 0.0

    def __post_init__(self):
        if self.kind not in ARM_KINDS:
            raise ValueError(f"arm kind must be one of {ARM_KINDS}, got {self.kind!r}")
        object.__setattr__(self, "placement", Placement.parse(self.placement).name)
        object.__setattr__(self, "activation", ActivationKind.parse(self.activation).value)
        if self.kind in ("afa", "afa_dora") and self.placement == "none":
            raise ValueError(f"{self.kind} arm needs a non-empty placement")

    @classmethod
    def full(cls) -> "Arm":
        return cls(kind="full")

    @classmethod
    def lora(cls) -> "Arm":
        return cls(kind="lora")

    @classmethod
    def afa(cls, placement, activation="relu", end_frac=0.3, **kw) -> "Arm":
        return cls(kind="afa", placement=placement, activation=activation, end_frac=end_frac, **kw)


@dataclass(frozen=True)
class TrainSettings:
    steps: int = 2000
    batch_size: int = 64
    learning_rate: float = 3e-3
    optimizer: str = "adamw"
    weight_decay: float = 0.0
    rank: int = 4
    alpha: float = 8.0


def make_estimator(arm: Arm, task: Task, settings: TrainSettings, seed: int) -> AdapterRegressor:
    common = dict(base_layers=task.base_layers, steps=settings.steps, batch_size=settings.batch_size,
                  learning_rate=settings.learning_rate, optimizer=settings.optimizer,
                  weight_decay=settings.weight_decay, rank=settings.rank, alpha=settings.alpha,
                  random_state=seed)
    if arm.kind == "full":
        return AdapterRegressor(mode="full", **common)
    linear_arm = arm.kind in ("lora", "dora")
    return AdapterRegressor(
        mode="adapter",
        placement="none" if linear_arm else arm.placement,
        activation=arm.activation,
        dora=arm.kind in ("dora", "afa_dora"),
        schedule=arm.schedule,
        start_frac=arm.start_frac,
        end_frac=arm.end_frac,
        constant_beta=arm.constant_beta,
        **common,
    )


@dataclass(frozen=True)
class ArmResult:
    arm: Arm
    seed: int
    final_eval_loss: float
    losses: tuple = field(repr=False, default=())

    @property
    def score(self) -> float:
        return -self.final_eval_loss


def run_arm(arm: Arm, task: Task, settings: TrainSettings | None = None, seed: int = 0) -> ArmResult:
    settings = settings or TrainSettings()
    est = make_estimator(arm, task, settings, seed)
    est.fit(task.X_train, task.y_train, eval_set=(task.X_eval, task.y_eval))
    return ArmResult(arm, seed, est.report_.final_eval_loss, tuple(est.loss_curve_))


def gain(full: float, lora: float, method: float):
    """Percent of the LoRA-to-full gap recovered; ``None`` when the gap is ~0."""
    denom = full - lora
    if abs(denom) < GAIN_TOL:
        return GAIN_UNDEFINED
    return 100.0 * (method - lora) / denom


@dataclass
class GainReport:
    full_score: float
    lora_score: float
    method_scores: dict
    gains: dict

    @property
    def undefined(self) -> bool:
        return any(g is None for g in self.gains.values())


def gain_report(full_score: float, lora_score: float, method_scores: dict) -> GainReport:
    gains = {k: gain(full_score, lora_score, v) for k, v in method_scores.items()}
    return GainReport(full_score, lora_score, dict(method_scores), gains)


@dataclass
class SweepCell:
    placement: str
    activation: str
    end_frac: float
    kind: str
    results: list  # ArmResult per seed, seed order
    gains: list    # per-seed paired gain (None if undefined)

    @property
    def losses(self) -> list[float]:
        return [r.final_eval_loss for r in self.results]

    @property
    def mean_loss(self) -> float:
        return statistics.fmean(self.losses)

    @property
    def median_loss(self) -> float:
        return statistics.median(self.losses)

    @property
    def std_loss(self) -> float:
        return statistics.pstdev(self.losses)

    @property
    def median_gain(self):
        defined = [g for g in self.gains if g is not None]
        return statistics.median(defined) if defined else None

    @property
    def mean_gain(self):
        defined = [g for g in self.gains if g is not None]
        return statistics.fmean(defined) if defined else None


@dataclass
class SweepResult:
    seeds: list
    full: SweepCell
    lora: SweepCell
    cells: list

    def rows(self) -> Iterable[dict]:
        """Flat per-seed rows in (cell, seed) order, baselines first."""
        for cell in [self.full, self.lora, *self.cells]:
            for res, g in zip(cell.results, cell.gains):
                yield {
                    "placement": cell.placement if cell.kind not in ("full",) else "full",
                    "activation": cell.activation,
                    "end_frac": cell.end_frac,
                    "seed": res.seed,
                    "final_eval_loss": res.final_eval_loss,
                    "score": res.score,
                    "gain": g,
                }


def _worker(job):
    arm, task_spec, settings, seed = job
    return run_arm(arm, _cached_task(task_spec), settings, seed)


_TASK_CACHE: dict = {}


def _cached_task(spec: TaskSpec) -> Task:
    if spec not in _TASK_CACHE:
        _TASK_CACHE.clear()
        _TASK_CACHE[spec] = gen_task(spec)
    return _TASK_CACHE[spec]


def max_workers() -> int:
    env = os.environ.get("AFA_THREADS")
    if env:
        n = int(env)
        if n < 1:
            raise ValueError(f"AFA_THREADS must be >= 1, got {env}")
        return n
    return os.cpu_count() or 1


def _run_all(jobs: list, workers: int) -> list:
    if workers <= 1 or len(jobs) <= 1:
        return [_worker(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
        # map preserves submission order, so aggregation is independent of completion order
        return list(pool.map(_worker, jobs))


def placement_sweep(task_spec: TaskSpec, settings: TrainSettings | None = None,
                    placements: Sequence = ("a-sigma-b",), activations: Sequence = ("relu",),
                    end_fracs: Sequence[float] = (0.3,), n_seeds: int = 3, seed0: int = 0,
                    kind: str = "afa", workers: int | None = None) -> SweepResult:
    """Grid of adapter arms plus shared full/LoRA baselines on paired seeds."""
    if n_seeds < 1:
        raise ValueError("n_seeds must be >= 1")
    if kind not in ("afa", "afa_dora"):
        raise ValueError("sweep kind must be 'afa' or 'afa_dora'")
    settings = settings or TrainSettings()
    seeds = list(range(seed0, seed0 + n_seeds))
    baseline = "dora" if kind == "afa_dora" else "lora"
    grid = [Arm(kind=kind, placement=p, activation=a, end_frac=float(e))
            for p in placements for a in activations for e in end_fracs]
    arms = [Arm(kind="full"), Arm(kind=baseline), *grid]
    jobs = [(arm, task_spec, settings, s) for arm in arms for s in seeds]
    results = _run_all(jobs, max_workers() if workers is None else workers)

    per_arm = [results[i * n_seeds:(i + 1) * n_seeds] for i in range(len(arms))]
    full_scores = [r.score for r in per_arm[0]]
    lora_scores = [r.score for r in per_arm[1]]

    def cell(arm: Arm, res: list) -> SweepCell:
        gains = [gain(f, l, r.score) for f, l, r in zip(full_scores, lora_scores, res)]
        return SweepCell(arm.placement, arm.activation, arm.end_frac, arm.kind, res, gains)

    return SweepResult(seeds, cell(arms[0], per_arm[0]), cell(arms[1], per_arm[1]),
                       [cell(a, r) for a, r in zip(grid, per_arm[2:])])
