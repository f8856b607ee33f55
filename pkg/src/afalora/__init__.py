"""Low-rank adapters with activation annealing, exact merging and a desk-scale harness."""

from .activations import ActivationKind, annealed_apply, annealed_derivative
from .adapters import (AFA_PLACEMENTS, PLACEMENTS, AdapterConfig, AdapterLayer, Placement,
                       dora_forward, forward, init_adapter, merge, merge_error)
from .autodiff import Tape, Tensor, backward, finite_diff_grad
from .estimator import AdapterRegressor
from .experiments import Arm, TaskSpec, TrainSettings, gain, gen_task, placement_sweep, run_arm
from .models import MLP, Linear, merge_model
from .schedules import ScheduleSpec, beta_at, make_fraction_schedule
from .training import TrainConfig, TrainReport, UnmergeableError, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "ActivationKind", "annealed_apply", "annealed_derivative",
    "AFA_PLACEMENTS", "PLACEMENTS", "AdapterConfig", "AdapterLayer", "Placement",
    "dora_forward", "forward", "init_adapter", "merge", "merge_error",
    "Tape", "Tensor", "backward", "finite_diff_grad",
    "AdapterRegressor",
    "Arm", "TaskSpec", "TrainSettings", "gain", "gen_task", "placement_sweep", "run_arm",
    "MLP", "Linear", "merge_model",
    "ScheduleSpec", "beta_at", "make_fraction_schedule",
    "TrainConfig", "TrainReport", "UnmergeableError", "evaluate", "train",
]
