"""scikit-learn compatible regressor that fine-tunes a frozen network with adapters."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, validate_data

from .models import build_adapter_mlp, build_full_mlp
from .schedules import ScheduleSpec, make_fraction_schedule
from .training import TrainConfig, UnmergeableError, evaluate, train

__all__ = ["AdapterRegressor"]


class AdapterRegressor(RegressorMixin, BaseEstimator):
    """Fit low-rank (optionally annealed) adapters on top of a fixed base network.

    Parameters
    ----------
    base_layers : sequence of (weight, bias) or None
        Dense layers of the pre-trained network, ``weight`` shaped
        ``(d_out, d_in)``; ReLU sits between consecutive layers. ``None``
        means a single zero-weight linear layer sized from the data.
    mode : {"adapter", "full"}
        ``"full"`` trains every base weight directly and ignores the adapter
        settings.
    placement : str
        ``"none"`` for plain LoRA, otherwise one of the seven slot masks such
        as ``"a-sigma-b"``.
    activation : {"identity", "relu", "silu", "gelu"}
    schedule : {"linear", "constant"}
        Linear decays beta from 1 to 0 between ``start_frac`` and
        ``end_frac`` of the run; constant holds ``constant_beta``.

    Attributes
    ----------
    model_ : MLP
        The trained network in adapter form.
    merged_model_ : MLP or None
        Adapter-free network, available when the run ended linear.
    report_ : TrainReport
    loss_curve_ : list of float
    """

    def __init__(self, base_layers=None, mode="adapter", rank=4, alpha=8.0, placement="none",
                 activation="relu", dora=False, trainable_base=False, schedule="linear",
                 start_frac=0.0, end_frac=0.3, constant_beta=0.0, steps=2000, batch_size=64,
                 learning_rate=3e-3, optimizer="adamw", weight_decay=0.0, precision="float64",
                 random_state=0):
        self.base_layers = base_layers
        self.mode = mode
        self.rank = rank
        self.alpha = alpha
        self.placement = placement
        self.activation = activation
        self.dora = dora
        self.trainable_base = trainable_base
        self.schedule = schedule
        self.start_frac = start_frac
        self.end_frac = end_frac
        self.constant_beta = constant_beta
        self.steps = steps
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.optimizer = optimizer
        self.weight_decay = weight_decay
        self.precision = precision
        self.random_state = random_state

    def _schedule(self) -> ScheduleSpec:
        if self.schedule == "constant":
            return ScheduleSpec.constant(self.constant_beta, self.steps)
        if self.schedule != "linear":
            raise ValueError(f"schedule must be 'linear' or 'constant', got {self.schedule!r}")
        return make_fraction_schedule(self.steps, self.start_frac, self.end_frac)

    def train_config(self) -> TrainConfig:
        return TrainConfig(total_steps=self.steps, batch_size=self.batch_size,
                           learning_rate=self.learning_rate, optimizer=self.optimizer,
                           weight_decay=self.weight_decay, schedule=self._schedule(),
                           seed=self._seed(), precision=self.precision)

    def _seed(self) -> int:
        rs = self.random_state
        if rs is None:
            return int(np.random.default_rng().integers(2**31))
        if isinstance(rs, np.random.RandomState):
            return int(rs.randint(2**31))
        return int(rs)

    def _base(self, d_in: int, d_out: int):
        if self.base_layers is None:
            return [(np.zeros((d_out, d_in)), None)]
        base = [(np.asarray(W, dtype=np.float64), None if b is None else np.asarray(b, dtype=np.float64))
                for W, b in self.base_layers]
        if base[0][0].shape[1] != d_in:
            raise ValueError(f"X has {d_in} features but the base network expects {base[0][0].shape[1]}")
        if base[-1][0].shape[0] != d_out:
            raise ValueError(f"y has {d_out} outputs but the base network produces {base[-1][0].shape[0]}")
        return base

    def _build(self, d_in: int, d_out: int, seed: int):
        base = self._base(d_in, d_out)
        if self.mode == "full":
            return build_full_mlp(base)
        if self.mode != "adapter":
            raise ValueError(f"mode must be 'adapter' or 'full', got {self.mode!r}")
        return build_adapter_mlp(base, rank=self.rank, alpha=self.alpha, placement=self.placement,
                                 activation=self.activation, dora=self.dora,
                                 trainable_base=self.trainable_base, seed=seed)

    def fit(self, X, y, eval_set=None):
        """Train on rows of ``X``; ``eval_set=(X_eval, y_eval)`` records a final eval loss."""
        X, y = validate_data(self, X, y, multi_output=True, y_numeric=True, dtype=np.float64)
        self._y_1d = y.ndim == 1
        Y = y.reshape(-1, 1) if self._y_1d else y
        config = self.train_config()
        model = self._build(X.shape[1], Y.shape[1], config.seed)
        ev = None
        if eval_set is not None:
            Xe, ye = eval_set
            Xe = check_array(Xe, dtype=np.float64)
            ye = np.asarray(ye, dtype=np.float64).reshape(len(Xe), -1)
            ev = (Xe.T, ye.T)
        self.report_ = train(model, (X.T, Y.T), config, eval_set=ev)
        self.model_ = model
        self.merged_model_ = self.report_.merged_model
        self.loss_curve_ = self.report_.losses
        return self

    @property
    def final_beta_(self) -> float:
        check_is_fitted(self, "report_")
        return self.report_.final_beta

    def _network(self):
        if self.merged_model_ is not None:
            return self.merged_model_, 0.0
        return self.model_, self.report_.final_beta

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = validate_data(self, X, reset=False, dtype=np.float64)
        net, beta = self._network()
        out = net.predict(X.T, beta).T
        return out.ravel() if self._y_1d else out

    def eval_loss(self, X, y) -> float:
        """Mean squared error over every output entry (the training loss)."""
        check_is_fitted(self, "model_")
        X = validate_data(self, X, reset=False, dtype=np.float64)
        Y = np.asarray(y, dtype=np.float64).reshape(len(X), -1)
        net, beta = self._network()
        return evaluate(net, (X.T, Y.T), "mse", beta=beta)

    def merge(self):
        """Merged ``(weight, bias)`` pairs; refuses if the adapter is still non-linear."""
        check_is_fitted(self, "model_")
        if self.merged_model_ is None:
            raise UnmergeableError(
                f"training ended with beta={self.report_.final_beta:g} and non-linear adapters"
            )
        return [(l.weight.values.copy(), None if l.bias is None else l.bias.values.ravel().copy())
                for l in self.merged_model_.layers]
