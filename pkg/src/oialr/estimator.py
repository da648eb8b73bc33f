"""scikit-learn estimators wrapping the adaptive low-rank trainer."""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .data import Dataset
from .nn import build_mlp
from .trainer import TrainConfig, train


class _BaseOIALR(BaseEstimator):
    def __init__(
        self,
        hidden_layer_sizes=(256, 128),
        activation="relu",
        epochs=15,
        batch_size=64,
        low_rank=True,
        delay=None,
        nu=None,
        beta=0.1,
        alpha=0.1,
        exclude_first_layer=False,
        exclude_last_layer=False,
        start_low_rank=False,
        learning_rate=1e-3,
        min_lr=1e-5,
        warmup_lr=1e-5,
        warmup_epochs=10,
        k_decay=1.0,
        weight_decay=0.01,
        state_mode="reset",
        track_stability=False,
        random_state=0,
    ):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.activation = activation
        self.epochs = epochs
        self.batch_size = batch_size
        self.low_rank = low_rank
        self.delay = delay
        self.nu = nu
        self.beta = beta
        self.alpha = alpha
        self.exclude_first_layer = exclude_first_layer
        self.exclude_last_layer = exclude_last_layer
        self.start_low_rank = start_low_rank
        self.learning_rate = learning_rate
        self.min_lr = min_lr
        self.warmup_lr = warmup_lr
        self.warmup_epochs = warmup_epochs
        self.k_decay = k_decay
        self.weight_decay = weight_decay
        self.state_mode = state_mode
        self.track_stability = track_stability
        self.random_state = random_state

    def _train_config(self, **extra):
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            delay=self.delay,
            nu=self.nu,
            beta=self.beta,
            alpha=self.alpha,
            exclude_first_layer=self.exclude_first_layer,
            exclude_last_layer=self.exclude_last_layer,
            start_low_rank=self.start_low_rank,
            lr=self.learning_rate,
            min_lr=self.min_lr,
            warmup_lr=self.warmup_lr,
            warmup_epochs=self.warmup_epochs,
            k_decay=self.k_decay,
            weight_decay=self.weight_decay,
            state_mode=self.state_mode,
            track_stability=self.track_stability,
            seed=self._seed(),
            **extra,
        )

    def _seed(self):
        rs = self.random_state
        if rs is None:
            return int(np.random.SeedSequence().entropy % (2**32))
        if isinstance(rs, np.random.RandomState):
            return int(rs.randint(2**31))
        return int(rs)

    def _fit(self, X, targets, task, n_out, **extra):
        cfg = self._train_config(**extra)
        sizes = [X.shape[1], *self.hidden_layer_sizes, n_out]
        model = build_mlp(sizes, self.activation, seed=cfg.seed)
        data = Dataset(X, targets, len(X), task, n_out if task == "classification" else 0)
        result = train(model, cfg, data, low_rank=self.low_rank)
        self.model_ = result.model
        self.telemetry_ = result.telemetry
        self.events_ = result.events
        self.n_features_in_ = X.shape[1]
        return self

    def _forward(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, but this estimator expects {self.n_features_in_}")
        return self.model_.predict(X)

    @property
    def trainable_fraction_(self):
        """Trainable parameters relative to the same network in full rank."""
        check_is_fitted(self, "model_")
        return self.telemetry_[-1].trainable_pct / 100.0


class OIALRClassifier(ClassifierMixin, _BaseOIALR):
    """MLP classifier trained with adaptive low-rank (OIALR) training.

    Set ``low_rank=False`` for ordinary full-rank training with the same
    schedule, which makes side-by-side comparisons a matter of ``set_params``.

    Attributes
    ----------
    classes_ : ndarray
    model_ : SequentialModel
    telemetry_ : list of TelemetryRow
    events_ : list of Event
        Conversion and basis-update events in step order.
    """

    def __init__(
        self,
        hidden_layer_sizes=(256, 128),
        activation="relu",
        epochs=15,
        batch_size=64,
        low_rank=True,
        delay=None,
        nu=None,
        beta=0.1,
        alpha=0.1,
        exclude_first_layer=False,
        exclude_last_layer=False,
        start_low_rank=False,
        learning_rate=1e-3,
        min_lr=1e-5,
        warmup_lr=1e-5,
        warmup_epochs=10,
        k_decay=1.0,
        weight_decay=0.01,
        state_mode="reset",
        track_stability=False,
        random_state=0,
        label_smoothing=0.0,
    ):
        super().__init__(
            hidden_layer_sizes=hidden_layer_sizes,
            activation=activation,
            epochs=epochs,
            batch_size=batch_size,
            low_rank=low_rank,
            delay=delay,
            nu=nu,
            beta=beta,
            alpha=alpha,
            exclude_first_layer=exclude_first_layer,
            exclude_last_layer=exclude_last_layer,
            start_low_rank=start_low_rank,
            learning_rate=learning_rate,
            min_lr=min_lr,
            warmup_lr=warmup_lr,
            warmup_epochs=warmup_epochs,
            k_decay=k_decay,
            weight_decay=weight_decay,
            state_mode=state_mode,
            track_stability=track_stability,
            random_state=random_state,
        )
        self.label_smoothing = label_smoothing

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        check_classification_targets(y)
        self.classes_, encoded = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("need samples of at least two classes")
        return self._fit(X, encoded, "classification", len(self.classes_), label_smoothing=self.label_smoothing)

    def predict_proba(self, X):
        logits = self._forward(X)
        z = np.exp(logits - logits.max(axis=1, keepdims=True))
        return z / z.sum(axis=1, keepdims=True)

    def predict(self, X):
        logits = self._forward(X)
        return self.classes_[np.argmax(logits, axis=1)]


class OIALRRegressor(RegressorMixin, _BaseOIALR):
    """MLP regressor (mean squared error) trained with OIALR."""

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64, multi_output=True, y_numeric=True)
        self._y_1d = y.ndim == 1
        y2 = y.reshape(len(y), -1)
        return self._fit(X, y2, "regression", y2.shape[1])

    def predict(self, X):
        out = self._forward(X)
        return out.ravel() if self._y_1d else out
