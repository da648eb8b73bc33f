"""A small feed-forward network with hand-written forward and backward passes.

Dense layers compute ``y = x @ W.T + b`` with ``W`` shaped ``(out, in)``. After
conversion a layer holds a :class:`~oialr.factorization.LowRankWeight` instead
and evaluates ``((x @ v) @ sigma.T) @ u.T + b`` without forming ``W``; only
``sigma`` and the bias then receive gradients.
"""

from dataclasses import dataclass, field

import numpy as np

from ._validation import as_matrix, check_fraction
from .exceptions import ConfigError, ShapeError, StaleCacheError
from .factorization import LowRankWeight, decompose_weight, materialize

ACTIVATIONS = ("relu", "gelu", "identity")
_GELU_C = np.sqrt(2.0 / np.pi)


class Activation:
    """Elementwise nonlinearity; GELU uses the tanh approximation."""

    def __init__(self, kind="relu"):
        if kind not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")
        self.kind = kind

    def __repr__(self):
        return f"Activation({self.kind!r})"

    def forward(self, x):
        if self.kind == "relu":
            return np.maximum(x, 0.0)
        if self.kind == "gelu":
            return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + 0.044715 * x**3)))
        return x

    def backward(self, x, grad):
        if self.kind == "relu":
            return grad * (x > 0)
        if self.kind == "gelu":
            t = np.tanh(_GELU_C * (x + 0.044715 * x**3))
            dt = (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * x**2)
            return grad * (0.5 * (1.0 + t) + 0.5 * x * dt)
        return grad


class DenseLayer:
    """Affine layer in full-rank or frozen-basis low-rank mode.

    Parameters
    ----------
    layer_id : str
    weight : ndarray of shape (out, in)
    bias : ndarray of shape (out,)
    """

    def __init__(self, layer_id, weight, bias):
        self.layer_id = layer_id
        self.weight = as_matrix(weight, f"{layer_id}.weight")
        self.bias = np.array(bias, dtype=np.float64).reshape(-1)
        self.low_rank = None
        if self.bias.shape[0] != self.weight.shape[0]:
            raise ShapeError(f"{layer_id}: bias length {self.bias.shape[0]} != out features {self.weight.shape[0]}")

    def __repr__(self):
        mode = f"low-rank r={self.low_rank.rank}" if self.is_low_rank else "full-rank"
        return f"DenseLayer({self.layer_id!r}, {self.in_features}->{self.out_features}, {mode})"

    @property
    def is_low_rank(self):
        return self.low_rank is not None

    @property
    def out_features(self):
        return self.bias.shape[0]

    @property
    def in_features(self):
        return self.low_rank.v.shape[0] if self.is_low_rank else self.weight.shape[1]

    def effective_weight(self):
        return materialize(self.low_rank) if self.is_low_rank else self.weight

    def to_low_rank(self, lrw=None):
        self.low_rank = decompose_weight(self.weight) if lrw is None else lrw
        self.weight = None

    def forward(self, x):
        if x.shape[1] != self.in_features:
            raise ShapeError(f"{self.layer_id}: expected {self.in_features} input features, got {x.shape[1]}")
        if self.is_low_rank:
            w = self.low_rank
            return ((x @ w.v) @ w.sigma.T) @ w.u.T + self.bias
        return x @ self.weight.T + self.bias

    def backward(self, x, grad):
        """Return ``(grad_input, {param_name: grad})``."""
        grads = {f"{self.layer_id}.bias": grad.sum(axis=0)}
        if self.is_low_rank:
            w = self.low_rank
            xv = x @ w.v
            gu = grad @ w.u
            # (u.T g.T)(x v) == u.T (g.T x) v without the out x in intermediate
            grads[f"{self.layer_id}.sigma"] = gu.T @ xv
            grad_in = (gu @ w.sigma) @ w.v.T
        else:
            grads[f"{self.layer_id}.weight"] = grad.T @ x
            grad_in = grad @ self.weight
        return grad_in, grads

    def trainable(self):
        out = {}
        if self.is_low_rank:
            out[f"{self.layer_id}.sigma"] = self.low_rank.sigma
        else:
            out[f"{self.layer_id}.weight"] = self.weight
        out[f"{self.layer_id}.bias"] = self.bias
        return out

    def frozen(self):
        if not self.is_low_rank:
            return {}
        return {f"{self.layer_id}.u": self.low_rank.u, f"{self.layer_id}.v": self.low_rank.v}


@dataclass
class ForwardCache:
    model_id: int
    version: int
    inputs: list = field(default_factory=list)


class SequentialModel:
    """Ordered stack of :class:`DenseLayer` and :class:`Activation` items."""

    def __init__(self, layers):
        self.layers = list(layers)
        self.converted = False
        self.version = 0
        ids = [l.layer_id for l in self.dense_layers]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"duplicate layer ids: {ids}")

    def __repr__(self):
        return f"SequentialModel({self.layers!r})"

    @property
    def dense_layers(self):
        return [l for l in self.layers if isinstance(l, DenseLayer)]

    @property
    def n_factorizable(self):
        return len(self.dense_layers)

    def layer(self, layer_id):
        for l in self.dense_layers:
            if l.layer_id == layer_id:
                return l
        raise KeyError(layer_id)

    def touch(self):
        """Invalidate outstanding forward caches."""
        self.version += 1

    def trainable_parameters(self):
        out = {}
        for l in self.dense_layers:
            out.update(l.trainable())
        return out

    def frozen_parameters(self):
        out = {}
        for l in self.dense_layers:
            out.update(l.frozen())
        return out

    def param_totals(self):
        """``(trainable, total)`` element counts."""
        trainable = sum(a.size for a in self.trainable_parameters().values())
        frozen = sum(a.size for a in self.frozen_parameters().values())
        return trainable, trainable + frozen

    def ranks(self):
        return [l.low_rank.rank if l.is_low_rank else min(l.weight.shape) for l in self.dense_layers]

    def copy(self):
        layers = []
        for l in self.layers:
            if isinstance(l, DenseLayer):
                c = DenseLayer(l.layer_id, np.zeros((1, 1)), np.zeros(1))
                c.weight = None if l.weight is None else l.weight.copy()
                c.bias = l.bias.copy()
                c.low_rank = None if l.low_rank is None else l.low_rank.copy()
                layers.append(c)
            else:
                layers.append(Activation(l.kind))
        m = SequentialModel(layers)
        m.converted = self.converted
        return m

    def forward(self, inputs):
        return forward(self, inputs)

    def predict(self, inputs):
        return forward(self, inputs)[0]


def build_mlp(sizes, activation="relu", seed=0, rng=None):
    """MLP with ``len(sizes) - 1`` dense layers named ``fc1, fc2, ...``.

    Weights and biases are drawn from ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``.
    No activation follows the last layer.
    """
    if len(sizes) < 2:
        raise ConfigError("an MLP needs at least input and output sizes")
    rng = np.random.default_rng(seed) if rng is None else rng
    layers = []
    n_dense = len(sizes) - 1
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        bound = 1.0 / np.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        b = rng.uniform(-bound, bound, size=fan_out)
        layers.append(DenseLayer(f"fc{i + 1}", w, b))
        if i < n_dense - 1:
            layers.append(Activation(activation))
    return SequentialModel(layers)


def forward(model, inputs):
    """Run the model; returns ``(outputs, cache)`` for :func:`backward`."""
    x = as_matrix(inputs, "inputs")
    cache = ForwardCache(id(model), model.version)
    for layer in model.layers:
        cache.inputs.append(x)
        x = layer.forward(x)
    return x, cache


def backward(model, cache, loss_grad):
    """Gradients of every trainable tensor, keyed like ``trainable_parameters``."""
    if cache.model_id != id(model) or cache.version != model.version:
        raise StaleCacheError("forward cache does not match the current model state")
    g = np.asarray(loss_grad, dtype=np.float64)
    grads = {}
    for layer, x in zip(reversed(model.layers), reversed(cache.inputs)):
        if isinstance(layer, DenseLayer):
            g, lg = layer.backward(x, g)
            grads.update(lg)
        else:
            g = layer.backward(x, g)
    return {name: grads[name] for name in model.trainable_parameters()}


def cross_entropy_loss(logits, targets, label_smoothing=0.0):
    """Mean label-smoothed cross entropy and its gradient w.r.t. ``logits``."""
    logits = as_matrix(logits, "logits")
    eps = check_fraction(label_smoothing, "label_smoothing", low_open=False)
    targets = np.asarray(targets)
    b, k = logits.shape
    if targets.shape != (b,):
        raise ShapeError(f"targets shape {targets.shape} does not match batch size {b}")
    if targets.size and (targets.min() < 0 or targets.max() >= k):
        raise ValueError(f"target index out of range [0, {k})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - logsumexp
    q = np.full((b, k), eps / k)
    q[np.arange(b), targets] += 1.0 - eps
    loss = -(q * log_probs).sum() / b
    grad = (np.exp(log_probs) - q) / b
    return float(loss), grad


def mse_loss(predictions, targets):
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if p.shape != t.shape:
        raise ShapeError(f"predictions {p.shape} and targets {t.shape} differ in shape")
    diff = p - t
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def eligible_layer_ids(model, exclude_first=False, exclude_last=False):
    """Dense layers that may be factorized, in network order."""
    ids = [l.layer_id for l in model.dense_layers]
    lo = 1 if exclude_first else 0
    hi = len(ids) - 1 if exclude_last else len(ids)
    return ids[lo:hi]


def convert_to_low_rank(model, exclude_first=False, exclude_last=False):
    """Replace each eligible dense weight by its full-rank SVD factors, in place."""
    if model.converted:
        raise ConfigError("model is already in low-rank form")
    for layer_id in eligible_layer_ids(model, exclude_first, exclude_last):
        model.layer(layer_id).to_low_rank()
    model.converted = True
    model.touch()
    return model


def set_low_rank(model, layer_id, lrw):
    """Swap in a new factorization for one layer (basis update or truncation)."""
    layer = model.layer(layer_id)
    if not layer.is_low_rank:
        raise ConfigError(f"layer {layer_id} is not in low-rank form")
    if not isinstance(lrw, LowRankWeight) or lrw.full_shape != layer.low_rank.full_shape:
        raise ShapeError(f"replacement for {layer_id} must keep shape {layer.low_rank.full_shape}")
    layer.low_rank = lrw
    model.touch()
