"""Feed-forward classifier with hand-written gradients and Adam.

Hidden layers use ReLU, the output layer softmax, the loss is categorical
cross-entropy. Parameters are laid out as alternating ``weight`` matrices
of shape ``(out, in)`` and ``bias`` vectors, so every matrix row is one
unit's incoming weights."""

import logging
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ShapeError, NumericalError, InsufficientSamples, \
    ConfigError
from .metrics import ConfusionMatrix
from .params import LayeredParams

logger = logging.getLogger(__name__)

_EVAL_CHUNK = 4096


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden_dims: tuple = (256, 128)
    num_classes: int = 10

    def __post_init__(self):
        object.__setattr__(self, 'hidden_dims', tuple(int(h) for h in self.hidden_dims))
        errors = self.validate()
        if errors:
            raise ConfigError(errors)

    def validate(self):
        errors = []
        if self.input_dim < 1:
            errors.append("input_dim: must be positive, got %s" % (self.input_dim,))
        if any(h < 1 for h in self.hidden_dims):
            errors.append("hidden_dims: must all be positive, got %s" % (list(self.hidden_dims),))
        if self.num_classes < 2:
            errors.append("num_classes: must be at least 2, got %s" % (self.num_classes,))
        return errors

    @property
    def layer_dims(self):
        return (self.input_dim,) + self.hidden_dims + (self.num_classes,)


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        errors = self.validate()
        if errors:
            raise ConfigError(errors)

    def validate(self):
        errors = []
        if not self.lr >= 0:
            errors.append("lr: must be non-negative, got %s" % (self.lr,))
        for name in ('beta1', 'beta2'):
            value = getattr(self, name)
            if not 0 <= value < 1:
                errors.append("%s: must be in [0, 1), got %s" % (name, value))
        if not self.eps > 0:
            errors.append("eps: must be positive, got %s" % (self.eps,))
        return errors


@dataclass(frozen=True)
class TrainConfig:
    epochs_per_round: int = 3
    batch_size: int = 64
    adam: AdamConfig = field(default_factory=AdamConfig)
    seed: int = 0

    def __post_init__(self):
        errors = self.validate()
        if errors:
            raise ConfigError(errors)

    def validate(self):
        errors = []
        if self.epochs_per_round < 1:
            errors.append("epochs_per_round: must be at least 1, got %s" % (
                self.epochs_per_round,))
        if self.batch_size < 1:
            errors.append("batch_size: must be at least 1, got %s" % (self.batch_size,))
        return errors


@dataclass(frozen=True)
class ModelConfig:
    """Hidden layer widths of the experiment model. Input and output widths
    come from the dataset."""
    hidden_dims: tuple = (256, 128)

    def __post_init__(self):
        object.__setattr__(self, 'hidden_dims', tuple(int(h) for h in self.hidden_dims))
        errors = self.validate()
        if errors:
            raise ConfigError(errors)

    def validate(self):
        if any(h < 1 for h in self.hidden_dims):
            return ["hidden_dims: must all be positive, got %s" % (list(self.hidden_dims),)]
        return []

    def spec(self, input_dim, num_classes):
        return MlpSpec(input_dim, self.hidden_dims, num_classes)


def init_params(spec, seed):
    """Uniform He-style initialisation, weights in ``±sqrt(6 / fan_in)``,
    zero biases.

    :rtype: :py:class:`dfl_sentinel.params.LayeredParams`"""
    rng = np.random.default_rng(seed)
    dims = spec.layer_dims
    layers = []
    n_layers = len(dims) - 1
    for idx, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        prefix = 'output' if idx == n_layers - 1 else 'dense%s' % (idx,)
        limit = np.sqrt(6.0 / fan_in)
        weights = rng.uniform(-limit, limit, size=(fan_out, fan_in)).astype(np.float32)
        # float32 rounding can push a draw past the bound
        np.clip(weights, -np.float32(limit), np.float32(limit), out=weights)
        layers.append(('%s.weight' % (prefix,), weights))
        layers.append(('%s.bias' % (prefix,), np.zeros(fan_out, dtype=np.float32)))
    return LayeredParams(layers)


def _unpack(params):
    arrays = [l.values.astype(np.float64) for l in params]
    if not arrays or len(arrays) % 2:
        raise ShapeError("Expected alternating weight and bias layers, got %r" % (params,))
    for w, b in zip(arrays[::2], arrays[1::2]):
        if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
            raise ShapeError("Mismatched weight %s and bias %s" % (w.shape, b.shape))
    for w, w_next in zip(arrays[:-2:2], arrays[2::2]):
        if w_next.shape[1] != w.shape[0]:
            raise ShapeError("Layer of width %s feeds layer expecting %s inputs" % (
                w.shape[0], w_next.shape[1]))
    return arrays


def _check_batch(arrays, batch):
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != arrays[0].shape[1]:
        raise ShapeError("Batch of shape %s does not match input dimension %s" % (
            batch.shape, arrays[0].shape[1]))
    return batch


def _log_softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _forward(arrays, batch):
    """Pre-activations of every layer; the last entry holds the logits."""
    pre = []
    act = batch
    n_layers = len(arrays) // 2
    for idx in range(n_layers):
        w, b = arrays[2 * idx], arrays[2 * idx + 1]
        z = act @ w.T + b
        pre.append(z)
        if idx < n_layers - 1:
            act = np.maximum(z, 0.0)
    return pre


def _loss_and_grad(arrays, batch, labels):
    pre = _forward(arrays, batch)
    log_probs = _log_softmax(pre[-1])
    n = batch.shape[0]
    rows = np.arange(n)
    loss = -log_probs[rows, labels].mean()
    if not np.isfinite(loss):
        raise NumericalError("Non-finite loss %s" % (loss,))
    delta = np.exp(log_probs)
    delta[rows, labels] -= 1.0
    delta /= n
    grads = [None] * len(arrays)
    n_layers = len(arrays) // 2
    for idx in range(n_layers - 1, -1, -1):
        inputs = batch if idx == 0 else np.maximum(pre[idx - 1], 0.0)
        grads[2 * idx] = delta.T @ inputs
        grads[2 * idx + 1] = delta.sum(axis=0)
        if idx > 0:
            delta = (delta @ arrays[2 * idx]) * (pre[idx - 1] > 0)
    return float(loss), grads


def _check_labels(labels, num_outputs):
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= num_outputs):
        raise ValueError("Labels must be in [0, %s)" % (num_outputs,))
    return labels


def forward(params, batch):
    """Class probabilities for every row of ``batch``.

    :rtype: :py:class:`numpy.ndarray` of shape ``(rows, classes)``"""
    arrays = _unpack(params)
    batch = _check_batch(arrays, batch)
    log_probs = _log_softmax(_forward(arrays, batch)[-1])
    if not np.isfinite(log_probs).all():
        raise NumericalError("Non-finite activations")
    return np.maximum(np.exp(log_probs), np.finfo(np.float64).tiny)


def loss_and_grad(params, batch, labels):
    """Mean cross-entropy over the batch and its gradient.

    :returns: ``(loss, grads)`` with ``grads`` shape-compatible with
      ``params``.
    :raises: :py:class:`dfl_sentinel.exceptions.NumericalError` on
      non-finite activations."""
    arrays = _unpack(params)
    batch = _check_batch(arrays, batch)
    labels = _check_labels(labels, arrays[-1].shape[0])
    loss, grads = _loss_and_grad(arrays, batch, labels)
    return loss, LayeredParams(zip(params.names, grads))


def train_local(params, dataset, cfg, round_idx=0):
    """Train for ``cfg.epochs_per_round`` epochs of mini-batch Adam.

    Optimizer state starts fresh on every call. The shuffle order is drawn
    from ``(cfg.seed, round_idx)``.

    :type params: :py:class:`dfl_sentinel.params.LayeredParams`
    :type dataset: :py:class:`dfl_sentinel.data.Dataset`
    :type cfg: :py:class:`TrainConfig`
    :rtype: :py:class:`dfl_sentinel.params.LayeredParams`"""
    n = len(dataset)
    if n == 0:
        raise InsufficientSamples("Cannot train on an empty dataset")
    theta = _unpack(params)
    features = _check_batch(theta, dataset.features)
    labels = _check_labels(dataset.labels, theta[-1].shape[0])
    adam = cfg.adam
    rng = np.random.default_rng(np.random.SeedSequence([int(cfg.seed), int(round_idx)]))
    first = [np.zeros_like(t) for t in theta]
    second = [np.zeros_like(t) for t in theta]
    step = 0
    for epoch in range(cfg.epochs_per_round):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, grads = _loss_and_grad(theta, features[idx], labels[idx])
            epoch_loss += loss * idx.size
            step += 1
            correction1 = 1.0 - adam.beta1 ** step
            correction2 = 1.0 - adam.beta2 ** step
            for t, g, m, v in zip(theta, grads, first, second):
                m *= adam.beta1
                m += (1.0 - adam.beta1) * g
                v *= adam.beta2
                v += (1.0 - adam.beta2) * g * g
                t -= adam.lr * (m / correction1) / (np.sqrt(v / correction2) + adam.eps)
        logger.debug("Epoch %s/%s mean batch loss %.6f", epoch + 1, cfg.epochs_per_round,
                     epoch_loss / n)
    return LayeredParams(zip(params.names, theta))


def predict_log_proba(params, features):
    arrays = _unpack(params)
    features = _check_batch(arrays, features)
    out = np.empty((features.shape[0], arrays[-1].shape[0]), dtype=np.float64)
    for start in range(0, features.shape[0], _EVAL_CHUNK):
        chunk = features[start:start + _EVAL_CHUNK]
        out[start:start + _EVAL_CHUNK] = _log_softmax(_forward(arrays, chunk)[-1])
    return out


def mean_loss(params, dataset):
    """Mean cross-entropy of ``params`` on ``dataset`` - the bootstrap
    validation loss when ``dataset`` is a node's bootstrap set."""
    if len(dataset) == 0:
        raise InsufficientSamples("Cannot evaluate on an empty dataset")
    log_probs = predict_log_proba(params, dataset.features)
    labels = _check_labels(dataset.labels, log_probs.shape[1])
    return float(-log_probs[np.arange(labels.size), labels].mean())


def evaluate(params, dataset):
    """Mean loss and confusion matrix of ``params`` on ``dataset``.

    :rtype: tuple(float, :py:class:`dfl_sentinel.metrics.ConfusionMatrix`)"""
    if len(dataset) == 0:
        raise InsufficientSamples("Cannot evaluate on an empty dataset")
    log_probs = predict_log_proba(params, dataset.features)
    if log_probs.shape[1] != dataset.num_classes:
        raise ShapeError("Model has %s outputs for a %s-class dataset" % (
            log_probs.shape[1], dataset.num_classes))
    labels = _check_labels(dataset.labels, log_probs.shape[1])
    loss = float(-log_probs[np.arange(labels.size), labels].mean())
    predicted = log_probs.argmax(axis=1)
    return loss, ConfusionMatrix.from_labels(labels, predicted, dataset.num_classes)
