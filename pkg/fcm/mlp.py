"""Feedforward binary anomaly classifier.

The local model trained by each federated client: fully connected layers with
rectifier activations and inverted dropout on the hidden layers, a logistic
output, binary cross-entropy loss, and the Adam optimizer. Parameters are
exchanged as flat vectors (layer order, weights before biases, row-major).
"""

import copy
from collections import namedtuple
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit

from .misc import rng
from .my_logger import my_logger


DEFAULT_HIDDEN_LAYERS = (128, 64, 32)
PROBABILITY_CLAMP = 1e-12
DECISION_THRESHOLD = 0.5

Dataset = namedtuple('Dataset', 'features labels')
TrainResult = namedtuple('TrainResult', 'model adam_state history epochs_run')


class MlpException(Exception):
    pass


class DimensionMismatchException(MlpException):
    pass


class NonFiniteInputException(MlpException):
    pass


class LengthMismatchException(MlpException):
    pass


class EmptyDatasetException(MlpException):
    pass


@dataclass(frozen=True)
class TrainConfig:
    """Local training hyper-parameters."""
    learning_rate: float = 0.001
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    dropout_rate: float = 0.4
    batch_size: int = 512
    max_epochs: int = 50
    early_stop_patience: int = 5
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.dropout_rate < 1.0:
            raise MlpException('dropout_rate must be in [0, 1)')
        if not self.learning_rate > 0:
            raise MlpException('learning_rate must be positive')
        if self.batch_size < 1 or self.max_epochs < 0:
            raise MlpException('batch_size must be positive and max_epochs '
                               'nonnegative')
        if self.early_stop_patience < 1:
            raise MlpException('early_stop_patience must be positive')

    def with_seed(self, seed):
        return replace(self, seed=seed)


def layer_sizes(n_features, hidden_layers=DEFAULT_HIDDEN_LAYERS):
    """Returns the layer dims [n_features, *hidden, 1]."""
    return [int(n_features)] + [int(h) for h in hidden_layers] + [1]


def parameter_count(layer_dims):
    """Returns the length of the flat parameter vector for the dims."""
    return sum(n_in * n_out + n_out
               for n_in, n_out in zip(layer_dims[:-1], layer_dims[1:]))


class MlpModel:
    """Definition for MlpModel class.

    Holds one (n_in x n_out) weight matrix and one bias vector per layer. The
    model is treated as immutable: training and optimizer steps return new
    instances.
    """
    def __init__(self, layer_dims, weights, biases):
        layer_dims = [int(d) for d in layer_dims]
        if len(layer_dims) < 2:
            raise DimensionMismatchException('need at least two layer dims')
        if len(weights) != len(layer_dims) - 1 or len(biases) != len(weights):
            raise DimensionMismatchException('one weight matrix and bias per '
                                             'layer is required')
        for W, b, n_in, n_out in zip(weights, biases, layer_dims[:-1],
                                     layer_dims[1:]):
            if W.shape != (n_in, n_out) or b.shape != (n_out,):
                raise DimensionMismatchException(
                    'layer %dx%d got weights %r and bias %r' %
                    (n_in, n_out, W.shape, b.shape))
        self._layer_dims = layer_dims
        self._weights = [np.array(W, dtype=float) for W in weights]
        self._biases = [np.array(b, dtype=float) for b in biases]

    @classmethod
    def initialize(cls, layer_dims, seed):
        """He-uniform weights, zero biases."""
        generator = rng(seed)
        weights, biases = [], []
        for n_in, n_out in zip(layer_dims[:-1], layer_dims[1:]):
            limit = np.sqrt(6.0 / n_in)
            weights.append(generator.uniform(-limit, limit, (n_in, n_out)))
            biases.append(np.zeros(n_out))
        return cls(layer_dims, weights, biases)

    @property
    def layer_dims(self):
        return list(self._layer_dims)

    @property
    def weights(self):
        return self._weights

    @property
    def biases(self):
        return self._biases

    @property
    def n_features(self):
        return self._layer_dims[0]

    @property
    def n_layers(self):
        return len(self._weights)

    def copy(self):
        return copy.deepcopy(self)

    def __repr__(self):
        return 'MlpModel(%s)' % '-'.join(str(d) for d in self._layer_dims)


class AdamState:
    """First and second moment accumulators (flat, like the parameters) and
    the step counter."""
    def __init__(self, m, v, step=0):
        self.m = np.array(m, dtype=float)
        self.v = np.array(v, dtype=float)
        self.step = int(step)

    @classmethod
    def zeros(cls, n_params):
        return cls(np.zeros(n_params), np.zeros(n_params), 0)

    def copy(self):
        return AdamState(self.m, self.v, self.step)


def flatten_params(model):
    """Returns the flat parameter vector of the model."""
    parts = []
    for W, b in zip(model.weights, model.biases):
        parts.append(W.ravel())
        parts.append(b)
    return np.concatenate(parts)


def unflatten_params(vector, layer_dims):
    """Rebuilds a model from a flat parameter vector."""
    vector = np.asarray(vector, dtype=float)
    expected = parameter_count(layer_dims)
    if vector.shape != (expected,):
        raise LengthMismatchException('expected %d parameters, got %d' %
                                      (expected, vector.size))
    weights, biases, offset = [], [], 0
    for n_in, n_out in zip(layer_dims[:-1], layer_dims[1:]):
        weights.append(vector[offset:offset + n_in * n_out]
                       .reshape(n_in, n_out).copy())
        offset += n_in * n_out
        biases.append(vector[offset:offset + n_out].copy())
        offset += n_out
    return MlpModel(layer_dims, weights, biases)


def dropout_mask(shape, rate, generator):
    """Returns an inverted-dropout mask: kept units are scaled by 1/(1-rate)."""
    return (generator.random(shape) >= rate) / (1.0 - rate)


def _check_batch(model, batch):
    batch = np.asarray(batch, dtype=float)
    if batch.ndim != 2 or batch.shape[1] != model.n_features:
        raise DimensionMismatchException('expected %d features, got shape %r'
                                         % (model.n_features, batch.shape))
    if not np.all(np.isfinite(batch)):
        raise NonFiniteInputException('batch contains NaN or Inf')
    return batch


def _forward(model, batch, dropout_rate, generator):
    """Forward pass returning probabilities and the per-layer cache."""
    activations, pre_activations, masks = [batch], [], []
    a = batch
    last = model.n_layers - 1
    for layer, (W, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ W + b
        pre_activations.append(z)
        if layer == last:
            break
        a = np.maximum(z, 0.0)
        mask = None
        if generator is not None and dropout_rate > 0:
            mask = dropout_mask(a.shape, dropout_rate, generator)
            a = a * mask
        masks.append(mask)
        activations.append(a)
    return expit(pre_activations[-1][:, 0]), (activations, pre_activations,
                                             masks)


def forward(model, batch, dropout_rate=0.0, generator=None, training=False):
    """Returns the predicted anomaly probability of every row.

    Inverted dropout is applied to hidden activations only in training mode,
    with masks drawn from `generator`.
    """
    batch = _check_batch(model, batch)
    if not training:
        generator = None
    return _forward(model, batch, dropout_rate, generator)[0]


def predict(model, batch):
    """Returns 0/1 predictions at the decision threshold."""
    return (forward(model, batch) >= DECISION_THRESHOLD).astype(int)


def binary_cross_entropy(probabilities, labels):
    p = np.clip(probabilities, PROBABILITY_CLAMP, 1.0 - PROBABILITY_CLAMP)
    return float(-np.mean(labels * np.log(p) + (1 - labels) * np.log(1 - p)))


def loss_and_gradients(model, batch, labels, dropout_rate=0.0,
                       generator=None):
    """Returns the binary cross-entropy loss and its flat gradient.

    The gradient is computed by backpropagation through the same dropout
    masks the forward pass drew.
    """
    batch = _check_batch(model, batch)
    labels = np.asarray(labels, dtype=float)
    if labels.shape != (batch.shape[0],) or batch.shape[0] == 0:
        raise DimensionMismatchException('need one label per row of a '
                                         'nonempty batch')
    p, (activations, _, masks) = _forward(model, batch, dropout_rate,
                                          generator)
    loss = binary_cross_entropy(p, labels)

    n = batch.shape[0]
    grads_W = [None] * model.n_layers
    grads_b = [None] * model.n_layers
    dz = ((p - labels) / n)[:, None]
    for layer in reversed(range(model.n_layers)):
        grads_W[layer] = activations[layer].T @ dz
        grads_b[layer] = dz.sum(axis=0)
        if layer == 0:
            break
        da = dz @ model.weights[layer].T
        if masks[layer - 1] is not None:
            da = da * masks[layer - 1]
        dz = da * (activations[layer] > 0)

    parts = []
    for dW, db in zip(grads_W, grads_b):
        parts.append(dW.ravel())
        parts.append(db)
    return loss, np.concatenate(parts)


def adam_step(model, grads, state, lr=0.001, betas=(0.9, 0.999), eps=1e-8):
    """Applies one bias-corrected Adam update.

    Returns:
        (MlpModel, AdamState): the updated model and optimizer state
    """
    params = flatten_params(model)
    grads = np.asarray(grads, dtype=float)
    if grads.shape != params.shape or state.m.shape != params.shape:
        raise LengthMismatchException('gradient/state shape does not match '
                                      '%d parameters' % params.size)
    beta1, beta2 = betas
    step = state.step + 1
    m = beta1 * state.m + (1 - beta1) * grads
    v = beta2 * state.v + (1 - beta2) * grads ** 2
    m_hat = m / (1 - beta1 ** step)
    v_hat = v / (1 - beta2 ** step)
    params = params - lr * m_hat / (np.sqrt(v_hat) + eps)
    return unflatten_params(params, model.layer_dims), AdamState(m, v, step)


def accuracy_on(model, dataset):
    """Returns the fraction of rows classified correctly."""
    return float(np.mean(predict(model, dataset.features) == dataset.labels))


def train_local(model, train_set, validation_set, config, adam_state=None,
                start_epoch=0, on_epoch_end=None):
    """Trains the model with mini-batch Adam and early stopping.

    Every epoch visits the training rows in a seeded shuffled order. After
    each epoch the validation accuracy is recorded; training stops when it has
    not strictly improved for `early_stop_patience` epochs or when
    `max_epochs` is reached.

    Args:
        model (MlpModel): the starting model
        train_set (Dataset): training features and labels
        validation_set (Dataset): validation features and labels
        config (TrainConfig): hyper-parameters and seed
        adam_state (AdamState): optimizer state to resume from
        start_epoch (int): epochs already completed (resumed runs)
        on_epoch_end (callable): called as on_epoch_end(epoch, model, state)
            after each completed epoch; may raise to interrupt training
    Returns:
        TrainResult: the best-validation model, the final optimizer state,
            the per-epoch validation accuracies and the number of epochs run
    """
    if len(train_set.labels) == 0 or len(validation_set.labels) == 0:
        raise EmptyDatasetException('training and validation sets must be '
                                    'nonempty')
    generator = rng(config.seed)
    state = (adam_state.copy() if adam_state is not None else
             AdamState.zeros(parameter_count(model.layer_dims)))
    n_rows = len(train_set.labels)
    batch_size = min(config.batch_size, n_rows)
    betas = (config.adam_beta1, config.adam_beta2)

    best_model, best_accuracy, stale = model, None, 0
    history = []
    current = model
    for epoch in range(start_epoch, config.max_epochs):
        order = generator.permutation(n_rows)
        for start in range(0, n_rows, batch_size):
            rows = order[start:start + batch_size]
            _, grads = loss_and_gradients(current, train_set.features[rows],
                                          train_set.labels[rows],
                                          config.dropout_rate, generator)
            current, state = adam_step(current, grads, state,
                                       config.learning_rate, betas,
                                       config.adam_epsilon)
        accuracy = accuracy_on(current, validation_set)
        history.append(accuracy)
        my_logger.debug('epoch %d: validation accuracy %.4f' %
                        (epoch + 1, accuracy))
        if best_accuracy is None or accuracy > best_accuracy:
            best_model, best_accuracy, stale = current, accuracy, 0
        else:
            stale += 1
        if on_epoch_end is not None:
            on_epoch_end(epoch + 1, current, state)
        if stale >= config.early_stop_patience:
            break
    return TrainResult(best_model, state, history, len(history))
