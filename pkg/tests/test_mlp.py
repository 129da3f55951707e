import numpy as np
import pytest

from fcm.misc import rng
from fcm.mlp import (AdamState, Dataset, DimensionMismatchException,
                     EmptyDatasetException, LengthMismatchException, MlpModel,
                     TrainConfig, adam_step, binary_cross_entropy,
                     dropout_mask, flatten_params, forward, layer_sizes,
                     loss_and_gradients, parameter_count, predict,
                     train_local, unflatten_params)


SMALL_DIMS = [3, 5, 4, 1]


def _batch(seed=0, n=16):
    gen = np.random.default_rng(seed)
    features = gen.normal(0.0, 1.0, (n, 3))
    return features, (features[:, 0] > 0).astype(float)


def _datasets(frame):
    data = Dataset(frame.values, frame.labels)
    train = Dataset(data.features[:300], data.labels[:300])
    validation = Dataset(data.features[300:], data.labels[300:])
    return train, validation


def test_default_parameter_count():
    dims = layer_sizes(4)
    assert dims == [4, 128, 64, 32, 1]
    assert parameter_count(dims) == 11009
    model = MlpModel.initialize(dims, seed=0)
    assert flatten_params(model).shape == (11009,)


def test_flat_layout_is_weights_then_biases():
    model = MlpModel([2, 1], [np.array([[1.0], [2.0]])], [np.array([3.0])])
    np.testing.assert_array_equal(flatten_params(model), [1.0, 2.0, 3.0])
    rebuilt = unflatten_params([1.0, 2.0, 3.0], [2, 1])
    np.testing.assert_array_equal(rebuilt.weights[0], [[1.0], [2.0]])
    with pytest.raises(LengthMismatchException):
        unflatten_params([1.0, 2.0], [2, 1])


def test_initialization_is_seeded():
    a = flatten_params(MlpModel.initialize(SMALL_DIMS, seed=4))
    b = flatten_params(MlpModel.initialize(SMALL_DIMS, seed=4))
    c = flatten_params(MlpModel.initialize(SMALL_DIMS, seed=5))
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_forward_is_probability():
    model = MlpModel.initialize(SMALL_DIMS, seed=1)
    features, _ = _batch()
    p = forward(model, features)
    assert p.shape == (16,)
    assert np.all((p > 0) & (p < 1))
    np.testing.assert_array_equal(predict(model, features), (p >= 0.5))


def test_dropout_only_in_training():
    model = MlpModel.initialize(SMALL_DIMS, seed=1)
    features, _ = _batch()
    np.testing.assert_array_equal(
        forward(model, features, 0.5, rng(0), training=False),
        forward(model, features))


def test_dimension_mismatch():
    model = MlpModel.initialize(SMALL_DIMS, seed=1)
    with pytest.raises(DimensionMismatchException):
        forward(model, np.zeros((2, 4)))


def _random_model(dims, seed):
    """He-initialized weights with random nonzero biases, so no hidden unit
    sits exactly on the rectifier's kink."""
    model = MlpModel.initialize(dims, seed)
    generator = rng(seed + 1000)
    biases = [generator.normal(0.0, 0.5, b.shape) for b in model.biases]
    return MlpModel(dims, model.weights, biases)


def _numeric_gradient(model, features, labels, dropout_rate, seed, h=1e-6):
    params = flatten_params(model)
    grad = np.empty_like(params)
    for i in range(params.size):
        losses = []
        for step in (h, -h):
            shifted = params.copy()
            shifted[i] += step
            loss, _ = loss_and_gradients(
                unflatten_params(shifted, model.layer_dims), features, labels,
                dropout_rate, rng(seed) if dropout_rate else None)
            losses.append(loss)
        grad[i] = (losses[0] - losses[1]) / (2 * h)
    return grad


def _relative_error(analytic, numeric):
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-5)
    return np.max(np.abs(analytic - numeric) / scale)


@pytest.mark.parametrize('dropout_rate', [0.0, 0.3])
def test_gradients_match_finite_differences(dropout_rate):
    model = _random_model(SMALL_DIMS, seed=2)
    features, labels = _batch(seed=3)
    _, grads = loss_and_gradients(model, features, labels, dropout_rate,
                                  rng(7) if dropout_rate else None)
    numeric = _numeric_gradient(model, features, labels, dropout_rate, 7)
    np.testing.assert_allclose(grads, numeric, rtol=1e-4, atol=1e-7)


def test_gradients_of_random_models():
    generator = rng(21)
    errors = []
    for seed in range(20):
        n_layers = int(generator.integers(1, 4))
        dims = [int(generator.integers(2, 6))] + \
            [int(n) for n in generator.integers(2, 7, n_layers)] + [1]
        model = _random_model(dims, seed)
        features = generator.normal(0.0, 1.0, (8, dims[0]))
        labels = (generator.random(8) < 0.5).astype(float)
        _, grads = loss_and_gradients(model, features, labels)
        numeric = _numeric_gradient(model, features, labels, 0.0, seed)
        errors.append(_relative_error(grads, numeric))
    assert max(errors) < 1e-4


@pytest.mark.parametrize('rate', [0.1, 0.2])
def test_inverted_dropout_preserves_expectation(rate):
    activations = np.linspace(0.5, 2.0, 4)
    masks = dropout_mask((10000, 4), rate, rng(0))
    np.testing.assert_allclose((activations * masks).mean(axis=0),
                               activations, rtol=0.02)


def test_default_dropout_preserves_layer_mean():
    activations = np.linspace(0.5, 2.0, 4)
    masks = dropout_mask((10000, 4), TrainConfig().dropout_rate, rng(1))
    assert (activations * masks).mean() == \
        pytest.approx(activations.mean(), rel=0.02)


def test_binary_cross_entropy_is_clamped():
    loss = binary_cross_entropy(np.array([0.0, 1.0]), np.array([1.0, 0.0]))
    assert np.isfinite(loss)
    assert binary_cross_entropy(np.array([0.5]), np.array([1.0])) == \
        pytest.approx(np.log(2))


def test_first_adam_step_moves_by_learning_rate():
    model = MlpModel.initialize(SMALL_DIMS, seed=2)
    features, labels = _batch(seed=3)
    _, grads = loss_and_gradients(model, features, labels)
    state = AdamState.zeros(grads.size)
    updated, new_state = adam_step(model, grads, state, lr=0.01)
    delta = flatten_params(updated) - flatten_params(model)
    moving = np.abs(grads) > 1e-4
    np.testing.assert_allclose(delta[moving], -0.01 * np.sign(grads[moving]),
                               rtol=1e-3)
    assert new_state.step == 1
    assert state.step == 0


def test_adam_shape_mismatch():
    model = MlpModel.initialize(SMALL_DIMS, seed=2)
    with pytest.raises(LengthMismatchException):
        adam_step(model, np.zeros(3), AdamState.zeros(3))


def test_training_learns_separable_labels(separable_frame):
    train, validation = _datasets(separable_frame)
    model = MlpModel.initialize([3, 8, 4, 1], seed=0)
    config = TrainConfig(learning_rate=0.01, batch_size=32, max_epochs=30,
                         dropout_rate=0.0, early_stop_patience=30)
    result = train_local(model, train, validation, config)
    assert result.epochs_run == 30
    assert len(result.history) == 30
    assert max(result.history) > 0.9
    assert result.adam_state.step == 30 * 10


def test_training_is_deterministic(separable_frame):
    train, validation = _datasets(separable_frame)
    model = MlpModel.initialize([3, 8, 4, 1], seed=0)
    config = TrainConfig(learning_rate=0.01, batch_size=32, max_epochs=3,
                         dropout_rate=0.4, seed=9)
    a = train_local(model, train, validation, config)
    b = train_local(model, train, validation, config)
    np.testing.assert_array_equal(flatten_params(a.model),
                                  flatten_params(b.model))
    assert a.history == b.history


def test_early_stopping_on_flat_validation(separable_frame):
    train, validation = _datasets(separable_frame)
    model = MlpModel.initialize([3, 8, 4, 1], seed=0)
    config = TrainConfig(learning_rate=1e-12, max_epochs=20,
                         early_stop_patience=2)
    result = train_local(model, train, validation, config)
    assert result.epochs_run == 3


def test_zero_epochs_returns_input_model(separable_frame):
    train, validation = _datasets(separable_frame)
    model = MlpModel.initialize([3, 8, 4, 1], seed=0)
    result = train_local(model, train, validation, TrainConfig(max_epochs=0))
    assert result.epochs_run == 0
    assert result.model is model


def test_resume_and_epoch_callback(separable_frame):
    train, validation = _datasets(separable_frame)
    model = MlpModel.initialize([3, 8, 4, 1], seed=0)
    seen = []
    config = TrainConfig(max_epochs=5, early_stop_patience=5)
    result = train_local(model, train, validation, config,
                         adam_state=AdamState.zeros(parameter_count(
                             model.layer_dims)), start_epoch=3,
                         on_epoch_end=lambda epoch, m, s: seen.append(epoch))
    assert seen == [4, 5]
    assert result.epochs_run == 2


def test_callback_can_interrupt(separable_frame):
    train, validation = _datasets(separable_frame)
    model = MlpModel.initialize([3, 8, 4, 1], seed=0)

    class Stop(Exception):
        pass

    def stop_at_two(epoch, current, state):
        if epoch == 2:
            raise Stop()

    with pytest.raises(Stop):
        train_local(model, train, validation, TrainConfig(max_epochs=5),
                    on_epoch_end=stop_at_two)


def test_empty_dataset_rejected():
    model = MlpModel.initialize([3, 2, 1], seed=0)
    empty = Dataset(np.zeros((0, 3)), np.zeros(0))
    with pytest.raises(EmptyDatasetException):
        train_local(model, empty, empty, TrainConfig())
