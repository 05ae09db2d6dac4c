import numpy as np
import pytest

from src.core.device import DevicePhysics
from src.core.exceptions import ConfigError, DataError, ShapeError, TrainingError
from src.core.network import NetworkTopology
from src.core.neurons import NeuronParams
from src.training.trainer import (
    ReferenceTrainer,
    TrainedWeights,
    TrainingConfig,
    coupling_gain,
    loss_and_gradients,
    predict_reference,
    reference_accuracy,
    reference_forward,
    train_reference,
)


def prototypes(n_per_class=20):
    """Two classes lighting opposite halves of an 8-pixel pattern."""
    a = np.array([1, 1, 1, 1, 0, 0, 0, 0])
    b = 1 - a
    patterns = np.array([a, b] * n_per_class)
    labels = np.array([0, 1] * n_per_class)
    return patterns, labels


def test_coupling_gain_of_default_chip():
    assert coupling_gain(DevicePhysics(), NeuronParams()) == pytest.approx(8.0 * 1.6)


def test_forward_has_hardware_form():
    rng = np.random.default_rng(0)
    weights = TrainedWeights(w1=rng.normal(size=(6, 4)), w2=rng.normal(size=(5, 3)))
    x = rng.integers(0, 2, (7, 5))
    acts = reference_forward(weights, x, kappa=12.8)
    z1 = np.hstack([x, np.ones((7, 1))]) @ weights.w1
    hidden = np.maximum(0.0, np.tanh(z1))
    coupled = np.exp(12.8 * (hidden - 1.0))
    np.testing.assert_allclose(acts.hidden, hidden)
    np.testing.assert_allclose(acts.logits, np.hstack([coupled, np.ones((7, 1))]) @ weights.w2)
    assert np.all(acts.coupled <= 1.0)


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(1)
    weights = TrainedWeights(w1=rng.normal(0, 0.7, (6, 4)), w2=rng.normal(0, 1.0, (5, 3)))
    x = rng.integers(0, 2, (6, 5))
    labels = np.array([0, 1, 2, 0, 1, 2])
    kappa = 3.0
    _, grads = loss_and_gradients(weights, x, labels, kappa)
    eps = 1e-6
    for name in ("w1", "w2"):
        base = getattr(weights, name)
        numeric = np.zeros_like(base)
        for index in np.ndindex(base.shape):
            shifted = []
            for sign in (1.0, -1.0):
                trial = base.copy()
                trial[index] += sign * eps
                w = TrainedWeights(**{**{"w1": weights.w1, "w2": weights.w2}, name: trial})
                shifted.append(loss_and_gradients(w, x, labels, kappa)[0])
            numeric[index] = (shifted[0] - shifted[1]) / (2 * eps)
        np.testing.assert_allclose(getattr(grads, name), numeric, rtol=1e-4, atol=1e-8)


def test_trainer_separates_toy_classes():
    patterns, labels = prototypes()
    config = TrainingConfig(epochs=40, batch_size=8, learning_rate=0.1, lr_decay=1.0)
    result = ReferenceTrainer(config, kappa=2.0, seed=0).train(patterns, labels, n_hidden=6, n_outputs=2)
    assert reference_accuracy(result.weights, patterns, labels, 2.0) == 1.0
    assert len(result.history) == 40
    assert result.history[-1]["loss"] < result.history[0]["loss"]


def test_training_is_seeded():
    patterns, labels = prototypes(5)
    config = TrainingConfig(epochs=3, batch_size=4)
    first = train_reference(patterns, labels, config, seed=4, kappa=2.0, n_hidden=3, n_outputs=2)
    second = train_reference(patterns, labels, config, seed=4, kappa=2.0, n_hidden=3, n_outputs=2)
    np.testing.assert_array_equal(first.w1, second.w1)
    np.testing.assert_array_equal(predict_reference(first, patterns, 2.0), predict_reference(second, patterns, 2.0))


def test_divergence_raises_training_error():
    patterns, labels = prototypes(10)
    config = TrainingConfig(epochs=3, batch_size=5, learning_rate=1e300, weight_decay=1e300)
    with np.errstate(all="ignore"), pytest.raises(TrainingError):
        ReferenceTrainer(config, kappa=2.0, seed=0).train(patterns, labels, n_hidden=3, n_outputs=2)


def test_training_data_is_validated():
    patterns, labels = prototypes(2)
    trainer = ReferenceTrainer(TrainingConfig(epochs=1), kappa=2.0, seed=0)
    with pytest.raises(DataError):
        trainer.train(patterns, labels[:-1], n_hidden=3, n_outputs=2)
    with pytest.raises(DataError):
        trainer.train(patterns, labels + 5, n_hidden=3, n_outputs=2)


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainingConfig(momentum=1.0)
    with pytest.raises(ConfigError):
        TrainingConfig(epochs=0)


def test_weights_check_topology():
    weights = TrainedWeights(w1=np.zeros((785, 64)), w2=np.zeros((65, 10)))
    weights.check_topology(NetworkTopology())
    assert weights.has_bias and weights.n_inputs == 784
    with pytest.raises(ShapeError):
        weights.check_topology(NetworkTopology(n_hidden=32))
    with pytest.raises(TrainingError):
        TrainedWeights(w1=np.full((3, 2), np.nan), w2=np.zeros((3, 2)))
