"""
Software reference model of the chip and its minibatch backprop trainer.

The forward pass mirrors the hardware's functional form, so weights trained here can be
imported without retraining:

    z1 = [x, 1] @ w1
    a  = max(0, tanh(z1))                    rectified-tanh hidden layer
    u  = exp(kappa * (a - 1))                gate-coupled second array
    o  = [u, 1] @ w2                         output logits

kappa is the subthreshold slope times the activation output swing: the hidden voltage
v = v_out_min + a * (v_out_max - v_out_min) drives cells tuned at v_out_max, which
therefore conduct exp(beta0 * (v - v_out_max)) times their tuned current.
"""
import logging
import math
from dataclasses import dataclass, asdict, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from src.core.device import DevicePhysics
from src.core.exceptions import ConfigError, DataError, ShapeError, TrainingError
from src.core.neurons import NeuronParams

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = 25
    batch_size: int = 50
    learning_rate: float = 0.05
    lr_decay: float = 0.95  # per-epoch multiplier
    momentum: float = 0.9
    init_scale: float = 1.0  # w1 std = init_scale / sqrt(fan_in)
    hidden_bias_init: float = 0.5
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.learning_rate <= 0 or not 0 < self.lr_decay <= 1:
            raise ConfigError("need learning_rate > 0 and lr_decay in (0, 1]")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.init_scale <= 0 or self.weight_decay < 0:
            raise ConfigError("init_scale must be positive and weight_decay non-negative")

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class TrainedWeights:
    w1: np.ndarray  # (n_inputs [+1], n_hidden)
    w2: np.ndarray  # (n_hidden [+1], n_outputs)

    def __post_init__(self):
        w1 = np.asarray(self.w1, dtype=float)
        w2 = np.asarray(self.w2, dtype=float)
        if w1.ndim != 2 or w2.ndim != 2:
            raise ShapeError("weights must be matrices")
        if w2.shape[0] not in (w1.shape[1], w1.shape[1] + 1):
            raise ShapeError(f"w2 has {w2.shape[0]} rows for {w1.shape[1]} hidden neurons")
        if not (np.all(np.isfinite(w1)) and np.all(np.isfinite(w2))):
            raise TrainingError("weights contain non-finite entries")
        object.__setattr__(self, "w1", w1)
        object.__setattr__(self, "w2", w2)

    @property
    def has_bias(self) -> bool:
        return self.w2.shape[0] == self.w1.shape[1] + 1

    @property
    def n_inputs(self) -> int:
        return self.w1.shape[0] - int(self.has_bias)

    def layer_scales(self) -> Tuple[float, float]:
        return float(np.max(np.abs(self.w1))), float(np.max(np.abs(self.w2)))

    def check_topology(self, topology) -> None:
        """Raise ShapeError unless the weights fit `topology` (a NetworkTopology)."""
        bias = int(topology.bias_nodes)
        expected = ((topology.n_inputs + bias, topology.n_hidden), (topology.n_hidden + bias, topology.n_outputs))
        if (self.w1.shape, self.w2.shape) != expected:
            raise ShapeError(f"weights are {self.w1.shape} and {self.w2.shape}, topology needs {expected}")


@dataclass(frozen=True, eq=False)
class ReferenceActivations:
    pre_activation: np.ndarray  # z1
    hidden: np.ndarray  # a
    coupled: np.ndarray  # u
    logits: np.ndarray  # o


@dataclass
class TrainingResult:
    weights: TrainedWeights
    history: List[Dict] = field(default_factory=list)


def coupling_gain(phys: DevicePhysics, hidden_params: NeuronParams) -> float:
    """kappa of the reference model for the given device and activation range."""
    return phys.beta0 * (hidden_params.v_out_max - hidden_params.v_out_min)


def _append_ones(x: np.ndarray) -> np.ndarray:
    return np.hstack([x, np.ones((x.shape[0], 1))])


def reference_forward(weights: TrainedWeights, patterns: np.ndarray, kappa: float) -> ReferenceActivations:
    x = np.atleast_2d(np.asarray(patterns, dtype=float))
    if x.shape[1] != weights.n_inputs:
        raise ShapeError(f"patterns have {x.shape[1]} pixels, weights expect {weights.n_inputs}")
    if weights.has_bias:
        x = _append_ones(x)
    z1 = x @ weights.w1
    hidden = np.maximum(0.0, np.tanh(z1))
    coupled = np.exp(kappa * (hidden - 1.0))
    gate_inputs = _append_ones(coupled) if weights.has_bias else coupled
    return ReferenceActivations(pre_activation=z1, hidden=hidden, coupled=coupled, logits=gate_inputs @ weights.w2)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean cross-entropy and the softmax probabilities."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    log_probs = shifted - np.log(exp.sum(axis=1, keepdims=True))
    loss = -float(np.mean(log_probs[np.arange(labels.size), labels]))
    return loss, probs


def loss_and_gradients(
    weights: TrainedWeights, patterns: np.ndarray, labels: np.ndarray, kappa: float
) -> Tuple[float, TrainedWeights]:
    """Cross-entropy loss and its exact gradients with respect to w1 and w2."""
    x = np.atleast_2d(np.asarray(patterns, dtype=float))
    labels = np.asarray(labels, dtype=np.int64)
    acts = reference_forward(weights, x, kappa)
    loss, probs = softmax_cross_entropy(acts.logits, labels)

    d_logits = probs
    d_logits[np.arange(labels.size), labels] -= 1.0
    d_logits /= labels.size

    gate_inputs = _append_ones(acts.coupled) if weights.has_bias else acts.coupled
    grad_w2 = gate_inputs.T @ d_logits
    d_coupled = d_logits @ weights.w2[: weights.w1.shape[1]].T
    d_hidden = d_coupled * kappa * acts.coupled
    tanh_z = np.tanh(acts.pre_activation)
    d_pre = d_hidden * (1.0 - tanh_z ** 2) * (acts.pre_activation > 0)
    inputs = _append_ones(x) if weights.has_bias else x
    grad_w1 = inputs.T @ d_pre
    return loss, TrainedWeights(w1=grad_w1, w2=grad_w2)


def predict_reference(weights: TrainedWeights, patterns: np.ndarray, kappa: float) -> np.ndarray:
    return np.argmax(reference_forward(weights, patterns, kappa).logits, axis=1)


def reference_accuracy(weights: TrainedWeights, patterns: np.ndarray, labels: np.ndarray, kappa: float) -> float:
    return float(np.mean(predict_reference(weights, patterns, kappa) == np.asarray(labels)))


class ReferenceTrainer:
    """Minibatch SGD with momentum on softmax cross-entropy."""

    def __init__(self, config: TrainingConfig, kappa: float, seed: int):
        self.config = config
        self.kappa = kappa
        self.seed = seed

    def init_weights(self, n_inputs: int, n_hidden: int, n_outputs: int, bias: bool = True) -> TrainedWeights:
        rng = np.random.default_rng(self.seed)
        extra = int(bias)
        w1 = rng.normal(0.0, self.config.init_scale / math.sqrt(n_inputs + extra), (n_inputs + extra, n_hidden))
        w2 = rng.normal(0.0, 1.0 / math.sqrt(n_hidden + extra), (n_hidden + extra, n_outputs))
        if bias:
            w1[-1, :] = self.config.hidden_bias_init
            w2[-1, :] = 0.0
        return TrainedWeights(w1=w1, w2=w2)

    def train(
        self,
        patterns: np.ndarray,
        labels: np.ndarray,
        n_hidden: int = 64,
        n_outputs: int = 10,
        bias: bool = True,
        eval_set: Optional[Tuple[np.ndarray, np.ndarray]] = None,
    ) -> TrainingResult:
        x = np.asarray(patterns, dtype=float)
        y = np.asarray(labels, dtype=np.int64)
        if x.ndim != 2 or x.shape[0] == 0:
            raise DataError("training set is empty")
        if y.shape != (x.shape[0],):
            raise DataError(f"{y.size} labels for {x.shape[0]} patterns")
        if y.min() < 0 or y.max() >= n_outputs:
            raise DataError(f"labels must lie in [0, {n_outputs - 1}]")

        cfg = self.config
        weights = self.init_weights(x.shape[1], n_hidden, n_outputs, bias)
        w1, w2 = weights.w1.copy(), weights.w2.copy()
        v1, v2 = np.zeros_like(w1), np.zeros_like(w2)
        rng = np.random.default_rng(np.random.SeedSequence(self.seed).spawn(1)[0])
        history = []
        rate = cfg.learning_rate

        for epoch in range(1, cfg.epochs + 1):
            order = rng.permutation(x.shape[0])
            losses = []
            for start in range(0, order.size, cfg.batch_size):
                batch = order[start:start + cfg.batch_size]
                loss, grads = loss_and_gradients(TrainedWeights(w1=w1, w2=w2), x[batch], y[batch], self.kappa)
                if not math.isfinite(loss):
                    raise TrainingError(
                        f"training loss became non-finite at epoch {epoch}; "
                        f"try a lower learning_rate (currently {rate:.4g})"
                    )
                v1 = cfg.momentum * v1 - rate * (grads.w1 + cfg.weight_decay * w1)
                v2 = cfg.momentum * v2 - rate * (grads.w2 + cfg.weight_decay * w2)
                w1 += v1
                w2 += v2
                losses.append(loss)
            if not (np.all(np.isfinite(w1)) and np.all(np.isfinite(w2))):
                raise TrainingError(
                    f"weights diverged at epoch {epoch}; try a lower learning_rate (currently {rate:.4g})"
                )

            current = TrainedWeights(w1=w1.copy(), w2=w2.copy())
            entry = {
                "epoch": epoch,
                "loss": float(np.mean(losses)),
                "train_accuracy": reference_accuracy(current, x, y, self.kappa),
            }
            if eval_set is not None:
                entry["eval_accuracy"] = reference_accuracy(current, eval_set[0], eval_set[1], self.kappa)
            history.append(entry)
            logger.info(
                f"Epoch {epoch}/{cfg.epochs}: loss {entry['loss']:.4f}, "
                f"train accuracy {entry['train_accuracy']:.4%}"
            )
            rate *= cfg.lr_decay

        return TrainingResult(weights=TrainedWeights(w1=w1, w2=w2), history=history)


def train_reference(
    patterns: np.ndarray,
    labels: np.ndarray,
    config: TrainingConfig,
    seed: int,
    kappa: float,
    n_hidden: int = 64,
    n_outputs: int = 10,
    bias: bool = True,
) -> TrainedWeights:
    return ReferenceTrainer(config, kappa, seed).train(patterns, labels, n_hidden, n_outputs, bias).weights
