"""
The simulated chip: a 784(+1) -> 64(+1) -> 10 perceptron built from two crossbar arrays.

Layer 1 is gate-driven by the binary pattern, its differential line currents feed the
hidden summing amplifiers and the rectified-tanh circuits, whose output voltages drive
the gate-coupled second array. Output neurons are bare summing amplifiers; the class
is the index of the largest output voltage (lowest index on ties).
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, asdict, replace
from typing import Dict, List, Optional

import numpy as np

from src.core.crossbar import (
    ArrayMode,
    CrossbarArray,
    cell_count,
    vmm_gate_coupled_batch,
    vmm_gate_driven_batch,
)
from src.core.device import DevicePhysics, drift_states, noise_relative_sigma
from src.core.exceptions import DataError, ShapeError
from src.core.neurons import NeuronParams, rectified_tanh, summing_amp

logger = logging.getLogger(__name__)

# Patterns per evaluation chunk; fixed so seeded noise does not depend on worker count
CHUNK_SIZE = 256


@dataclass(frozen=True)
class NetworkTopology:
    n_inputs: int = 784
    n_hidden: int = 64
    n_outputs: int = 10
    bias_nodes: bool = True

    def __post_init__(self):
        if min(self.n_inputs, self.n_hidden, self.n_outputs) < 1:
            raise ShapeError(f"layer sizes must be >= 1, got {self.layers}")

    @property
    def layers(self):
        return (self.n_inputs, self.n_hidden, self.n_outputs)

    @property
    def layer1_width(self) -> int:
        return self.n_inputs + int(self.bias_nodes)

    @property
    def layer2_width(self) -> int:
        return self.n_hidden + int(self.bias_nodes)

    def cell_count(self) -> int:
        return cell_count(self.layers, bias=self.bias_nodes)

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass(frozen=True)
class NoiseMode:
    """Seeded read noise for a forward pass.

    Each cell current is multiplied by (1 + sigma * z) with z standard normal and sigma
    the band-integrated relative 1/f fluctuation over [sample_rate / n_samples,
    sample_rate / 2]. This is equivalent in distribution to reading one sample of a
    sample_noisy_current trace taken at the same bandwidth, up to the discrete sum the
    trace uses over the lowest frequency bins.
    """

    seed: int
    sample_rate: float = 1e6  # Hz, measurement bandwidth
    n_samples: int = 65536

    def relative_sigma(self, phys: DevicePhysics) -> float:
        return noise_relative_sigma(phys, self.sample_rate, self.n_samples)


@dataclass(frozen=True, eq=False)
class NetworkInstance:
    topology: NetworkTopology
    array1: CrossbarArray
    array2: CrossbarArray
    hidden_params: NeuronParams
    output_params: NeuronParams
    phys: DevicePhysics

    def __post_init__(self):
        topo = self.topology
        if (self.array1.n_inputs, self.array1.n_outputs) != (topo.layer1_width, topo.n_hidden):
            raise ShapeError(
                f"array1 is {self.array1.n_inputs} x {self.array1.n_outputs}, topology needs "
                f"{topo.layer1_width} x {topo.n_hidden}"
            )
        if (self.array2.n_inputs, self.array2.n_outputs) != (topo.layer2_width, topo.n_outputs):
            raise ShapeError(
                f"array2 is {self.array2.n_inputs} x {self.array2.n_outputs}, topology needs "
                f"{topo.layer2_width} x {topo.n_outputs}"
            )
        if self.array1.mode is not ArrayMode.GATE_DRIVEN:
            raise ValueError("array1 must be gate-driven")
        if self.array2.mode is not ArrayMode.GATE_COUPLED:
            raise ValueError("array2 must be gate-coupled")
        if (self.hidden_params.v_out_min < self.array2.v_in_min
                or self.hidden_params.v_out_max > self.array2.v_in_max):
            raise ValueError(
                f"hidden activation range [{self.hidden_params.v_out_min}, "
                f"{self.hidden_params.v_out_max}] V exceeds array2 input range"
            )
        self.array1.validate(self.phys)
        self.array2.validate(self.phys)

    @classmethod
    def erased(
        cls,
        topology: NetworkTopology,
        phys: DevicePhysics,
        hidden_params: NeuronParams,
        output_params: NeuronParams,
        array1_biases: Optional[Dict] = None,
        array2_biases: Optional[Dict] = None,
    ) -> "NetworkInstance":
        """Network with every cell erased, i.e. all weights balanced at zero."""
        array1 = CrossbarArray.erased(
            topology.layer1_width, topology.n_hidden, ArrayMode.GATE_DRIVEN, phys, **(array1_biases or {})
        )
        array2 = CrossbarArray.erased(
            topology.layer2_width, topology.n_outputs, ArrayMode.GATE_COUPLED, phys, **(array2_biases or {})
        )
        return cls(topology, array1, array2, hidden_params, output_params, phys)

    def with_arrays(
        self,
        array1: Optional[CrossbarArray] = None,
        array2: Optional[CrossbarArray] = None,
        hidden_params: Optional[NeuronParams] = None,
    ) -> "NetworkInstance":
        return replace(
            self,
            array1=array1 if array1 is not None else self.array1,
            array2=array2 if array2 is not None else self.array2,
            hidden_params=hidden_params if hidden_params is not None else self.hidden_params,
        )

    def to_config(self) -> Dict:
        return {
            "topology": self.topology.to_dict(),
            "device": self.phys.to_dict(),
            "hidden": self.hidden_params.to_dict(),
            "output": self.output_params.to_dict(),
            "array1": self.array1.to_header(),
            "array2": self.array2.to_header(),
        }


@dataclass(frozen=True, eq=False)
class ClassificationResult:
    output_voltages: np.ndarray
    predicted_class: int
    margin: float


@dataclass(frozen=True, eq=False)
class ForwardResult:
    hidden_sums: np.ndarray  # summing-amp outputs, (batch, n_hidden)
    hidden_voltages: np.ndarray  # activation outputs, (batch, n_hidden)
    output_voltages: np.ndarray  # (batch, n_outputs)


@dataclass(frozen=True, eq=False)
class VoltageHistograms:
    edges: np.ndarray
    own: np.ndarray  # (n_groups, n_bins)
    other: np.ndarray

    def to_rows(self, group_label: str = "neuron") -> List[Dict]:
        rows = []
        for group in range(self.own.shape[0]):
            for b in range(self.edges.size - 1):
                rows.append({
                    group_label: group,
                    "bin_low_V": float(self.edges[b]),
                    "bin_high_V": float(self.edges[b + 1]),
                    "own_class": int(self.own[group, b]),
                    "other_class": int(self.other[group, b]),
                })
        return rows


@dataclass(frozen=True, eq=False)
class EvaluationResult:
    fidelity: float
    predicted: np.ndarray
    output_voltages: np.ndarray
    histograms: VoltageHistograms  # per output neuron: own class vs the rest
    max_voltage_histograms: VoltageHistograms  # per true class: correct vs misclassified

    def summary(self) -> Dict:
        return {
            "fidelity": self.fidelity,
            "n_patterns": int(self.predicted.size),
            "n_correct": int(round(self.fidelity * self.predicted.size)),
        }


def _validate_patterns(net: NetworkInstance, patterns) -> np.ndarray:
    x = np.atleast_2d(np.asarray(patterns))
    if x.ndim != 2 or x.shape[1] != net.topology.n_inputs:
        raise ShapeError(
            f"patterns must have {net.topology.n_inputs} pixels, got shape {np.shape(patterns)}"
        )
    return x


def forward_batch(
    net: NetworkInstance,
    patterns,
    noise: Optional[NoiseMode] = None,
    rng: Optional[np.random.Generator] = None,
) -> ForwardResult:
    """Propagate a batch of binary patterns through both arrays and neuron layers."""
    x = _validate_patterns(net, patterns).astype(float)
    batch = x.shape[0]
    sigma = 0.0
    if noise is not None:
        sigma = noise.relative_sigma(net.phys)
        rng = rng if rng is not None else np.random.default_rng(noise.seed)
    if net.topology.bias_nodes:
        x = np.hstack([x, np.ones((batch, 1))])

    layer1 = vmm_gate_driven_batch(net.array1, x, net.phys, sigma, rng)
    hidden_sums = summing_amp(layer1.i_plus, layer1.i_minus, net.hidden_params)
    hidden = rectified_tanh(hidden_sums, net.hidden_params)

    gate_inputs = hidden
    if net.topology.bias_nodes:
        gate_inputs = np.hstack([hidden, np.full((batch, 1), net.array2.v_in_max)])
    layer2 = vmm_gate_coupled_batch(net.array2, gate_inputs, net.phys, sigma, rng)
    outputs = summing_amp(layer2.i_plus, layer2.i_minus, net.output_params)
    return ForwardResult(hidden_sums=hidden_sums, hidden_voltages=hidden, output_voltages=outputs)


def _result_from_voltages(voltages: np.ndarray) -> ClassificationResult:
    predicted = int(np.argmax(voltages))
    ranked = np.sort(voltages)[::-1]
    margin = float(ranked[0] - ranked[1]) if ranked.size > 1 else 0.0
    return ClassificationResult(output_voltages=voltages, predicted_class=predicted, margin=margin)


def classify(net: NetworkInstance, pattern, noise: Optional[NoiseMode] = None) -> ClassificationResult:
    """Classify one binary pattern of n_inputs pixels."""
    pattern = np.asarray(pattern)
    if pattern.shape != (net.topology.n_inputs,):
        raise ShapeError(f"pattern must have shape ({net.topology.n_inputs},), got {pattern.shape}")
    result = forward_batch(net, pattern[np.newaxis, :], noise)
    return _result_from_voltages(result.output_voltages[0])


def forward_chunked(
    net: NetworkInstance,
    patterns: np.ndarray,
    noise: Optional[NoiseMode] = None,
    workers: int = 1,
) -> ForwardResult:
    """forward_batch over fixed-size chunks, optionally on a thread pool.

    Each chunk draws noise from its own child seed, so results do not depend on the
    number of workers.
    """
    x = _validate_patterns(net, patterns)
    starts = list(range(0, x.shape[0], CHUNK_SIZE))
    seeds = np.random.SeedSequence(noise.seed).spawn(len(starts)) if noise is not None else [None] * len(starts)

    def run(index: int) -> ForwardResult:
        start = starts[index]
        rng = np.random.default_rng(seeds[index]) if noise is not None else None
        return forward_batch(net, x[start:start + CHUNK_SIZE], noise, rng)

    if workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, range(len(starts))))
    else:
        parts = [run(i) for i in range(len(starts))]
    logger.debug(f"Propagated {x.shape[0]} patterns in {len(starts)} chunks")
    return ForwardResult(
        hidden_sums=np.vstack([p.hidden_sums for p in parts]),
        hidden_voltages=np.vstack([p.hidden_voltages for p in parts]),
        output_voltages=np.vstack([p.output_voltages for p in parts]),
    )


def _histogram_edges(values: np.ndarray, n_bins: int) -> np.ndarray:
    low, high = float(values.min()), float(values.max())
    if math.isclose(low, high):
        low, high = low - 5e-4, high + 5e-4
    return np.linspace(low, high, n_bins + 1)


def _split_histograms(values: np.ndarray, own_mask: np.ndarray, n_bins: int) -> VoltageHistograms:
    """values/own_mask are (n_patterns, n_groups); NaN entries are skipped."""
    finite = values[np.isfinite(values)]
    edges = _histogram_edges(finite, n_bins)
    n_groups = values.shape[1]
    own = np.zeros((n_groups, n_bins), dtype=np.int64)
    other = np.zeros((n_groups, n_bins), dtype=np.int64)
    for g in range(n_groups):
        column = values[:, g]
        valid = np.isfinite(column)
        own[g], _ = np.histogram(column[valid & own_mask[:, g]], bins=edges)
        other[g], _ = np.histogram(column[valid & ~own_mask[:, g]], bins=edges)
    return VoltageHistograms(edges=edges, own=own, other=other)


def evaluate(
    net: NetworkInstance,
    patterns: np.ndarray,
    labels: np.ndarray,
    noise: Optional[NoiseMode] = None,
    workers: int = 1,
    n_bins: int = 50,
) -> EvaluationResult:
    """Classification fidelity plus output-voltage histograms over a labeled set."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise DataError("cannot evaluate an empty dataset")
    if labels.shape != (np.atleast_2d(patterns).shape[0],):
        raise DataError(f"{labels.size} labels for {np.atleast_2d(patterns).shape[0]} patterns")
    n_out = net.topology.n_outputs
    if labels.min() < 0 or labels.max() >= n_out:
        raise DataError(f"labels must lie in [0, {n_out - 1}], got [{labels.min()}, {labels.max()}]")

    voltages = forward_chunked(net, patterns, noise, workers).output_voltages
    predicted = np.argmax(voltages, axis=1)
    fidelity = float(np.mean(predicted == labels))
    logger.info(f"Evaluated {labels.size} patterns: fidelity {fidelity:.4%}")

    own_mask = labels[:, np.newaxis] == np.arange(n_out)[np.newaxis, :]
    histograms = _split_histograms(voltages, own_mask, n_bins)

    # Largest output per pattern, grouped by true class; "own" marks correct answers.
    max_by_class = np.full((labels.size, n_out), np.nan)
    max_by_class[np.arange(labels.size), labels] = voltages.max(axis=1)
    correct = np.broadcast_to((predicted == labels)[:, np.newaxis], max_by_class.shape)
    max_histograms = _split_histograms(max_by_class, correct, n_bins)

    return EvaluationResult(
        fidelity=fidelity,
        predicted=predicted,
        output_voltages=voltages,
        histograms=histograms,
        max_voltage_histograms=max_histograms,
    )


def age_network(net: NetworkInstance, elapsed_seconds: float, seed: int) -> NetworkInstance:
    """Apply retention drift to every cell of both arrays."""
    rng = np.random.default_rng(seed)
    array1 = net.array1.with_states(drift_states(net.array1.v_t, elapsed_seconds, net.phys, rng))
    array2 = net.array2.with_states(drift_states(net.array2.v_t, elapsed_seconds, net.phys, rng))
    return net.with_arrays(array1=array1, array2=array2)
