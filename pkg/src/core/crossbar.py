"""
Crossbar arrays of floating-gate cells computing analog vector-by-matrix products.

Cells are stored as a (2 * n_outputs, n_inputs) grid of threshold voltages; even rows
are the "+" half of each differential synapse, odd rows the "-" half. Each row's cells
share a source line, so a row current is the sum of its cell currents.

Two input modes are modeled:
  - gate-driven: binary inputs switch each column's gate between 0 V and v_gate_on
  - gate-coupled: analog input voltages in [v_in_min, v_in_max] drive the gates and the
    cells stay in subthreshold, so the product is exponential in the input
"""
import logging
from dataclasses import dataclass, replace
from enum import Enum
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from src.core.device import (
    DevicePhysics,
    beta_of_vt,
    check_window,
    currents_for_grid,
)
from src.core.exceptions import InputRangeError, ShapeError

logger = logging.getLogger(__name__)

# Tolerance on the gate-coupled input range (volts)
INPUT_SLACK = 1e-12


class ArrayMode(str, Enum):
    GATE_DRIVEN = "gate-driven"
    GATE_COUPLED = "gate-coupled"


@dataclass(frozen=True, eq=False)
class CrossbarArray:
    n_inputs: int
    n_outputs: int
    v_t: np.ndarray
    mode: ArrayMode
    v_drain: float = 2.7  # V
    v_source: float = 1.65  # V
    v_gate_on: float = 4.2  # V, gate level of a 1-bit (gate-driven)
    v_in_min: float = 1.1  # V, gate-coupled input range
    v_in_max: float = 2.7
    series_resistance: float = 0.0  # ohm per source line

    def __post_init__(self):
        if self.n_inputs < 1 or self.n_outputs < 1:
            raise ShapeError(f"array needs at least one input and output, got {self.shape}")
        grid = np.asarray(self.v_t, dtype=float)
        if grid.shape != self.shape:
            raise ShapeError(f"v_t grid has shape {grid.shape}, expected {self.shape}")
        object.__setattr__(self, "v_t", grid)
        object.__setattr__(self, "mode", ArrayMode(self.mode))
        if self.v_drain < self.v_source:
            raise ValueError(f"v_drain={self.v_drain} V below v_source={self.v_source} V")
        if self.v_in_min >= self.v_in_max:
            raise ValueError(f"empty input range [{self.v_in_min}, {self.v_in_max}]")
        if self.series_resistance < 0:
            raise ValueError("series_resistance must be >= 0")

    @property
    def shape(self) -> Tuple[int, int]:
        return (2 * self.n_outputs, self.n_inputs)

    @property
    def v_ds(self) -> float:
        return self.v_drain - self.v_source

    @property
    def reference_gate(self) -> float:
        """Gate voltage at which tuning targets are defined."""
        if self.mode is ArrayMode.GATE_DRIVEN:
            return self.v_gate_on
        return self.v_in_max

    def validate(self, phys: DevicePhysics) -> None:
        check_window(self.v_t, phys)

    def with_states(self, v_t: np.ndarray) -> "CrossbarArray":
        return replace(self, v_t=np.array(v_t, dtype=float))

    def to_header(self) -> Dict:
        return {
            "n_inputs": self.n_inputs,
            "n_outputs": self.n_outputs,
            "mode": self.mode.value,
            "v_drain": self.v_drain,
            "v_source": self.v_source,
            "v_gate_on": self.v_gate_on,
            "v_in_min": self.v_in_min,
            "v_in_max": self.v_in_max,
            "series_resistance": self.series_resistance,
        }

    @classmethod
    def from_header(cls, header: Dict, v_t: np.ndarray) -> "CrossbarArray":
        fields = dict(header)
        fields["mode"] = ArrayMode(fields["mode"])
        return cls(v_t=np.asarray(v_t, dtype=float).reshape(2 * fields["n_outputs"], fields["n_inputs"]), **fields)

    @classmethod
    def erased(cls, n_inputs: int, n_outputs: int, mode: ArrayMode, phys: DevicePhysics, **biases) -> "CrossbarArray":
        """Array with every cell at the erased (lowest-current) end of the window."""
        grid = np.full((2 * n_outputs, n_inputs), phys.v_t_max)
        return cls(n_inputs=n_inputs, n_outputs=n_outputs, v_t=grid, mode=mode, **biases)


@dataclass(frozen=True, eq=False)
class DifferentialCurrents:
    i_plus: np.ndarray
    i_minus: np.ndarray

    @property
    def difference(self) -> np.ndarray:
        return self.i_plus - self.i_minus


def _require_mode(array: CrossbarArray, mode: ArrayMode) -> None:
    if array.mode is not mode:
        raise ValueError(f"operation needs a {mode.value} array, got {array.mode.value}")


def _binary_inputs(inputs, n_inputs: int) -> np.ndarray:
    x = np.asarray(inputs)
    if x.shape[-1:] != (n_inputs,):
        raise ShapeError(f"expected {n_inputs} inputs per pattern, got shape {x.shape}")
    if not np.all((x == 0) | (x == 1)):
        raise InputRangeError("gate-driven inputs must be binary (0 or 1)")
    return x.astype(float)


def _coupled_inputs(array: CrossbarArray, input_voltages) -> np.ndarray:
    v = np.asarray(input_voltages, dtype=float)
    if v.shape[-1:] != (array.n_inputs,):
        raise ShapeError(f"expected {array.n_inputs} input voltages, got shape {v.shape}")
    low, high = float(np.min(v)), float(np.max(v))
    if low < array.v_in_min - INPUT_SLACK or high > array.v_in_max + INPUT_SLACK:
        raise InputRangeError(
            f"input voltages span [{low:.4f}, {high:.4f}] V, legal range is "
            f"[{array.v_in_min}, {array.v_in_max}] V"
        )
    return v


def _degenerate(line_currents: np.ndarray, array: CrossbarArray, phys: DevicePhysics) -> np.ndarray:
    # First-order source-line IR drop: the shared source rises by R*I, lowering every
    # cell's overdrive on that line.
    if array.series_resistance == 0:
        return line_currents
    return line_currents * np.exp(-phys.beta0 * array.series_resistance * line_currents)


def _split(line_currents: np.ndarray) -> DifferentialCurrents:
    return DifferentialCurrents(
        i_plus=line_currents[..., 0::2], i_minus=line_currents[..., 1::2]
    )


def gate_driven_cell_currents(array: CrossbarArray, inputs, phys: DevicePhysics) -> np.ndarray:
    """Per-cell currents (2*n_outputs, n_inputs) for one binary pattern."""
    x = _binary_inputs(inputs, array.n_inputs)
    v_gs = np.where(x == 1, array.v_gate_on, 0.0)
    return currents_for_grid(array.v_t, v_gs[np.newaxis, :], phys)


def gate_coupled_cell_currents(array: CrossbarArray, input_voltages, phys: DevicePhysics) -> np.ndarray:
    """Per-cell currents (2*n_outputs, n_inputs) for one vector of gate voltages."""
    v = _coupled_inputs(array, input_voltages)
    return currents_for_grid(array.v_t, v[np.newaxis, :], phys)


def vmm_gate_driven(array: CrossbarArray, inputs, phys: DevicePhysics) -> DifferentialCurrents:
    """Source-line currents for one binary input pattern."""
    _require_mode(array, ArrayMode.GATE_DRIVEN)
    cells = gate_driven_cell_currents(array, inputs, phys)
    return _split(_degenerate(cells.sum(axis=1), array, phys))


def vmm_gate_coupled(array: CrossbarArray, input_voltages, phys: DevicePhysics) -> DifferentialCurrents:
    """Source-line currents for one vector of analog gate voltages."""
    _require_mode(array, ArrayMode.GATE_COUPLED)
    cells = gate_coupled_cell_currents(array, input_voltages, phys)
    return _split(_degenerate(cells.sum(axis=1), array, phys))


def vmm_gate_driven_batch(
    array: CrossbarArray,
    patterns: np.ndarray,
    phys: DevicePhysics,
    noise_sigma: float = 0.0,
    rng: Optional[np.random.Generator] = None,
) -> DifferentialCurrents:
    """Batched gate-driven product; patterns has shape (batch, n_inputs).

    Without noise each line current is a pair of matrix products against the on/off
    current grids. With noise every cell current gets its own relative Gaussian draw.
    """
    _require_mode(array, ArrayMode.GATE_DRIVEN)
    x = _binary_inputs(np.atleast_2d(patterns), array.n_inputs)
    on = currents_for_grid(array.v_t, array.v_gate_on, phys)
    off = currents_for_grid(array.v_t, 0.0, phys)
    if noise_sigma > 0:
        cells = np.where(x[:, np.newaxis, :] == 1, on[np.newaxis], off[np.newaxis])
        cells = cells * (1.0 + noise_sigma * rng.standard_normal(cells.shape))
        lines = cells.sum(axis=2)
    else:
        lines = x @ on.T + (1.0 - x) @ off.T
    return _split(_degenerate(lines, array, phys))


def vmm_gate_coupled_batch(
    array: CrossbarArray,
    input_voltages: np.ndarray,
    phys: DevicePhysics,
    noise_sigma: float = 0.0,
    rng: Optional[np.random.Generator] = None,
) -> DifferentialCurrents:
    """Batched gate-coupled product; input_voltages has shape (batch, n_inputs)."""
    _require_mode(array, ArrayMode.GATE_COUPLED)
    v = _coupled_inputs(array, np.atleast_2d(input_voltages))
    cells = currents_for_grid(array.v_t[np.newaxis], v[:, np.newaxis, :], phys)
    if noise_sigma > 0:
        cells = cells * (1.0 + noise_sigma * rng.standard_normal(cells.shape))
    return _split(_degenerate(cells.sum(axis=2), array, phys))


def array_current(array: CrossbarArray, inputs: np.ndarray, phys: DevicePhysics) -> np.ndarray:
    """Total current of all cells, per pattern, at the operating point set by `inputs`."""
    if array.mode is ArrayMode.GATE_DRIVEN:
        result = vmm_gate_driven_batch(array, inputs, phys)
    else:
        result = vmm_gate_coupled_batch(array, inputs, phys)
    return result.i_plus.sum(axis=-1) + result.i_minus.sum(axis=-1)


def cell_count(layers: Sequence[int], bias: bool = True) -> int:
    """Differential cells needed for a fully connected topology, e.g. (784, 64, 10)."""
    layers = [int(n) for n in layers]
    if len(layers) < 2 or any(n < 1 for n in layers):
        raise ShapeError(f"topology needs at least two positive layer sizes, got {layers}")
    extra = 1 if bias else 0
    return 2 * sum((n_in + extra) * n_out for n_in, n_out in zip(layers[:-1], layers[1:]))


def gate_coupling_error(
    array: CrossbarArray, v_range: Tuple[float, float], phys: DevicePhysics, n_levels: int = 17
) -> float:
    """RMS relative deviation from a uniform-slope array over a gate-voltage range.

    Evaluated on the unclamped exponential so that clipping at i_floor or i_sat does
    not hide the slope mismatch.
    """
    levels = np.linspace(v_range[0], v_range[1], n_levels)
    v_t = array.v_t[np.newaxis]
    overdrive = levels[:, np.newaxis, np.newaxis] - v_t
    log_error = (beta_of_vt(v_t, phys) - phys.beta0) * overdrive
    return float(np.sqrt(np.mean(np.expm1(log_error) ** 2)))
