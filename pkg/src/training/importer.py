"""
Weight import: mapping trained weights to per-cell target currents and simulating the
one-by-one tuning procedure with finite accuracy and half-select disturb.
"""
import logging
import math
from dataclasses import dataclass, asdict
from typing import Dict, List, Optional, Tuple

import numpy as np
from numba import njit

from src.core.crossbar import CrossbarArray
from src.core.device import DevicePhysics, currents_for_grid, states_for_currents
from src.core.exceptions import ConfigError, DegenerateScaleError, ProgrammingError, ShapeError
from src.core.network import NetworkInstance, forward_batch
from src.core.neurons import NeuronParams, with_gain_trim
from src.training.trainer import TrainedWeights

logger = logging.getLogger(__name__)

TUNING_ORDERS = ("row-major", "column-major", "random")

# Relative margin kept inside the clamps of the device model
EDGE_MARGIN = 1e-9


@dataclass(frozen=True)
class DisturbModel:
    p_disturb: float = 5e-4
    sigma_disturb: float = 0.2

    def __post_init__(self):
        if not 0 <= self.p_disturb <= 1:
            raise ConfigError(f"p_disturb must lie in [0, 1], got {self.p_disturb}")
        if self.sigma_disturb < 0:
            raise ConfigError(f"sigma_disturb must be >= 0, got {self.sigma_disturb}")

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class ImportPlan:
    """Per-array target currents at each array's reference gate bias.

    Cells outside tune_mask keep their erased baseline. `order` lists the tuning events
    of each array as (row, col) pairs.
    """

    targets: Tuple[np.ndarray, np.ndarray]
    tune_mask: Tuple[np.ndarray, np.ndarray]
    baselines: Tuple[float, float]
    order: Tuple[np.ndarray, np.ndarray]
    order_name: str
    accuracy: float
    disturb: DisturbModel
    hidden_params: NeuronParams  # hidden neurons with the activation gain trimmed to the weight scale
    layer_scales: Tuple[float, float]
    retune_passes: int = 0

    def __post_init__(self):
        if self.accuracy < 0:
            raise ConfigError(f"accuracy must be >= 0, got {self.accuracy}")
        if self.retune_passes < 0:
            raise ConfigError("retune_passes must be >= 0")

    @property
    def n_tuned(self) -> int:
        return int(sum(mask.sum() for mask in self.tune_mask))

    @property
    def n_cells(self) -> int:
        return int(sum(mask.size for mask in self.tune_mask))

    @property
    def tuned_fraction(self) -> float:
        return self.n_tuned / self.n_cells

    def summary(self) -> Dict:
        return {
            "n_cells": self.n_cells,
            "n_tuned": self.n_tuned,
            "tuned_fraction": self.tuned_fraction,
            "order": self.order_name,
            "accuracy": self.accuracy,
            "disturb": self.disturb.to_dict(),
            "retune_passes": self.retune_passes,
            "layer_scales": list(self.layer_scales),
            "hidden_act_gain": self.hidden_params.act_gain,
        }


@dataclass(frozen=True, eq=False)
class ImportReport:
    array_index: np.ndarray  # 1 or 2 per tuned cell
    rows: np.ndarray
    cols: np.ndarray
    target: np.ndarray  # A
    achieved: np.ndarray  # A, recomputed from the final states
    disturbed: np.ndarray
    accuracy: float

    def __len__(self) -> int:
        return int(self.target.size)

    def relative_error(self) -> np.ndarray:
        return self.achieved / self.target - 1.0

    def stats(self) -> Dict:
        if len(self) == 0:
            return {"n_tuned": 0, "n_disturbed": 0, "fraction_outside_band": 0.0, "rms_relative_error": 0.0}
        rel = self.relative_error()
        band = self.accuracy * (1.0 + EDGE_MARGIN) + EDGE_MARGIN
        return {
            "n_tuned": len(self),
            "n_disturbed": int(self.disturbed.sum()),
            "fraction_outside_band": float(np.mean(np.abs(rel) > band)),
            "rms_relative_error": float(np.sqrt(np.mean(rel ** 2))),
            "max_abs_relative_error": float(np.max(np.abs(rel))),
        }

    def to_rows(self) -> List[Dict]:
        return [
            {
                "cell_id": i,
                "array": int(self.array_index[i]),
                "row": int(self.rows[i]),
                "col": int(self.cols[i]),
                "target_A": float(self.target[i]),
                "achieved_A": float(self.achieved[i]),
                "disturbed": int(self.disturbed[i]),
            }
            for i in range(len(self))
        ]


@dataclass(frozen=True, eq=False)
class ProbePairs:
    ideal: np.ndarray  # V, hidden activation outputs of the ideal network
    imported: np.ndarray  # V, same neurons and patterns on the imported network
    pattern_index: np.ndarray
    neuron_index: np.ndarray

    def correlation(self) -> float:
        if self.ideal.size < 2 or np.std(self.ideal) == 0 or np.std(self.imported) == 0:
            return 1.0 if np.array_equal(self.ideal, self.imported) else 0.0
        return float(np.corrcoef(self.ideal, self.imported)[0, 1])

    def to_rows(self) -> List[Dict]:
        return [
            {
                "pattern": int(self.pattern_index[i]),
                "neuron": int(self.neuron_index[i]),
                "ideal_V": float(self.ideal[i]),
                "imported_V": float(self.imported[i]),
            }
            for i in range(self.ideal.size)
        ]


def reachable_range(array: CrossbarArray, phys: DevicePhysics) -> Tuple[float, float]:
    """Currents a cell can be tuned to at the array's reference gate bias."""
    gate = array.reference_gate
    low = float(currents_for_grid(phys.v_t_max, gate, phys))
    high = float(currents_for_grid(phys.v_t_min, gate, phys))
    low = max(low, phys.i_floor * (1.0 + EDGE_MARGIN))
    high = min(high, phys.i_sat * (1.0 - EDGE_MARGIN))
    return low, high


def _baseline_current(array: CrossbarArray, phys: DevicePhysics) -> float:
    return float(currents_for_grid(phys.v_t_max, array.reference_gate, phys))


def _layer_targets(weights: np.ndarray, baseline: float, i_hi: float) -> Tuple[np.ndarray, np.ndarray]:
    """Targets and normalized magnitudes on the (2*n_out, n_in) grid of one array."""
    scale = float(np.max(np.abs(weights)))
    if scale == 0:
        raise DegenerateScaleError("weight matrix is all zero; cannot normalize")
    w = weights.T  # (n_out, n_in)
    norm = np.abs(w) / scale
    scaled = norm * i_hi
    targets = np.full((2 * w.shape[0], w.shape[1]), baseline)
    magnitude = np.zeros_like(targets)
    plus = w > 0
    minus = w < 0
    targets[0::2][plus] = baseline + scaled[plus]
    targets[1::2][minus] = baseline + scaled[minus]
    magnitude[0::2][plus] = norm[plus]
    magnitude[1::2][minus] = norm[minus]
    return targets, magnitude


def _tuning_order(mask: np.ndarray, order: str, rng: np.random.Generator) -> np.ndarray:
    rows, cols = np.nonzero(mask)  # row-major
    if order == "column-major":
        idx = np.lexsort((rows, cols))
        rows, cols = rows[idx], cols[idx]
    elif order == "random":
        idx = rng.permutation(rows.size)
        rows, cols = rows[idx], cols[idx]
    return np.stack([rows, cols], axis=1).astype(np.int64)


def map_weights_to_targets(
    weights: TrainedWeights,
    net: NetworkInstance,
    tuned_fraction: float,
    i_hi: Tuple[float, float] = (2e-7, 1e-7),
    accuracy: float = 0.05,
    disturb: Optional[DisturbModel] = None,
    order: str = "row-major",
    order_seed: int = 0,
    retune_passes: int = 0,
) -> ImportPlan:
    """Scale each layer so max|w| maps to i_hi above baseline and pick the cells to tune.

    Exactly ceil(tuned_fraction * n_cells) cells are tuned, ranked by normalized weight
    magnitude across both arrays (stable order on ties). Partner cells rank lowest and
    are tuned back to baseline only once every weight-carrying cell is selected.
    """
    if not 0 < tuned_fraction <= 1:
        raise ConfigError(f"tuned_fraction must lie in (0, 1], got {tuned_fraction}")
    if order not in TUNING_ORDERS:
        raise ConfigError(f"unknown tuning order {order!r}; choose from {TUNING_ORDERS}")
    weights.check_topology(net.topology)
    phys = net.phys
    arrays = (net.array1, net.array2)

    baselines = tuple(_baseline_current(a, phys) for a in arrays)
    layer1, mag1 = _layer_targets(weights.w1, baselines[0], i_hi[0])
    layer2, mag2 = _layer_targets(weights.w2, baselines[1], i_hi[1])

    for index, (array, grid) in enumerate(zip(arrays, (layer1, layer2)), start=1):
        _, high = reachable_range(array, phys)
        over = np.argwhere(grid > high)
        if over.size:
            row, col = over[0]
            raise ProgrammingError(
                f"array{index} cell (row {row}, col {col}) target {grid[row, col]:.4e} A exceeds "
                f"the reachable {high:.4e} A at v_gs={array.reference_gate} V"
            )

    magnitude = np.concatenate([mag1.ravel(), mag2.ravel()])
    n_cells = magnitude.size
    k = math.ceil(round(tuned_fraction * n_cells, 9))
    ranked = np.argsort(-magnitude, kind="stable")
    selected = np.zeros(n_cells, dtype=bool)
    selected[ranked[:k]] = True
    mask1 = selected[: mag1.size].reshape(mag1.shape)
    mask2 = selected[mag1.size:].reshape(mag2.shape)

    layer1 = np.where(mask1, layer1, baselines[0])
    layer2 = np.where(mask2, layer2, baselines[1])

    rng = np.random.default_rng(order_seed)
    orders = (_tuning_order(mask1, order, rng), _tuning_order(mask2, order, rng))

    scales = weights.layer_scales()
    hidden = with_gain_trim(net.hidden_params, i_hi[0] / scales[0])
    plan = ImportPlan(
        targets=(layer1, layer2),
        tune_mask=(mask1, mask2),
        baselines=baselines,
        order=orders,
        order_name=order,
        accuracy=accuracy,
        disturb=disturb if disturb is not None else DisturbModel(),
        hidden_params=hidden,
        layer_scales=scales,
        retune_passes=retune_passes,
    )
    logger.info(f"Import plan: {plan.n_tuned} of {plan.n_cells} cells tuned ({order})")
    return plan


def ideal_plan(weights: TrainedWeights, net: NetworkInstance, tuned_fraction: float = 1.0, **kwargs) -> ImportPlan:
    """Plan with exact tuning and no disturb."""
    return map_weights_to_targets(
        weights, net, tuned_fraction, accuracy=0.0, disturb=DisturbModel(p_disturb=0.0, sigma_disturb=0.0), **kwargs
    )


@njit(cache=True)
def _tune_array_kernel(rows, cols, targets, erase, accuracy, p_disturb, sigma_disturb,
                       low, high, retune_passes, seed, currents, tuned, disturbed):
    # Erased cells sit at the deep end of the window and are not disturbed.
    np.random.seed(seed)
    n_rows, n_cols = currents.shape
    for rep in range(retune_passes + 1):
        for e in range(rows.size):
            r = rows[e]
            c = cols[e]
            if rep > 0:
                if erase[e] or not disturbed[r, c]:
                    continue
                if abs(currents[r, c] / targets[e] - 1.0) <= accuracy:
                    continue
            disturbed[r, c] = False
            if erase[e]:
                currents[r, c] = targets[e]
                tuned[r, c] = False
                continue
            value = targets[e]
            if accuracy > 0.0:
                value = value * (1.0 + accuracy * (2.0 * np.random.random() - 1.0))
            currents[r, c] = min(max(value, low), high)
            if p_disturb > 0.0:
                for j in range(n_cols):
                    if j != c and tuned[r, j] and np.random.random() < p_disturb:
                        bumped = currents[r, j] * np.exp(np.random.normal(0.0, sigma_disturb))
                        currents[r, j] = min(max(bumped, low), high)
                        disturbed[r, j] = True
                for i in range(n_rows):
                    if i != r and tuned[i, c] and np.random.random() < p_disturb:
                        bumped = currents[i, c] * np.exp(np.random.normal(0.0, sigma_disturb))
                        currents[i, c] = min(max(bumped, low), high)
                        disturbed[i, c] = True
            tuned[r, c] = True


def _tune_array(
    array: CrossbarArray, targets: np.ndarray, baseline: float, order: np.ndarray, plan: ImportPlan,
    phys: DevicePhysics, seed: int, index: int,
) -> Tuple[CrossbarArray, np.ndarray]:
    low, high = reachable_range(array, phys)
    rows = np.ascontiguousarray(order[:, 0])
    cols = np.ascontiguousarray(order[:, 1])
    event_targets = targets[rows, cols].astype(np.float64)
    erase = event_targets <= baseline

    currents = np.full(array.shape, baseline)
    tuned = np.zeros(array.shape, dtype=np.bool_)
    disturbed = np.zeros(array.shape, dtype=np.bool_)
    _tune_array_kernel(
        rows, cols, event_targets, erase, plan.accuracy, plan.disturb.p_disturb,
        plan.disturb.sigma_disturb, low, high, plan.retune_passes, seed, currents, tuned, disturbed,
    )

    v_t = np.full(array.shape, phys.v_t_max)
    programmed = tuned
    solved = states_for_currents(currents[programmed], array.reference_gate, phys)
    if np.any(np.isnan(solved)):
        bad = np.argwhere(programmed)[np.flatnonzero(np.isnan(solved))[0]]
        raise ProgrammingError(
            f"array{index} cell (row {bad[0]}, col {bad[1]}) has no state drawing "
            f"{currents[bad[0], bad[1]]:.4e} A at v_gs={array.reference_gate} V"
        )
    v_t[programmed] = np.clip(solved, phys.v_t_min, phys.v_t_max)
    logger.debug(f"array{index}: {rows.size} tuning events, {int(disturbed.sum())} disturbed cells")
    return array.with_states(v_t), disturbed


def tune_sequential(net: NetworkInstance, plan: ImportPlan, seed: int) -> Tuple[NetworkInstance, ImportReport]:
    """Tune the erased chip one cell at a time following plan.order.

    Arrays are tuned one after the other; disturb only reaches cells on the rows and
    columns of the array being tuned. Disturbed cells are left as they are unless
    plan.retune_passes > 0.
    """
    phys = net.phys
    arrays = (net.array1, net.array2)
    for array, grid, mask in zip(arrays, plan.targets, plan.tune_mask):
        if grid.shape != array.shape or mask.shape != array.shape:
            raise ShapeError(f"plan grid {grid.shape} does not match array {array.shape}")

    seeds = np.random.SeedSequence(seed).generate_state(2)
    tuned_arrays = []
    entries = []
    for index, (array, grid, mask, baseline, order, array_seed) in enumerate(
        zip(arrays, plan.targets, plan.tune_mask, plan.baselines, plan.order, seeds), start=1
    ):
        result, disturbed = _tune_array(array, grid, baseline, order, plan, phys, int(array_seed), index)
        achieved = currents_for_grid(result.v_t, result.reference_gate, phys)
        rows, cols = order[:, 0], order[:, 1]
        entries.append((np.full(rows.size, index), rows, cols, grid[rows, cols], achieved[rows, cols], disturbed[rows, cols]))
        tuned_arrays.append(result)

    report = ImportReport(
        array_index=np.concatenate([e[0] for e in entries]),
        rows=np.concatenate([e[1] for e in entries]),
        cols=np.concatenate([e[2] for e in entries]),
        target=np.concatenate([e[3] for e in entries]),
        achieved=np.concatenate([e[4] for e in entries]),
        disturbed=np.concatenate([e[5] for e in entries]).astype(bool),
        accuracy=plan.accuracy,
    )
    stats = report.stats()
    logger.info(
        f"Tuned {stats['n_tuned']} cells: {stats['n_disturbed']} disturbed, "
        f"{stats['fraction_outside_band']:.2%} outside the accuracy band"
    )
    imported = net.with_arrays(array1=tuned_arrays[0], array2=tuned_arrays[1], hidden_params=plan.hidden_params)
    return imported, report


def hidden_output_probe(net_ideal: NetworkInstance, net_imported: NetworkInstance, probe_patterns: np.ndarray) -> ProbePairs:
    """Hidden activation outputs of both networks where the ideal output is positive."""
    if net_ideal.topology != net_imported.topology:
        raise ShapeError("probe needs networks of the same topology")
    ideal = forward_batch(net_ideal, probe_patterns).hidden_voltages
    imported = forward_batch(net_imported, probe_patterns).hidden_voltages
    positive = ideal > net_ideal.hidden_params.v_out_min
    patterns, neurons = np.nonzero(positive)
    return ProbePairs(
        ideal=ideal[positive],
        imported=imported[positive],
        pattern_index=patterns,
        neuron_index=neurons,
    )
