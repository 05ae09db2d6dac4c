"""
Static power, latency and energy of one classification, plus projections to large
time-multiplexed convolutional workloads.
"""
import configparser
import json
import logging
import math
from dataclasses import dataclass, asdict, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.core.crossbar import array_current
from src.core.exceptions import ConfigError
from src.core.network import NetworkInstance, NetworkTopology, forward_chunked
from src.core.neurons import settling_time

logger = logging.getLogger(__name__)

LATENCY_MODES = ("measured-bound", "settling-model")
NEURON_STATIC_MODES = ("rail-matched", "neuron-rail")

# Single-pattern AlexNet-class figures of other implementations: (time s, energy J)
REFERENCE_SYSTEMS = {
    "GPU 28 nm": (1.5e-2, 1.5e-1),
    "ASIC 65 nm": (2.9e-2, 0.8e-2),
    "visual cortex": (3e-2, 5e-8),
}
DIGITAL_REFERENCES = ("GPU 28 nm", "ASIC 65 nm")
MEASURED_BASE = "measured"


@dataclass(frozen=True)
class Rail:
    name: str
    voltage: float  # V
    current: float  # A, static draw

    def __post_init__(self):
        if self.voltage <= 0:
            raise ConfigError(f"rail {self.name!r} needs a positive voltage, got {self.voltage}")
        if self.current < 0:
            raise ConfigError(f"rail {self.name!r} needs a non-negative current, got {self.current}")

    @property
    def power(self) -> float:
        return self.voltage * self.current


@dataclass(frozen=True)
class SupplyRails:
    rails: Tuple[Rail, ...]

    @classmethod
    def default(cls) -> "SupplyRails":
        return cls(rails=(Rail("neurons", 2.7, 5.6e-3), Rail("arrays", 1.05, 2.9e-3)))

    @property
    def power(self) -> float:
        return float(sum(rail.power for rail in self.rails))

    def rail(self, name: str) -> Optional[Rail]:
        return next((r for r in self.rails if r.name == name), None)

    def to_dict(self) -> Dict:
        return {r.name: {"voltage_V": r.voltage, "current_A": r.current, "power_W": r.power} for r in self.rails}


@dataclass(frozen=True, eq=False)
class PowerProfile:
    """Static power of a set of patterns: simulated cell currents plus the neuron static draw.

    avg_power is the mean of the per-pattern simulated power; rail_power is the plain
    voltage-times-current sum of the supply rails, kept for comparison.
    """

    array1_currents: np.ndarray  # A per pattern
    array2_currents: np.ndarray
    array1_v_ds: float  # V
    array2_v_ds: float
    neuron_current: float  # A, pattern independent
    neuron_voltage: float  # V
    rails: SupplyRails

    @property
    def array_currents(self) -> np.ndarray:
        return self.array1_currents + self.array2_currents

    @property
    def array_power(self) -> np.ndarray:
        return self.array1_currents * self.array1_v_ds + self.array2_currents * self.array2_v_ds

    @property
    def neuron_power(self) -> float:
        return self.neuron_current * self.neuron_voltage

    @property
    def simulated_power(self) -> np.ndarray:
        return self.array_power + self.neuron_power

    @property
    def avg_power(self) -> float:
        return float(np.mean(self.simulated_power))

    @property
    def rail_power(self) -> float:
        return self.rails.power

    def current_histogram(self, n_bins: int = 50) -> List[Dict]:
        currents = self.array_currents
        low, high = float(currents.min()), float(currents.max())
        if math.isclose(low, high):
            low, high = low * (1 - 1e-6) - 1e-15, high * (1 + 1e-6) + 1e-15
        counts, edges = np.histogram(currents, bins=n_bins, range=(low, high))
        return [
            {"bin_low_A": float(edges[i]), "bin_high_A": float(edges[i + 1]), "patterns": int(counts[i])}
            for i in range(n_bins)
        ]


@dataclass(frozen=True)
class PerfReport:
    mean_array_current: float  # A
    neuron_current: float  # A
    array_power: float  # W, mean over patterns
    neuron_power: float  # W
    avg_power: float  # W, array_power + neuron_power
    rail_power: float  # W, supply rail arithmetic
    latency: float  # s
    energy: float  # J, avg_power * latency
    rail_energy: float  # J, rail_power * latency

    def __post_init__(self):
        if min(self.mean_array_current, self.neuron_current, self.array_power, self.neuron_power,
               self.avg_power, self.rail_power, self.latency) < 0:
            raise ValueError("performance figures must be non-negative")

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass(frozen=True)
class TechProfile:
    """Per-step figures of a multiplexed implementation.

    cell_power and neuron_power are watts per active cell during one step; derivation
    records where they came from.
    """

    name: str
    multiplex_steps: int
    step_latency: float  # s
    cell_power: float  # W per active cell, array share
    neuron_power: float = 0.0  # W per active cell, neuron share
    node: str = ""
    notes: str = ""
    derivation: Dict = field(default_factory=dict)

    def __post_init__(self):
        if self.multiplex_steps < 1:
            raise ConfigError(f"multiplex_steps must be >= 1, got {self.multiplex_steps}")
        if self.step_latency < 0 or self.cell_power < 0 or self.neuron_power < 0:
            raise ConfigError(f"profile {self.name!r} has negative parameters")

    def step_energy(self, n_cells: int) -> float:
        """Energy of one multiplexing step with n_cells active cells (J)."""
        return n_cells * (self.cell_power + self.neuron_power) * self.step_latency

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass(frozen=True)
class TechScaling:
    """A profile file: scale factors applied to a base profile.

    base is "measured" (the simulated chip) or the name of another profile file.
    """

    name: str
    base: str
    latency_scale: float
    array_power_scale: float
    neuron_power_scale: float
    multiplex_steps: Optional[int] = None  # None keeps the base's
    node: str = ""
    notes: str = ""

    def __post_init__(self):
        if min(self.latency_scale, self.array_power_scale, self.neuron_power_scale) <= 0:
            raise ConfigError(f"profile {self.name!r} needs positive scale factors")
        if self.multiplex_steps is not None and self.multiplex_steps < 1:
            raise ConfigError(f"multiplex_steps must be >= 1, got {self.multiplex_steps}")

    @classmethod
    def from_file(cls, path: Path) -> "TechScaling":
        parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
        if not parser.read(path):
            raise ConfigError(f"tech profile not found: {path}")
        if not parser.has_section("profile"):
            raise ConfigError(f"{path} has no [profile] section")
        section = parser["profile"]
        try:
            steps = section.get("multiplex_steps")
            return cls(
                name=section.get("name", Path(path).stem),
                base=section.get("base", MEASURED_BASE),
                latency_scale=section.getfloat("latency_scale"),
                array_power_scale=section.getfloat("array_power_scale"),
                neuron_power_scale=section.getfloat("neuron_power_scale"),
                multiplex_steps=int(steps) if steps else None,
                node=section.get("node", ""),
                notes=section.get("notes", ""),
            )
        except (TypeError, ValueError) as e:
            raise ConfigError(f"invalid tech profile {path}: {e}") from e

    def apply(self, base: TechProfile) -> TechProfile:
        return TechProfile(
            name=self.name,
            multiplex_steps=self.multiplex_steps or base.multiplex_steps,
            step_latency=base.step_latency * self.latency_scale,
            cell_power=base.cell_power * self.array_power_scale,
            neuron_power=base.neuron_power * self.neuron_power_scale,
            node=self.node,
            notes=self.notes,
            derivation={
                "base": base.name,
                "base_step_latency_s": base.step_latency,
                "base_cell_power_W": base.cell_power,
                "base_neuron_power_W": base.neuron_power,
                "latency_scale": self.latency_scale,
                "array_power_scale": self.array_power_scale,
                "neuron_power_scale": self.neuron_power_scale,
                "base_derivation": base.derivation,
            },
        )


def load_tech_profile(name: str, profiles_dir: Path, measured: TechProfile) -> TechProfile:
    """Resolve a profile file and its chain of bases down to the measured profile."""
    seen: List[str] = []
    chain: List[TechScaling] = []
    while name != MEASURED_BASE:
        if name in seen:
            raise ConfigError(f"tech profile base cycle: {' -> '.join(seen + [name])}")
        seen.append(name)
        path = Path(profiles_dir) / f"{name}.profile"
        if not path.exists():
            available = sorted(p.stem for p in Path(profiles_dir).glob("*.profile"))
            raise ConfigError(f"unknown tech profile {name!r}; available: {available}")
        scaling = TechScaling.from_file(path)
        chain.append(scaling)
        name = scaling.base
    profile = measured
    for scaling in reversed(chain):
        profile = scaling.apply(profile)
    return profile


@dataclass(frozen=True)
class LayerShape:
    kernel: int
    c_in: int
    c_out: int
    name: str = ""

    def __post_init__(self):
        if min(self.kernel, self.c_in, self.c_out) < 1:
            raise ConfigError(f"layer {self.name!r} needs positive dimensions")

    @property
    def cells(self) -> int:
        """Differential cells of one kernel bank, bias row included."""
        return 2 * (self.kernel ** 2 * self.c_in + 1) * self.c_out


@dataclass
class ScalingProjection:
    profile: str
    n_cells: int
    time: float  # s
    energy: float  # J
    assumptions: Dict = field(default_factory=dict)

    def advantage_over(self, reference: str) -> Dict[str, float]:
        ref_time, ref_energy = REFERENCE_SYSTEMS[reference]
        return {"speed": ref_time / self.time, "energy": ref_energy / self.energy}

    def to_dict(self) -> Dict:
        return {
            "profile": self.profile,
            "n_cells": self.n_cells,
            "time_s": self.time,
            "energy_J": self.energy,
            "advantage": {ref: self.advantage_over(ref) for ref in DIGITAL_REFERENCES},
            "assumptions": self.assumptions,
        }


def load_workload(path: Path) -> List[LayerShape]:
    with open(path, "r", encoding="utf-8") as f:
        data = json.load(f)
    layers = data["layers"] if isinstance(data, dict) else data
    return [LayerShape(**layer) for layer in layers]


def mlp_workload(topology: NetworkTopology) -> List[LayerShape]:
    """A fully connected network as 1x1 kernels."""
    sizes = topology.layers
    return [LayerShape(kernel=1, c_in=a, c_out=b, name=f"fc{i + 1}") for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:]))]


def _array_currents(net: NetworkInstance, x: np.ndarray, workers: int) -> Tuple[np.ndarray, np.ndarray]:
    """Array currents of each pattern at its own operating point."""
    hidden = forward_chunked(net, x, workers=workers).hidden_voltages
    gate_bits = x.astype(float)
    gate_volts = hidden
    if net.topology.bias_nodes:
        gate_bits = np.hstack([gate_bits, np.ones((x.shape[0], 1))])
        gate_volts = np.hstack([hidden, np.full((x.shape[0], 1), net.array2.v_in_max)])
    return array_current(net.array1, gate_bits, net.phys), array_current(net.array2, gate_volts, net.phys)


def static_power(
    net: NetworkInstance,
    patterns: np.ndarray,
    rails: Optional[SupplyRails] = None,
    workers: int = 1,
    neuron_current: Optional[float] = None,
) -> PowerProfile:
    """Per-pattern array power plus the neuron static draw on the neuron rail.

    neuron_current defaults to the neuron rail current.
    """
    rails = rails or SupplyRails.default()
    x = np.atleast_2d(np.asarray(patterns))
    if x.shape[0] == 0:
        raise ValueError("static_power needs at least one pattern")
    i1, i2 = _array_currents(net, x, workers)

    neuron_rail = rails.rail("neurons")
    if neuron_current is None:
        neuron_current = neuron_rail.current if neuron_rail else 0.0
    if neuron_current < 0:
        raise ValueError(f"neuron static current must be non-negative, got {neuron_current}")
    profile = PowerProfile(
        array1_currents=i1,
        array2_currents=i2,
        array1_v_ds=net.array1.v_ds,
        array2_v_ds=net.array2.v_ds,
        neuron_current=float(neuron_current),
        neuron_voltage=neuron_rail.voltage if neuron_rail else 0.0,
        rails=rails,
    )
    logger.info(
        f"Static power over {x.shape[0]} patterns: mean array current {np.mean(i1 + i2):.4e} A, "
        f"simulated {profile.avg_power:.6e} W, rail arithmetic {rails.power:.6e} W"
    )
    return profile


def rail_matched_neuron_current(
    net: NetworkInstance,
    patterns: np.ndarray,
    rails: Optional[SupplyRails] = None,
    workers: int = 1,
) -> float:
    """Neuron static current that makes the mean simulated power over patterns equal the rail arithmetic."""
    rails = rails or SupplyRails.default()
    neuron_rail = rails.rail("neurons")
    if neuron_rail is None:
        raise ConfigError("rail matching needs a 'neurons' rail")
    array_power = static_power(net, patterns, rails, workers, neuron_current=0.0).avg_power
    current = (rails.power - array_power) / neuron_rail.voltage
    if current < 0:
        logger.warning(f"Array power {array_power:.4e} W exceeds the rail arithmetic; neuron static current set to 0")
        return 0.0
    return current


def energy_per_classification(power, latency: float) -> float:
    """Average power (W, or a PowerProfile) times latency."""
    if latency <= 0:
        raise ValueError(f"latency must be positive, got {latency}")
    avg = power.avg_power if isinstance(power, PowerProfile) else float(power)
    return avg * latency


def latency_estimate(
    net: NetworkInstance, mode: str = "measured-bound", bound: float = 1e-6, residual: float = 0.01
) -> float:
    """Classification latency: the measured upper bound or a first-order settling sum."""
    if mode == "measured-bound":
        return bound
    if mode == "settling-model":
        return settling_time(net.hidden_params, residual) + settling_time(net.output_params, residual)
    raise ConfigError(f"unknown latency mode {mode!r}; choose from {LATENCY_MODES}")


def perf_report(power: PowerProfile, latency: float) -> PerfReport:
    return PerfReport(
        mean_array_current=float(np.mean(power.array_currents)),
        neuron_current=power.neuron_current,
        array_power=float(np.mean(power.array_power)),
        neuron_power=power.neuron_power,
        avg_power=power.avg_power,
        rail_power=power.rail_power,
        latency=latency,
        energy=energy_per_classification(power, latency),
        rail_energy=energy_per_classification(power.rail_power, latency),
    )


def rail_report(rails: SupplyRails, latency: float) -> PerfReport:
    """Report built from the rail arithmetic alone, for when no simulated power exists."""
    arrays = rails.rail("arrays")
    neurons = rails.rail("neurons")
    array_power = arrays.power if arrays else 0.0
    neuron_power = neurons.power if neurons else 0.0
    energy = energy_per_classification(rails.power, latency)
    return PerfReport(
        mean_array_current=arrays.current if arrays else 0.0,
        neuron_current=neurons.current if neurons else 0.0,
        array_power=array_power,
        neuron_power=neuron_power,
        avg_power=array_power + neuron_power,
        rail_power=rails.power,
        latency=latency,
        energy=energy,
        rail_energy=energy,
    )


def project_scaling(workload: Sequence[LayerShape], tech: TechProfile) -> ScalingProjection:
    if not workload:
        raise ValueError("workload needs at least one layer")
    n_cells = sum(layer.cells for layer in workload)
    time = tech.multiplex_steps * tech.step_latency
    energy = tech.multiplex_steps * tech.step_energy(n_cells)
    assumptions = {
        "multiplex_steps": tech.multiplex_steps,
        "step_latency_s": tech.step_latency,
        "active_cells_per_step": n_cells,
        "cell_power_W": tech.cell_power,
        "neuron_power_W": tech.neuron_power,
        "model": "energy = steps * cells * (P_cell + P_neuron) * t_step",
        "derivation": tech.derivation,
        "notes": tech.notes,
    }
    return ScalingProjection(profile=tech.name, n_cells=n_cells, time=time, energy=energy, assumptions=assumptions)


def measured_profile(report: PerfReport, topology: NetworkTopology, source: str = "simulated") -> TechProfile:
    """One-step profile that reproduces the measured network's own latency and energy."""
    n_cells = topology.cell_count()
    return TechProfile(
        name=MEASURED_BASE,
        multiplex_steps=1,
        step_latency=report.latency,
        cell_power=report.array_power / n_cells,
        neuron_power=report.neuron_power / n_cells,
        notes="chip power spread over the cells of the network",
        derivation={
            "source": source,
            "n_cells": n_cells,
            "array_power_W": report.array_power,
            "neuron_power_W": report.neuron_power,
            "latency_s": report.latency,
        },
    )
