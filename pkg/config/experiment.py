"""
Experiment configuration: a sectioned key-value file resolved into typed dataclasses.

Overrides use "section.key" names, e.g. {"import.accuracy": 0.02, "run.seed": 7}.
"""
import configparser
import hashlib
import logging
from dataclasses import dataclass, asdict, fields
from pathlib import Path
from typing import Any, Dict, Optional, get_type_hints

from config.settings import DEFAULT_CONFIG_PATH, DEFAULT_WORKERS, MNIST_DIR
from src.core.device import DevicePhysics
from src.core.exceptions import ConfigError
from src.core.network import NetworkInstance, NetworkTopology, NoiseMode
from src.core.neurons import NeuronParams
from src.core.perf_model import LATENCY_MODES, NEURON_STATIC_MODES, Rail, SupplyRails
from src.training.importer import TUNING_ORDERS, DisturbModel
from src.training.trainer import TrainingConfig
from src.utils.reports import dumps

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ArrayBiases:
    v_drain: float = 2.7
    v_source: float = 1.65
    v_gate_on: float = 4.2
    v_in_min: float = 1.1
    v_in_max: float = 2.7
    series_resistance: float = 0.0


@dataclass(frozen=True)
class ImportSettings:
    tuned_fraction: float = 0.30
    accuracy: float = 0.05
    i_hi1: float = 2e-7  # A, top current of layer 1 above baseline
    i_hi2: float = 1e-7  # A
    p_disturb: float = 5e-4
    sigma_disturb: float = 0.2
    order: str = "row-major"
    retune_passes: int = 0
    probe_patterns: int = 100

    def __post_init__(self):
        if not 0 < self.tuned_fraction <= 1:
            raise ConfigError(f"import.tuned_fraction must lie in (0, 1], got {self.tuned_fraction}")
        if self.accuracy < 0:
            raise ConfigError(f"import.accuracy must be >= 0, got {self.accuracy}")
        if self.order not in TUNING_ORDERS:
            raise ConfigError(f"import.order must be one of {TUNING_ORDERS}, got {self.order!r}")
        if self.i_hi1 <= 0 or self.i_hi2 <= 0:
            raise ConfigError("import.i_hi1 and import.i_hi2 must be positive")


@dataclass(frozen=True)
class NoiseSettings:
    enabled: bool = False
    sample_rate: float = 1e6  # Hz
    n_samples: int = 65536


@dataclass(frozen=True)
class PerfSettings:
    neuron_rail_voltage: float = 2.7  # V
    neuron_rail_current: float = 5.6e-3  # A
    array_rail_voltage: float = 1.05  # V
    array_rail_current: float = 2.9e-3  # A
    latency_bound: float = 1e-6  # s
    latency_mode: str = "measured-bound"
    neuron_static: str = "rail-matched"
    calibration_patterns: int = 1000  # training patterns used for rail matching
    tech: str = "esf1"
    workload: str = "alexnet_conv.json"
    histogram_bins: int = 50

    def __post_init__(self):
        if self.latency_mode not in LATENCY_MODES:
            raise ConfigError(f"perf.latency_mode must be one of {LATENCY_MODES}")
        if self.neuron_static not in NEURON_STATIC_MODES:
            raise ConfigError(f"perf.neuron_static must be one of {NEURON_STATIC_MODES}")
        if self.latency_bound <= 0 or self.histogram_bins < 1 or self.calibration_patterns < 1:
            raise ConfigError("perf.latency_bound, perf.histogram_bins and perf.calibration_patterns must be positive")


@dataclass(frozen=True)
class DataSettings:
    mnist_dir: str = ""  # empty: MNIST_DIR from the environment
    threshold: float = 0.5
    train_limit: int = 0  # 0 = whole split
    test_limit: int = 0

    def __post_init__(self):
        if not 0 <= self.threshold <= 1:
            raise ConfigError(f"data.threshold must lie in [0, 1], got {self.threshold}")

    @property
    def directory(self) -> Path:
        return Path(self.mnist_dir) if self.mnist_dir else MNIST_DIR


@dataclass(frozen=True)
class RunSettings:
    seed: int = 0
    noise_seed: int = 1
    workers: int = DEFAULT_WORKERS
    repeats: int = 1
    retention_seconds: float = 0.0  # s of charge loss applied before evaluate; 0 is a fresh chip

    def __post_init__(self):
        if self.workers < 1 or self.repeats < 1:
            raise ConfigError("run.workers and run.repeats must be >= 1")
        if self.retention_seconds < 0:
            raise ConfigError("run.retention_seconds must be non-negative")


def _parse_bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _parse_float(raw: str) -> float:
    return float(raw.strip())


def dataclass_from_section(cls, parser: configparser.ConfigParser, section: str):
    """Build `cls` from one config section, converting by field type; unknown keys fail."""
    if not parser.has_section(section):
        return cls()
    hints = get_type_hints(cls)
    known = {f.name for f in fields(cls)}
    values: Dict[str, Any] = {}
    for key, raw in parser.items(section):
        if key not in known:
            raise ConfigError(f"unknown key [{section}] {key}")
        kind = hints[key]
        try:
            if kind is bool:
                values[key] = _parse_bool(raw)
            elif kind is int:
                values[key] = int(raw)
            elif kind is float:
                values[key] = _parse_float(raw)
            else:
                values[key] = raw.strip()
        except ValueError as e:
            raise ConfigError(f"[{section}] {key} = {raw!r}: {e}") from e
    try:
        return cls(**values)
    except ConfigError:
        raise
    except ValueError as e:
        raise ConfigError(f"[{section}]: {e}") from e


@dataclass(frozen=True)
class ExperimentConfig:
    topology: NetworkTopology
    device: DevicePhysics
    array1: ArrayBiases
    array2: ArrayBiases
    hidden: NeuronParams
    output: NeuronParams
    train: TrainingConfig
    import_: ImportSettings
    noise: NoiseSettings
    perf: PerfSettings
    data: DataSettings
    run: RunSettings

    SECTIONS = {
        "topology": ("topology", NetworkTopology),
        "device": ("device", DevicePhysics),
        "array1": ("array1", ArrayBiases),
        "array2": ("array2", ArrayBiases),
        "hidden": ("neurons.hidden", NeuronParams),
        "output": ("neurons.output", NeuronParams),
        "train": ("train", TrainingConfig),
        "import_": ("import", ImportSettings),
        "noise": ("noise", NoiseSettings),
        "perf": ("perf", PerfSettings),
        "data": ("data", DataSettings),
        "run": ("run", RunSettings),
    }

    @classmethod
    def load(cls, path: Optional[Path] = None, overrides: Optional[Dict[str, Any]] = None) -> "ExperimentConfig":
        path = Path(path) if path else DEFAULT_CONFIG_PATH
        parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
        if not parser.read(path):
            raise ConfigError(f"config file not found: {path}")
        known_sections = {section for section, _ in cls.SECTIONS.values()}
        for section in parser.sections():
            if section not in known_sections:
                raise ConfigError(f"unknown section [{section}] in {path}")
        for name, value in (overrides or {}).items():
            if value is None:
                continue
            section, _, key = name.rpartition(".")
            if section not in known_sections:
                raise ConfigError(f"override {name!r} names no config section")
            if not parser.has_section(section):
                parser.add_section(section)
            parser.set(section, key, str(value))
        built = {attr: dataclass_from_section(kind, parser, section) for attr, (section, kind) in cls.SECTIONS.items()}
        logger.debug(f"Loaded experiment config from {path}")
        return cls(**built)

    def to_dict(self) -> Dict[str, Dict]:
        return {section: asdict(getattr(self, attr)) for attr, (section, _) in self.SECTIONS.items()}

    def fingerprint(self) -> str:
        return hashlib.sha256(dumps(self.to_dict()).encode()).hexdigest()

    def erased_network(self) -> NetworkInstance:
        a1, a2 = self.array1, self.array2
        return NetworkInstance.erased(
            self.topology,
            self.device,
            self.hidden,
            self.output,
            array1_biases={"v_drain": a1.v_drain, "v_source": a1.v_source, "v_gate_on": a1.v_gate_on,
                           "series_resistance": a1.series_resistance},
            array2_biases={"v_drain": a2.v_drain, "v_source": a2.v_source, "v_in_min": a2.v_in_min,
                           "v_in_max": a2.v_in_max, "series_resistance": a2.series_resistance},
        )

    def disturb_model(self) -> DisturbModel:
        return DisturbModel(p_disturb=self.import_.p_disturb, sigma_disturb=self.import_.sigma_disturb)

    def noise_mode(self, seed: Optional[int] = None) -> Optional[NoiseMode]:
        if not self.noise.enabled:
            return None
        return NoiseMode(
            seed=self.run.noise_seed if seed is None else seed,
            sample_rate=self.noise.sample_rate,
            n_samples=self.noise.n_samples,
        )

    def supply_rails(self) -> SupplyRails:
        p = self.perf
        return SupplyRails(rails=(
            Rail("neurons", p.neuron_rail_voltage, p.neuron_rail_current),
            Rail("arrays", p.array_rail_voltage, p.array_rail_current),
        ))
