from pathlib import Path
from typing import Optional, Dict, List, Tuple
import logging
import shutil

import numpy as np

from config.experiment import ExperimentConfig
from config.settings import CACHE_DIR, MNIST_MIRROR_URL, PROFILES_DIR, WORKLOADS_DIR
from src.core.exceptions import ConfigError
from src.core.network import NetworkInstance, age_network, evaluate
from src.core.perf_model import (
    REFERENCE_SYSTEMS,
    PerfReport,
    latency_estimate,
    load_tech_profile,
    load_workload,
    measured_profile,
    mlp_workload,
    perf_report,
    project_scaling,
    rail_matched_neuron_current,
    rail_report,
    static_power,
)
from src.training.importer import hidden_output_probe, ideal_plan, map_weights_to_targets, tune_sequential
from src.training.trainer import ReferenceTrainer, TrainedWeights, coupling_gain, reference_accuracy
from src.utils.artifacts import load_network, load_weights, save_network, save_weights
from src.utils.cache_manager import CacheManager, fingerprint_arrays
from src.utils.history_manager import HistoryManager
from src.utils.mnist import MNIST_FILES, BinarizedDataset, MnistFetcher, load_split
from src.utils.reports import read_json, write_csv, write_json

logger = logging.getLogger(__name__)

COMMANDS = ("train", "import", "evaluate", "power", "project", "full", "fetch")

WEIGHTS_STEM = "weights"
NETWORK_DIR = "network"


def _banner(step: int, total: int, title: str) -> None:
    print(f"\n[Step {step}/{total}] {title}")
    print("-" * 20)


class ExperimentService:
    def __init__(self, config: ExperimentConfig, out_dir: Path, cache_dir: Path = CACHE_DIR):
        self.config = config
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.cache_manager = CacheManager(cache_dir)
        self.history = HistoryManager(self.out_dir)
        self._datasets: Dict[str, BinarizedDataset] = {}
        logger.info(f"Initialized ExperimentService with output directory: {self.out_dir}")

    def seeds(self, seed: Optional[int] = None, noise_seed: Optional[int] = None) -> Dict[str, int]:
        run = self.config.run
        return {
            "seed": run.seed if seed is None else seed,
            "noise_seed": run.noise_seed if noise_seed is None else noise_seed,
        }

    def _write_report(self, name: str, payload: Dict, seeds: Optional[Dict] = None) -> Path:
        return write_json(self.out_dir / name, payload, config=self.config.to_dict(), seeds=seeds or self.seeds())

    def dataset(self, split: str) -> BinarizedDataset:
        if split not in self._datasets:
            data = self.config.data
            loaded = load_split(data.directory, split, data.threshold)
            limit = data.train_limit if split == "train" else data.test_limit
            self._datasets[split] = loaded.subset(limit or None)
        return self._datasets[split]

    @property
    def kappa(self) -> float:
        return coupling_gain(self.config.device, self.config.hidden)

    # ------------------------------------------------------------------ train

    def train(self) -> Dict:
        """Train the software reference and store its weights."""
        cfg = self.config
        train_set = self.dataset("train")
        test_set = self.dataset("test")
        seed = cfg.run.seed

        key = self.cache_manager.training_key(
            {"train": cfg.train.to_dict(), "topology": cfg.topology.to_dict(), "kappa": self.kappa, "seed": seed},
            fingerprint_arrays(train_set.patterns, train_set.labels),
        )
        cached = self.cache_manager.get_cached_weights(key)
        if cached:
            print("✓ Using cached weights")
            weights, metadata = cached
            history = metadata.get("history", [])
        else:
            print("⌛ Training reference network...")
            trainer = ReferenceTrainer(cfg.train, self.kappa, seed)
            result = trainer.train(
                train_set.patterns,
                train_set.labels,
                n_hidden=cfg.topology.n_hidden,
                n_outputs=cfg.topology.n_outputs,
                bias=cfg.topology.bias_nodes,
            )
            weights, history = result.weights, result.history
            self.cache_manager.cache_weights(key, weights, {"history": history})
            print("✓ Training complete")

        weights.check_topology(cfg.topology)
        accuracy = reference_accuracy(weights, test_set.patterns, test_set.labels, self.kappa)
        save_weights(self.out_dir / WEIGHTS_STEM, weights, {"training_key": key, "kappa": self.kappa})
        summary = {
            "software_accuracy": accuracy,
            "n_train": len(train_set),
            "n_test": len(test_set),
            "kappa": self.kappa,
            "layer_scales": list(weights.layer_scales()),
            "history": history,
        }
        self._write_report("train.json", summary)
        self.history.record("train", cfg.fingerprint(), [f"{WEIGHTS_STEM}.bin", f"{WEIGHTS_STEM}.json", "train.json"])
        logger.info(f"Software reference accuracy {accuracy:.4%}")
        return summary

    # ----------------------------------------------------------------- import

    def load_trained_weights(self, needed_by: str) -> TrainedWeights:
        self.history.require("train", needed_by)
        weights, _ = load_weights(self.out_dir / WEIGHTS_STEM)
        return weights

    def import_network(self, weights: TrainedWeights, seed: int):
        cfg = self.config
        imp = cfg.import_
        net = cfg.erased_network()
        plan = map_weights_to_targets(
            weights,
            net,
            imp.tuned_fraction,
            i_hi=(imp.i_hi1, imp.i_hi2),
            accuracy=imp.accuracy,
            disturb=cfg.disturb_model(),
            order=imp.order,
            order_seed=seed,
            retune_passes=imp.retune_passes,
        )
        imported, report = tune_sequential(net, plan, seed)
        return net, plan, imported, report

    def ideal_network(self, weights: TrainedWeights) -> NetworkInstance:
        """Exactly tuned copy of the configured import, without disturb."""
        cfg = self.config
        net = cfg.erased_network()
        plan = ideal_plan(weights, net, cfg.import_.tuned_fraction, i_hi=(cfg.import_.i_hi1, cfg.import_.i_hi2))
        ideal, _ = tune_sequential(net, plan, seed=0)
        return ideal

    def import_weights(self, seed: Optional[int] = None) -> Dict:
        """Map the trained weights to cell targets and simulate tuning them."""
        seeds = self.seeds(seed=seed)
        weights = self.load_trained_weights("import")
        _, plan, imported, report = self.import_network(weights, seeds["seed"])

        probe_count = self.config.import_.probe_patterns
        probe_set = self.dataset("test").patterns[:probe_count]
        probe = hidden_output_probe(self.ideal_network(weights), imported, probe_set)

        save_network(self.out_dir / NETWORK_DIR, imported, {"plan": plan.summary()})
        write_csv(self.out_dir / "import_report.csv", report.to_rows(),
                  ["cell_id", "array", "row", "col", "target_A", "achieved_A", "disturbed"])
        write_csv(self.out_dir / "probe.csv", probe.to_rows(), ["pattern", "neuron", "ideal_V", "imported_V"])
        summary = {
            "plan": plan.summary(),
            "scatter": report.stats(),
            "probe": {"n_pairs": int(probe.ideal.size), "correlation": probe.correlation()},
        }
        self._write_report("import.json", summary, seeds)
        self.history.record(
            "import",
            self.config.fingerprint(),
            [f"{NETWORK_DIR}/network.json", f"{NETWORK_DIR}/array1.bin", f"{NETWORK_DIR}/array2.bin",
             "import_report.csv", "probe.csv", "import.json"],
        )
        return summary

    # --------------------------------------------------------------- evaluate

    def _load_network(self, needed_by: str) -> NetworkInstance:
        self.history.require("import", needed_by)
        net, _ = load_network(self.out_dir / NETWORK_DIR)
        return self._aged(net, self.seeds()["seed"])

    def _aged(self, net: NetworkInstance, seed: int) -> NetworkInstance:
        """The imported chip after run.retention_seconds of charge loss."""
        elapsed = self.config.run.retention_seconds
        if elapsed <= 0:
            return net
        logger.info(f"Aging the network by {elapsed:.4g} s with seed {seed}")
        return age_network(net, elapsed, seed)

    def evaluate(self, noise_seed: Optional[int] = None) -> Dict:
        """Classify the test split on the imported network."""
        cfg = self.config
        seeds = self.seeds(noise_seed=noise_seed)
        net = self._load_network("evaluate")
        test_set = self.dataset("test")
        noise = cfg.noise_mode(seeds["noise_seed"])
        result = evaluate(net, test_set.patterns, test_set.labels, noise, cfg.run.workers, cfg.perf.histogram_bins)

        write_csv(self.out_dir / "histograms.csv", result.histograms.to_rows("neuron"))
        write_csv(self.out_dir / "max_voltage_histograms.csv", result.max_voltage_histograms.to_rows("true_class"))
        summary = {
            **result.summary(),
            "noise": "seeded" if noise else "off",
            "retention_seconds": cfg.run.retention_seconds,
            "histograms": {"bins": cfg.perf.histogram_bins, "counts_scale": "log"},
        }
        self._write_report("evaluation.json", summary, seeds)
        self.history.record(
            "evaluate", cfg.fingerprint(), ["evaluation.json", "histograms.csv", "max_voltage_histograms.csv"]
        )
        return summary

    # ------------------------------------------------------------------ power

    def neuron_static_current(self, net: NetworkInstance) -> float:
        """Neuron static current for the configured mode."""
        perf = self.config.perf
        rails = self.config.supply_rails()
        if perf.neuron_static == "neuron-rail":
            return perf.neuron_rail_current
        calibration = self.dataset("train").patterns[:perf.calibration_patterns]
        return rail_matched_neuron_current(net, calibration, rails, self.config.run.workers)

    def power(self) -> Dict:
        """Static power, latency and energy per classification of the imported network."""
        cfg = self.config
        net = self._load_network("power")
        patterns = self.dataset("test").patterns
        neuron_current = self.neuron_static_current(net)
        profile = static_power(net, patterns, cfg.supply_rails(), cfg.run.workers, neuron_current)
        latency = latency_estimate(net, cfg.perf.latency_mode, cfg.perf.latency_bound)
        report = perf_report(profile, latency)

        write_csv(self.out_dir / "current_histogram.csv", profile.current_histogram(cfg.perf.histogram_bins))
        summary = {
            "report": report.to_dict(),
            "rails": profile.rails.to_dict(),
            "neuron_static": cfg.perf.neuron_static,
            "latency_mode": cfg.perf.latency_mode,
            "settling_model_latency": latency_estimate(net, "settling-model"),
        }
        self._write_report("power.json", summary)
        self.history.record("power", cfg.fingerprint(), ["power.json", "current_histogram.csv"])
        return summary

    # ---------------------------------------------------------------- project

    def measured_report(self) -> Tuple[PerfReport, str]:
        """The simulated power report if `power` ran here, else the rail arithmetic."""
        if self.history.is_completed("power") and (self.out_dir / "power.json").exists():
            report = read_json(self.out_dir / "power.json")["report"]
            return PerfReport(**report), "simulated"
        logger.warning("No power report in this run; projecting from the rail arithmetic")
        return rail_report(self.config.supply_rails(), self.config.perf.latency_bound), "rails"

    def project(self, tech: Optional[str] = None) -> Dict:
        """Scale the measured chip to a large multiplexed workload under a tech profile."""
        cfg = self.config
        tech = tech or cfg.perf.tech
        report, source = self.measured_report()
        measured = measured_profile(report, cfg.topology, source)
        profile = load_tech_profile(tech, PROFILES_DIR, measured)
        projection = project_scaling(load_workload(WORKLOADS_DIR / cfg.perf.workload), profile)
        consistency = project_scaling(mlp_workload(cfg.topology), measured)

        rows: List[Dict] = [
            {"implementation": name, "kind": "reference", "time_s": t, "energy_J": e}
            for name, (t, e) in REFERENCE_SYSTEMS.items()
        ]
        rows.append({"implementation": profile.name, "kind": "projection",
                     "time_s": projection.time, "energy_J": projection.energy})
        write_csv(self.out_dir / f"projection_{tech}.csv", rows, ["implementation", "kind", "time_s", "energy_J"])
        summary = {
            "projection": projection.to_dict(),
            "measured_network": {"time_s": consistency.time, "energy_J": consistency.energy, "source": source},
            "references": {name: {"time_s": t, "energy_J": e} for name, (t, e) in REFERENCE_SYSTEMS.items()},
        }
        self._write_report(f"projection_{tech}.json", summary)
        self.history.record("project", cfg.fingerprint(), [f"projection_{tech}.json", f"projection_{tech}.csv"])
        return summary

    # ------------------------------------------------------------------- full

    def full(self, repeats: Optional[int] = None) -> Dict:
        """train -> import -> evaluate -> power; extra repeats re-import with seeds seed+1, ..."""
        repeats = repeats or self.config.run.repeats
        base = self.seeds()
        _banner(1, 4, "Reference training")
        trained = self.train()
        _banner(2, 4, "Weight import")
        imported = self.import_weights()
        _banner(3, 4, "Evaluation")
        evaluated = self.evaluate()
        fidelities = [evaluated["fidelity"]]
        if repeats > 1:
            weights = self.load_trained_weights("full")
            test_set = self.dataset("test")
            for r in range(1, repeats):
                print(f"⌛ Repeat {r + 1}/{repeats}")
                _, _, net, _ = self.import_network(weights, base["seed"] + r)
                net = self._aged(net, base["seed"] + r)
                noise = self.config.noise_mode(base["noise_seed"] + r)
                result = evaluate(net, test_set.patterns, test_set.labels, noise, self.config.run.workers)
                fidelities.append(result.fidelity)
        _banner(4, 4, "Power and energy")
        powered = self.power()

        summary = {
            "software_accuracy": trained["software_accuracy"],
            "fidelity": evaluated["fidelity"],
            "fidelity_per_seed": fidelities,
            "fidelity_mean": float(np.mean(fidelities)),
            "fidelity_std": float(np.std(fidelities)),
            "import": imported["scatter"],
            "avg_power_W": powered["report"]["avg_power"],
            "latency_s": powered["report"]["latency"],
            "energy_J": powered["report"]["energy"],
            "rail_energy_J": powered["report"]["rail_energy"],
        }
        self._write_report("summary.json", summary, {**base, "repeats": repeats})
        print("\n Experiment complete!")
        print(f"{'=' * 50}\n")
        return summary

    # ------------------------------------------------------------------ fetch

    def fetch(self, mirror_url: Optional[str] = None) -> List[str]:
        """Download the MNIST IDX files into the configured data directory."""
        fetcher = MnistFetcher(mirror_url or MNIST_MIRROR_URL, self.config.data.directory)
        paths = []
        for name in (n for pair in MNIST_FILES.values() for n in pair):
            url = fetcher.file_url(name)
            target = fetcher.dest_dir / f"{name}.gz"
            cached = self.cache_manager.get_cached_download_path(url)
            if target.exists():
                logger.info(f"{target} already present")
            elif cached:
                print(f"✓ Using cached {name}")
                shutil.copy2(cached, target)
            else:
                fetcher.download(name)
            if not cached:
                self.cache_manager.cache_download(url, target)
            paths.append(str(target))
        return paths


def run_experiment(config: ExperimentConfig, command: str, out_dir: Path, **options) -> Dict:
    """Run one pipeline command; options are the per-command CLI values."""
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}; choose from {COMMANDS}")
    service = ExperimentService(config, out_dir, options.pop("cache_dir", CACHE_DIR))
    if command == "train":
        return service.train()
    if command == "import":
        return service.import_weights()
    if command == "evaluate":
        return service.evaluate()
    if command == "power":
        return service.power()
    if command == "project":
        return service.project(options.get("tech"))
    if command == "fetch":
        return {"files": service.fetch(options.get("mirror"))}
    return service.full(options.get("repeats"))
