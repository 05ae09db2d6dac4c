"""
Flat binary artifacts: little-endian float64 payload next to a JSON header.

    <stem>.bin   raw values
    <stem>.json  header with shapes and metadata
"""
import json
import logging
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np

from src.core.crossbar import CrossbarArray
from src.core.device import DevicePhysics
from src.core.exceptions import MissingArtifactError, ShapeError
from src.core.network import NetworkInstance, NetworkTopology
from src.core.neurons import NeuronParams
from src.training.trainer import TrainedWeights

logger = logging.getLogger(__name__)

DTYPE = "<f8"


def _write_json(path: Path, payload: Dict) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def _read_json(path: Path, produced_by: str) -> Dict:
    if not path.exists():
        raise MissingArtifactError(f"{path} not found; run the `{produced_by}` command first")
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def save_matrices(stem: Path, matrices: Dict[str, np.ndarray], metadata: Optional[Dict] = None) -> Path:
    """Concatenate matrices into <stem>.bin and describe them in <stem>.json."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    header = {"dtype": DTYPE, "order": "C", "arrays": [], "metadata": metadata or {}}
    with open(stem.with_suffix(".bin"), "wb") as f:
        for name, matrix in matrices.items():
            data = np.ascontiguousarray(matrix, dtype=DTYPE)
            header["arrays"].append({"name": name, "shape": list(data.shape)})
            f.write(data.tobytes())
    _write_json(stem.with_suffix(".json"), header)
    return stem.with_suffix(".bin")


def load_matrices(stem: Path, produced_by: str = "train") -> Tuple[Dict[str, np.ndarray], Dict]:
    stem = Path(stem)
    header = _read_json(stem.with_suffix(".json"), produced_by)
    bin_path = stem.with_suffix(".bin")
    if not bin_path.exists():
        raise MissingArtifactError(f"{bin_path} not found; run the `{produced_by}` command first")
    raw = np.fromfile(bin_path, dtype=header.get("dtype", DTYPE))
    matrices = {}
    offset = 0
    for entry in header["arrays"]:
        size = int(np.prod(entry["shape"], dtype=np.int64))
        if offset + size > raw.size:
            raise ShapeError(f"{bin_path} holds {raw.size} values, header needs more for {entry['name']!r}")
        matrices[entry["name"]] = raw[offset:offset + size].reshape(entry["shape"]).astype(float)
        offset += size
    if offset != raw.size:
        raise ShapeError(f"{bin_path} holds {raw.size} values, header describes {offset}")
    return matrices, header.get("metadata", {})


def save_weights(stem: Path, weights: TrainedWeights, metadata: Optional[Dict] = None) -> Path:
    meta = {"layer_scales": list(weights.layer_scales()), **(metadata or {})}
    return save_matrices(stem, {"w1": weights.w1, "w2": weights.w2}, meta)


def load_weights(stem: Path) -> Tuple[TrainedWeights, Dict]:
    matrices, metadata = load_matrices(stem, produced_by="train")
    return TrainedWeights(w1=matrices["w1"], w2=matrices["w2"]), metadata


def save_network(directory: Path, net: NetworkInstance, metadata: Optional[Dict] = None) -> Path:
    """Network snapshot: network.json plus one binary grid per array."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    config = net.to_config()
    config["metadata"] = metadata or {}
    _write_json(directory / "network.json", config)
    save_matrices(directory / "array1", {"v_t": net.array1.v_t}, net.array1.to_header())
    save_matrices(directory / "array2", {"v_t": net.array2.v_t}, net.array2.to_header())
    logger.info(f"Saved network snapshot to {directory}")
    return directory


def load_network(directory: Path) -> Tuple[NetworkInstance, Dict]:
    directory = Path(directory)
    config = _read_json(directory / "network.json", "import")
    arrays = []
    for name in ("array1", "array2"):
        matrices, _ = load_matrices(directory / name, produced_by="import")
        arrays.append(CrossbarArray.from_header(config[name], matrices["v_t"]))
    net = NetworkInstance(
        topology=NetworkTopology(**config["topology"]),
        array1=arrays[0],
        array2=arrays[1],
        hidden_params=NeuronParams(**config["hidden"]),
        output_params=NeuronParams(**config["output"]),
        phys=DevicePhysics(**config["device"]),
    )
    return net, config.get("metadata", {})
