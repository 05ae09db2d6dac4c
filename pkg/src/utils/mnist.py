"""
MNIST in IDX format: parsing, binarization, writing and download from a mirror.

IDX layout (big-endian): 2 zero bytes, a type byte (0x08 = unsigned byte), the number
of dimensions, one 32-bit size per dimension, then the raw data.
"""
import gzip
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np
import requests

from src.core.exceptions import ConfigError, DataError, IdxFormatError

logger = logging.getLogger(__name__)

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
UBYTE_TYPE = 0x08

MNIST_FILES: Dict[str, Tuple[str, str]] = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


@dataclass(frozen=True, eq=False)
class BinarizedDataset:
    patterns: np.ndarray  # (n, rows*cols) of 0/1
    labels: np.ndarray  # (n,)
    split: str
    image_shape: Tuple[int, int] = (28, 28)

    def __len__(self) -> int:
        return int(self.labels.size)

    def subset(self, count: Optional[int]) -> "BinarizedDataset":
        if count is None or count >= len(self):
            return self
        return BinarizedDataset(self.patterns[:count], self.labels[:count], self.split, self.image_shape)


def _read_bytes(path: Path) -> bytes:
    with open(path, "rb") as f:
        data = f.read()
    if data[:2] == b"\x1f\x8b":
        return gzip.decompress(data)
    return data


def parse_idx(data: bytes, expected_magic: int, source: str = "<bytes>") -> np.ndarray:
    if len(data) < 4:
        raise IdxFormatError(f"{source}: truncated header at offset {len(data)}")
    (magic,) = struct.unpack(">I", data[:4])
    if magic != expected_magic:
        raise IdxFormatError(f"{source}: bad magic 0x{magic:08x} at offset 0, expected 0x{expected_magic:08x}")
    n_dims = data[3]
    header_end = 4 + 4 * n_dims
    if len(data) < header_end:
        raise IdxFormatError(f"{source}: truncated dimension table at offset {len(data)}")
    dims = struct.unpack(f">{n_dims}I", data[4:header_end])
    expected = int(np.prod(dims, dtype=np.int64))
    payload = len(data) - header_end
    if payload != expected:
        raise IdxFormatError(
            f"{source}: dimensions {dims} need {expected} data bytes at offset {header_end}, found {payload}"
        )
    return np.frombuffer(data, dtype=np.uint8, offset=header_end).reshape(dims)


def binarize(pixels: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Grayscale pixels at or above threshold*255 become 1; zero pixels always stay 0."""
    if not 0 <= threshold <= 1:
        raise ConfigError(f"threshold must lie in [0, 1], got {threshold}")
    return ((pixels >= threshold * 255.0) & (pixels > 0)).astype(np.uint8)


def load_mnist(
    idx_image_path: Path,
    idx_label_path: Path,
    threshold: float = 0.5,
    split: str = "test",
    n_classes: int = 10,
) -> BinarizedDataset:
    images = parse_idx(_read_bytes(idx_image_path), IMAGES_MAGIC, str(idx_image_path))
    labels = parse_idx(_read_bytes(idx_label_path), LABELS_MAGIC, str(idx_label_path))
    if images.shape[0] != labels.shape[0]:
        raise DataError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    if labels.size and labels.max() >= n_classes:
        raise DataError(f"label {int(labels.max())} outside [0, {n_classes - 1}]")

    patterns = binarize(images.reshape(images.shape[0], -1), threshold)
    logger.info(f"Loaded {labels.size} {split} patterns from {idx_image_path}")
    return BinarizedDataset(
        patterns=patterns,
        labels=labels.astype(np.int64),
        split=split,
        image_shape=(int(images.shape[1]), int(images.shape[2])),
    )


def write_idx(path: Path, array: np.ndarray, compress: bool = False) -> Path:
    """Write a uint8 array as IDX; 3-D arrays get the image magic, 1-D the label magic."""
    array = np.asarray(array)
    if array.ndim not in (1, 3):
        raise IdxFormatError(f"only 1-D labels or 3-D images are supported, got {array.ndim} dimensions")
    if array.size and (array.min() < 0 or array.max() > 255):
        raise IdxFormatError("IDX ubyte data must lie in [0, 255]")
    header = struct.pack(">BBBB", 0, 0, UBYTE_TYPE, array.ndim) + struct.pack(f">{array.ndim}I", *array.shape)
    data = header + array.astype(np.uint8).tobytes()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(gzip.compress(data, mtime=0) if compress else data)
    return path


def mnist_paths(directory: Path, split: str) -> Tuple[Path, Path]:
    """Locate the IDX files of a split, plain or gzipped."""
    if split not in MNIST_FILES:
        raise ConfigError(f"unknown split {split!r}")
    found = []
    for stem in MNIST_FILES[split]:
        candidates = [Path(directory) / stem, Path(directory) / f"{stem}.gz"]
        path = next((c for c in candidates if c.exists()), None)
        if path is None:
            raise FileNotFoundError(
                f"{stem}[.gz] not found in {directory}; run the `fetch` command or set MNIST_DIR"
            )
        found.append(path)
    return found[0], found[1]


def load_split(directory: Path, split: str, threshold: float = 0.5) -> BinarizedDataset:
    image_path, label_path = mnist_paths(directory, split)
    return load_mnist(image_path, label_path, threshold, split)


class MnistFetcher:
    def __init__(self, mirror_url: str, dest_dir: Path, timeout: float = 60.0):
        if not mirror_url:
            raise ConfigError("no MNIST mirror configured; set MNIST_MIRROR_URL or pass --mirror")
        self.mirror_url = mirror_url.rstrip("/")
        self.dest_dir = Path(dest_dir)
        self.dest_dir.mkdir(parents=True, exist_ok=True)
        self.timeout = timeout

    def file_url(self, name: str) -> str:
        return f"{self.mirror_url}/{name}.gz"

    def download(self, name: str) -> Path:
        """Download one gzipped IDX file unless it is already present."""
        target = self.dest_dir / f"{name}.gz"
        if target.exists():
            logger.info(f"{target} already present")
            return target
        url = self.file_url(name)
        try:
            response = requests.get(url, stream=True, timeout=self.timeout)
            response.raise_for_status()
            partial = target.with_suffix(".gz.part")
            with open(partial, "wb") as f:
                for chunk in response.iter_content(chunk_size=1 << 16):
                    f.write(chunk)
            partial.replace(target)
        except requests.RequestException as e:
            raise RuntimeError(f"Failed to download {url}: {e}") from e
        logger.info(f"Downloaded {url} -> {target}")
        return target
