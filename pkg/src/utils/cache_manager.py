from pathlib import Path
import json
from typing import Optional, Dict, Any, Tuple
import hashlib
import logging
import shutil

from src.training.trainer import TrainedWeights
from src.utils.artifacts import load_weights, save_weights

logger = logging.getLogger(__name__)


class CacheManager:
    def __init__(self, cache_dir: Path):
        self.cache_dir = Path(cache_dir)
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        self.weights_cache = self.cache_dir / "weights"
        self.weights_cache.mkdir(exist_ok=True)
        self.downloads_cache = self.cache_dir / "downloads"
        self.downloads_cache.mkdir(exist_ok=True)

    def _get_cache_key(self, key: str) -> str:
        """Generate a stable cache key."""
        return hashlib.sha256(key.encode()).hexdigest()

    def training_key(self, training_config: Dict[str, Any], dataset_fingerprint: str) -> str:
        """Key of a training run: its config plus the training data."""
        payload = json.dumps({"train": training_config, "data": dataset_fingerprint}, sort_keys=True)
        return self._get_cache_key(payload)

    def get_cached_weights(self, key: str) -> Optional[Tuple[TrainedWeights, Dict]]:
        """Cached weights and their metadata, or None."""
        stem = self.weights_cache / key
        if not stem.with_suffix(".json").exists():
            return None
        try:
            weights, metadata = load_weights(stem)
            logger.info(f"Using cached weights {key[:12]}")
            return weights, metadata
        except Exception as e:
            logger.warning(f"Ignoring unreadable weights cache entry {key[:12]}: {e}")
            return None

    def cache_weights(self, key: str, weights: TrainedWeights, metadata: Optional[Dict] = None) -> None:
        save_weights(self.weights_cache / key, weights, metadata)

    def get_cached_download_path(self, url: str) -> Optional[Path]:
        cache_path = self.downloads_cache / self._get_cache_key(url)
        return cache_path if cache_path.exists() else None

    def cache_download(self, url: str, file_path: Path) -> None:
        """Keep a copy of a downloaded file keyed by its URL."""
        shutil.copy2(file_path, self.downloads_cache / self._get_cache_key(url))


def fingerprint_arrays(*arrays) -> str:
    """sha256 over the raw bytes of numpy arrays."""
    digest = hashlib.sha256()
    for array in arrays:
        digest.update(str(array.shape).encode())
        digest.update(array.tobytes())
    return digest.hexdigest()
