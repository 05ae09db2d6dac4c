import json
import logging
from pathlib import Path
from typing import Dict, Any, List

from src.core.exceptions import MissingArtifactError

logger = logging.getLogger(__name__)

HISTORY_FILE_NAME = "history.json"


class HistoryManager:
    """Completed commands of one output directory, keyed by command name.

    No wall-clock fields are stored so re-runs stay byte-identical.
    """

    def __init__(self, run_dir: Path):
        self.history_file = Path(run_dir) / HISTORY_FILE_NAME
        self.history: Dict[str, Any] = self._load_history()

    def _load_history(self) -> Dict[str, Any]:
        """Load history from file or create new if doesn't exist."""
        if self.history_file.exists():
            try:
                with open(self.history_file, 'r') as f:
                    return json.load(f)
            except json.JSONDecodeError:
                logger.warning(f"Error reading history file {self.history_file}; starting fresh")
                return {}
        return {}

    def _save_history(self) -> None:
        self.history_file.parent.mkdir(parents=True, exist_ok=True)
        with open(self.history_file, 'w') as f:
            json.dump(self.history, f, indent=2, sort_keys=True)
            f.write("\n")

    def record(self, command: str, fingerprint: str, artifacts: List[str]) -> None:
        """Record a completed command and the artifacts it produced."""
        self.history[command] = {
            'config_fingerprint': fingerprint,
            'artifacts': sorted(artifacts),
        }
        self._save_history()

    def is_completed(self, command: str) -> bool:
        return command in self.history

    def require(self, command: str, needed_by: str) -> Dict[str, Any]:
        """Entry of a prerequisite command, or MissingArtifactError naming it."""
        entry = self.history.get(command)
        if entry is None:
            raise MissingArtifactError(
                f"`{needed_by}` needs the output of `{command}`; run `{command}` first "
                f"with the same --out directory"
            )
        missing = [a for a in entry['artifacts'] if not (self.history_file.parent / a).exists()]
        if missing:
            raise MissingArtifactError(
                f"`{needed_by}` needs {missing[0]} from `{command}`, which is gone; re-run `{command}`"
            )
        return entry
