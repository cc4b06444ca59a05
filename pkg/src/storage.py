import json
import logging
import os
from typing import Any, Dict, List, Sequence

from src.clustering import ClusterAssignment
from src.errors import DataError
from src.evaluation import EvalReport


class RunStorage:
    """One output directory per run holding JSON artifacts and the config snapshot.

    Artifacts are written with sorted keys and no timestamps, so rerunning a
    command with the same inputs reproduces the files byte for byte.
    """

    CONFIG_FILE = "config.json"

    def __init__(self, output_dir: str):
        self.output_dir = output_dir
        self.logger = logging.getLogger(__name__)
        self._init_dir()

    def _init_dir(self) -> None:
        """Create the run directory"""
        self.logger.debug(f"Initializing run directory at {self.output_dir}")
        try:
            os.makedirs(self.output_dir, exist_ok=True)
        except OSError as e:
            self.logger.error(f"Failed to create run directory {self.output_dir}: {str(e)}")
            raise

    def path(self, name: str) -> str:
        return os.path.join(self.output_dir, name)

    def write_json(self, name: str, payload: Any) -> str:
        filepath = self.path(name)
        try:
            with open(filepath, "w", encoding="utf-8") as f:
                json.dump(payload, f, sort_keys=True, indent=2)
                f.write("\n")
            self.logger.debug(f"Wrote {filepath}")
        except (OSError, TypeError) as e:
            self.logger.error(f"Failed to write {filepath}: {str(e)}")
            self.logger.error(f"Error type: {type(e).__name__}")
            raise
        return filepath

    def read_json(self, filepath: str) -> Any:
        try:
            with open(filepath, encoding="utf-8") as f:
                return json.load(f)
        except OSError as e:
            self.logger.error(f"Failed to read {filepath}: {str(e)}")
            self.logger.error(f"Error type: {type(e).__name__}")
            raise DataError(f"Cannot read {filepath}: {e}") from e
        except json.JSONDecodeError as e:
            raise DataError(f"{filepath} is not valid JSON: {e}") from e

    def save_config(self, config: Dict[str, Any]) -> str:
        return self.write_json(self.CONFIG_FILE, config)

    def save_assignments(self, name: str, assignments: Sequence[ClusterAssignment]) -> str:
        payload = {"videos": [a.to_dict() for a in sorted(assignments, key=lambda a: a.video_id)]}
        filepath = self.write_json(name, payload)
        self.logger.info(f"Saved assignments for {len(assignments)} videos to {filepath}")
        return filepath

    def load_assignments(self, filepath: str) -> List[ClusterAssignment]:
        raw = self.read_json(filepath)
        if not isinstance(raw, dict) or not isinstance(raw.get("videos"), list):
            raise DataError(f"{filepath} must hold an object with a 'videos' list")
        assignments = [ClusterAssignment.from_dict(row) for row in raw["videos"]]
        self.logger.info(f"Loaded assignments for {len(assignments)} videos from {filepath}")
        return assignments

    def save_report(self, name: str, report: EvalReport) -> str:
        filepath = self.write_json(name, report.to_dict())
        self.logger.info(f"Saved report to {filepath}: FR {report.fr_macro:.3f} ± {report.fr_std:.3f}, "
                         f"FPR {report.fpr_pooled:.4f}")
        return filepath

    def load_report(self, filepath: str) -> EvalReport:
        raw = self.read_json(filepath)
        if not isinstance(raw, dict):
            raise DataError(f"{filepath} must hold a report object")
        return EvalReport.from_dict(raw)
