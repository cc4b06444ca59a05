import os
import logging
from dataclasses import asdict, fields, replace
from typing import Any, Dict, Mapping, Optional

import yaml

from src.clustering import ClusteringConfig
from src.embeddings import SynthConfig
from src.errors import ConfigError
from src.evaluation import FPR_CONVENTIONS, STD_CONVENTIONS
from src.models import SPLIT_NAMES
from src.sampling import SamplingConfig
from src.similarity import METRICS
from src.sweep import SWEEP_MODES, SweepGrid

ENV_PREFIX = "POLYP_"
TRUE_VALUES = ("1", "true", "yes", "on")


def _as_bool(value: Any) -> bool:
    if isinstance(value, str):
        return value.strip().lower() in TRUE_VALUES
    return bool(value)


def _as_mapping(value: Any, name: str) -> Mapping[str, Any]:
    """Sections arrive as mappings from files and as JSON/YAML strings from env vars"""
    if isinstance(value, str):
        try:
            value = yaml.safe_load(value)
        except yaml.YAMLError as e:
            raise ConfigError(f"{name} is not valid JSON/YAML: {e}") from e
    if value is None:
        return {}
    if not isinstance(value, Mapping):
        raise ConfigError(f"{name} must be a mapping")
    return value


def synth_from_dict(raw: Mapping[str, Any]) -> SynthConfig:
    defaults = SynthConfig()
    known = {f.name for f in fields(SynthConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"Unknown synth option(s) {unknown}")
    try:
        values = {name: type(getattr(defaults, name))(value) for name, value in raw.items()}
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Invalid synth option: {e}") from e
    cfg = replace(defaults, **values)
    cfg.validate()
    return cfg


class RunConfig:
    def __init__(self):
        self.annotations_path: Optional[str] = None
        self.embeddings_path: Optional[str] = None
        self.manifest_path: Optional[str] = None
        self.assignments_path: Optional[str] = None
        self.output_dir: str = "runs/latest"
        self.split: str = "test"
        self.metric: str = "euclidean"
        self.stride: int = 4
        self.iou_min: float = 0.1
        self.include_diagonal: bool = False
        self.clustering: ClusteringConfig = ClusteringConfig()
        self.sweep: Optional[SweepGrid] = None
        self.rho: float = 0.05
        self.sweep_mode: str = "closest_to_rho"
        self.fpr_convention: str = "pooled"
        self.std_convention: str = "population"
        self.parallelism: int = os.cpu_count() or 1
        self.seed: int = 0
        self.strict_convergence: bool = False
        self.synth: SynthConfig = SynthConfig()
        self.sampling: SamplingConfig = SamplingConfig()
        self.sample_draws: int = 100
        self.dump_matrices: bool = False
        self.logger = logging.getLogger(__name__)

    def load(self, config_path: str = None, environ: Mapping[str, str] = None) -> None:
        """Load configuration from a YAML/JSON file and then POLYP_* environment variables"""
        if config_path:
            if not os.path.exists(config_path):
                raise ConfigError(f"Config file does not exist: {config_path}")
            try:
                with open(config_path) as f:
                    file_config = yaml.safe_load(f) or {}
            except yaml.YAMLError as e:
                raise ConfigError(f"Cannot parse config file {config_path}: {e}") from e
            if not isinstance(file_config, dict):
                raise ConfigError(f"Config file {config_path} must contain a mapping")
            self.logger.debug(f"Loaded configuration from {config_path}")
            self._update_from_dict({str(k).upper(): v for k, v in file_config.items()})

        environ = os.environ if environ is None else environ
        self._update_from_dict({k[len(ENV_PREFIX):]: v for k, v in environ.items() if k.startswith(ENV_PREFIX)})
        self._validate()

    def _update_from_dict(self, config: Mapping[str, Any]) -> None:
        """Update config from dictionary (config file or env vars, upper-case keys)"""
        try:
            if "ANNOTATIONS_PATH" in config: self.annotations_path = str(config["ANNOTATIONS_PATH"])
            if "EMBEDDINGS_PATH" in config: self.embeddings_path = str(config["EMBEDDINGS_PATH"])
            if "MANIFEST_PATH" in config: self.manifest_path = str(config["MANIFEST_PATH"])
            if "ASSIGNMENTS_PATH" in config: self.assignments_path = str(config["ASSIGNMENTS_PATH"])
            if "OUTPUT_DIR" in config: self.output_dir = str(config["OUTPUT_DIR"])
            if "SPLIT" in config: self.split = str(config["SPLIT"])
            if "METRIC" in config: self.metric = str(config["METRIC"])
            if "STRIDE" in config: self.stride = int(config["STRIDE"])
            if "IOU_MIN" in config: self.iou_min = float(config["IOU_MIN"])
            if "INCLUDE_DIAGONAL" in config: self.include_diagonal = _as_bool(config["INCLUDE_DIAGONAL"])
            if "RHO" in config: self.rho = float(config["RHO"])
            if "SWEEP_MODE" in config: self.sweep_mode = str(config["SWEEP_MODE"])
            if "FPR_CONVENTION" in config: self.fpr_convention = str(config["FPR_CONVENTION"])
            if "STD_CONVENTION" in config: self.std_convention = str(config["STD_CONVENTION"])
            if "PARALLELISM" in config: self.parallelism = int(config["PARALLELISM"])
            if "SEED" in config: self.seed = int(config["SEED"])
            if "STRICT_CONVERGENCE" in config: self.strict_convergence = _as_bool(config["STRICT_CONVERGENCE"])
            if "SAMPLE_DRAWS" in config: self.sample_draws = int(config["SAMPLE_DRAWS"])
            if "DUMP_MATRICES" in config: self.dump_matrices = _as_bool(config["DUMP_MATRICES"])
        except (TypeError, ValueError) as e:
            raise ConfigError(f"Invalid configuration value: {e}") from e

        if "CLUSTERING" in config:
            self.clustering = ClusteringConfig.from_dict(_as_mapping(config["CLUSTERING"], "CLUSTERING"))
        if "SWEEP" in config:
            raw = _as_mapping(config["SWEEP"], "SWEEP")
            self.sweep = SweepGrid.from_dict(raw) if raw else None
        if "SYNTH" in config:
            self.synth = synth_from_dict(_as_mapping(config["SYNTH"], "SYNTH"))
        if "SAMPLING" in config:
            self.sampling = SamplingConfig.from_dict(_as_mapping(config["SAMPLING"], "SAMPLING"))

    def apply_overrides(self, **overrides: Any) -> None:
        """Command-line flags win over file and environment; None means not given"""
        given = {name.upper(): value for name, value in overrides.items() if value is not None}
        if given:
            self.logger.debug(f"Applying command-line overrides: {sorted(given)}")
            self._update_from_dict(given)
        self._validate()

    def _validate(self) -> None:
        """Validate configuration values"""
        if not 0.0 < self.rho < 1.0:
            raise ConfigError("RHO must be between 0 and 1 (exclusive)")
        if self.stride < 1:
            raise ConfigError("STRIDE must be a positive integer")
        if not 0.0 <= self.iou_min <= 1.0:
            raise ConfigError("IOU_MIN must be between 0 and 1")
        if self.metric not in METRICS:
            raise ConfigError(f"METRIC must be one of {METRICS}")
        if self.split not in SPLIT_NAMES:
            raise ConfigError(f"SPLIT must be one of {SPLIT_NAMES}")
        if self.sweep_mode not in SWEEP_MODES:
            raise ConfigError(f"SWEEP_MODE must be one of {SWEEP_MODES}")
        if self.fpr_convention not in FPR_CONVENTIONS:
            raise ConfigError(f"FPR_CONVENTION must be one of {FPR_CONVENTIONS}")
        if self.std_convention not in STD_CONVENTIONS:
            raise ConfigError(f"STD_CONVENTION must be one of {STD_CONVENTIONS}")
        if self.parallelism < 1:
            raise ConfigError("PARALLELISM must be ≥1")
        if self.sample_draws < 1:
            raise ConfigError("SAMPLE_DRAWS must be ≥1")
        if not self.output_dir:
            raise ConfigError("OUTPUT_DIR must be specified")
        for name in ("annotations_path", "embeddings_path", "manifest_path", "assignments_path"):
            path = getattr(self, name)
            if path is not None and not os.path.exists(path):
                raise ConfigError(f"{name.upper()} does not exist: {path}")
        self.clustering.validate()

    def require(self, *names: str) -> None:
        """Fail with a config error if a command's input paths are unset"""
        missing = [name.upper() for name in names if getattr(self, name) is None]
        if missing:
            raise ConfigError(f"{', '.join(missing)} must be specified")

    def effective_clustering(self) -> ClusteringConfig:
        return replace(self.clustering, jitter_seed=self.seed)

    def effective_synth(self) -> SynthConfig:
        return replace(self.synth, seed=self.seed)

    def effective_sampling(self) -> SamplingConfig:
        return replace(self.sampling, seed=self.seed)

    def to_dict(self) -> Dict[str, Any]:
        """Resolved configuration snapshot; the run seed is folded into the sections"""
        return {
            "annotations_path": self.annotations_path,
            "embeddings_path": self.embeddings_path,
            "manifest_path": self.manifest_path,
            "assignments_path": self.assignments_path,
            "output_dir": self.output_dir,
            "split": self.split,
            "metric": self.metric,
            "stride": self.stride,
            "iou_min": self.iou_min,
            "include_diagonal": self.include_diagonal,
            "clustering": self.effective_clustering().to_dict(),
            "sweep": self.sweep.to_dict() if self.sweep is not None else None,
            "rho": self.rho,
            "sweep_mode": self.sweep_mode,
            "fpr_convention": self.fpr_convention,
            "std_convention": self.std_convention,
            "parallelism": self.parallelism,
            "seed": self.seed,
            "strict_convergence": self.strict_convergence,
            "synth": asdict(self.effective_synth()),
            "sampling": self.effective_sampling().to_dict(),
            "sample_draws": self.sample_draws,
            "dump_matrices": self.dump_matrices,
        }
