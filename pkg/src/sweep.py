"""
Hyperparameter sweep on the validation split.

Every grid point is clustered and evaluated on the same precomputed similarity
matrices; the operating point is the config whose pooled FPR is closest to the
target rho (or, in cap mode, the most merging config under rho).
"""

import itertools
import logging
import time
from dataclasses import dataclass, fields, replace
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

from src.clustering import ClusteringConfig, cluster_videos
from src.embeddings import EmbeddingTable
from src.errors import ConfigError
from src.evaluation import EvalReport, evaluate
from src.models import VideoRecord
from src.similarity import SimilarityMatrix, build_matrices
from src.utils import parallel_map

logger = logging.getLogger(__name__)

SWEEP_MODES = ("closest_to_rho", "max_merge_under_cap")


@dataclass(frozen=True)
class SweepGrid:
    algorithm: str
    axes: Tuple[Tuple[str, Tuple[Any, ...]], ...]

    def validate(self) -> "SweepGrid":
        if not self.axes:
            raise ConfigError("SWEEP axes must not be empty")
        known = {f.name for f in fields(ClusteringConfig)}
        for name, values in self.axes:
            if name not in known or name == "algorithm":
                raise ConfigError(f"Unknown sweep axis {name!r}")
            if not values:
                raise ConfigError(f"Sweep axis {name} has no values")
        for cfg in self.configs():
            cfg.validate()
        return self

    def configs(self, base: Optional[ClusteringConfig] = None) -> List[ClusteringConfig]:
        """Grid points in row-major order of the axes as given"""
        base = replace(base or ClusteringConfig(), algorithm=self.algorithm)
        names = [name for name, _ in self.axes]
        return [replace(base, **dict(zip(names, combo)))
                for combo in itertools.product(*(values for _, values in self.axes))]

    def __len__(self) -> int:
        size = 1
        for _, values in self.axes:
            size *= len(values)
        return size

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "SweepGrid":
        """{"algorithm": ..., "axes": {name: [values]}}; "lambda" is accepted for lam"""
        if not isinstance(raw, Mapping) or "algorithm" not in raw:
            raise ConfigError("SWEEP must be a mapping with an 'algorithm' key")
        axes_raw = raw.get("axes") or {}
        if not isinstance(axes_raw, Mapping):
            raise ConfigError("SWEEP axes must be a mapping of option name to value list")
        defaults = ClusteringConfig()
        axes = []
        for name, values in axes_raw.items():
            name = "lam" if name == "lambda" else str(name)
            if not isinstance(values, (list, tuple)):
                values = [values]
            kind = type(getattr(defaults, name, None))
            try:
                if kind in (int, float):
                    values = [kind(v) for v in values]
            except (TypeError, ValueError) as e:
                raise ConfigError(f"Invalid value in sweep axis {name}: {e}") from e
            axes.append((name, tuple(values)))
        return cls(algorithm=str(raw["algorithm"]), axes=tuple(axes)).validate()

    def to_dict(self) -> Dict[str, Any]:
        return {"algorithm": self.algorithm, "axes": {name: list(values) for name, values in self.axes}}


def evaluate_config(cfg: ClusteringConfig, videos: Sequence[VideoRecord], matrices: Sequence[SimilarityMatrix],
                    rho: float, fpr_convention: str = "pooled", std_convention: str = "population") -> EvalReport:
    assignments = cluster_videos(matrices, [v.video_id for v in videos], cfg)
    return evaluate(assignments, videos, rho, config=cfg,
                    fpr_convention=fpr_convention, std_convention=std_convention)


def evaluate_grid(configs: Sequence[ClusteringConfig], videos: Sequence[VideoRecord],
                  matrices: Sequence[SimilarityMatrix], rho: float, fpr_convention: str = "pooled",
                  std_convention: str = "population", parallelism: Optional[int] = 1) -> List[EvalReport]:
    """One report per config, in grid order"""
    if not configs:
        raise ConfigError("Cannot sweep an empty grid")
    start = time.time()
    reports = parallel_map(
        lambda cfg: evaluate_config(cfg, videos, matrices, rho, fpr_convention, std_convention),
        configs, parallelism)
    logger.info(f"Evaluated {len(reports)} grid points on {len(videos)} videos in {time.time() - start:.2f}s")
    return reports


def select_operating_point(reports: Sequence[EvalReport], rho: float, mode: str = "closest_to_rho") -> int:
    """Index of the winning grid point"""
    if mode not in SWEEP_MODES:
        raise ConfigError(f"SWEEP_MODE must be one of {SWEEP_MODES}, got {mode!r}")
    if not reports:
        raise ConfigError("Cannot select from an empty grid")

    if mode == "max_merge_under_cap":
        under = [k for k, r in enumerate(reports) if r.fpr_pooled <= rho]
        if under:
            return min(under, key=lambda k: (reports[k].fr_macro, k))
        logger.warning(f"No grid point reaches FPR <= {rho}; falling back to closest_to_rho")

    return min(range(len(reports)), key=lambda k: (abs(reports[k].fpr_pooled - rho), reports[k].fr_macro, k))


@dataclass(frozen=True)
class SweepOutcome:
    """Every grid point with its validation report, and the index of the winner"""
    configs: Tuple[ClusteringConfig, ...]
    reports: Tuple[EvalReport, ...]
    best: int

    @property
    def best_config(self) -> ClusteringConfig:
        return self.configs[self.best]

    @property
    def best_report(self) -> EvalReport:
        return self.reports[self.best]


def sweep_grid(grid: SweepGrid, videos_val: Sequence[VideoRecord], embeddings: EmbeddingTable, rho: float,
               mode: str = "closest_to_rho", stride: int = 4, metric: str = "euclidean",
               include_diagonal: bool = False, fpr_convention: str = "pooled", std_convention: str = "population",
               parallelism: Optional[int] = 1, base: Optional[ClusteringConfig] = None) -> SweepOutcome:
    """Evaluate the grid on the validation videos; grid points start from ``base``"""
    if not 0.0 < rho < 1.0:
        raise ConfigError("RHO must be between 0 and 1 (exclusive)")
    grid.validate()
    configs = [cfg.validate() for cfg in grid.configs(base)]
    matrices = build_matrices(videos_val, embeddings, stride, metric, include_diagonal, parallelism)
    reports = evaluate_grid(configs, videos_val, matrices, rho, fpr_convention, std_convention, parallelism)
    best = select_operating_point(reports, rho, mode)
    logger.info(f"Selected grid point {best + 1}/{len(configs)}: {configs[best].summary()} "
                f"(FR {reports[best].fr_macro:.3f}, FPR {reports[best].fpr_pooled:.4f})")
    return SweepOutcome(configs=tuple(configs), reports=tuple(reports), best=best)


def sweep(grid: SweepGrid, videos_val: Sequence[VideoRecord], embeddings: EmbeddingTable, rho: float,
          mode: str = "closest_to_rho", stride: int = 4, metric: str = "euclidean",
          include_diagonal: bool = False, fpr_convention: str = "pooled", std_convention: str = "population",
          parallelism: Optional[int] = 1, base: Optional[ClusteringConfig] = None) -> Tuple[ClusteringConfig, EvalReport]:
    """Pick the grid point for target FPR rho on the validation videos"""
    outcome = sweep_grid(grid, videos_val, embeddings, rho, mode, stride, metric, include_diagonal,
                         fpr_convention, std_convention, parallelism, base)
    return outcome.best_config, outcome.best_report
