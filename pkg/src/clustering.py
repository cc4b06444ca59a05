"""
Tracklet re-association: clustering configuration, assignments, and the
threshold and agglomerative algorithms. HDBSCAN lives in ``src.density`` and
affinity propagation in ``src.affinity``; ``cluster`` dispatches to all four.
"""

import logging
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Dict, List, Mapping, Optional, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from src.errors import ConfigError, DataError
from src.similarity import SimilarityMatrix
from src.utils import parallel_map

logger = logging.getLogger(__name__)

ALGORITHMS = ("threshold", "agglomerative", "hdbscan", "affinity_propagation")
LINKAGES = ("single", "complete", "average")


@dataclass(frozen=True)
class ClusteringConfig:
    algorithm: str = "affinity_propagation"
    # threshold
    lam: float = 0.5
    # agglomerative
    linkage: str = "average"
    distance_cutoff: float = 1.0
    # hdbscan
    min_cluster_size: int = 2
    min_samples: int = 1
    allow_single_cluster: bool = False
    # affinity propagation
    preference_quantile: float = 0.5
    damping: float = 0.9
    max_iter: int = 1000
    convergence_iter: int = 50
    jitter_seed: int = 0
    refine_exemplars: bool = True

    def validate(self) -> "ClusteringConfig":
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"ALGORITHM must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if self.algorithm == "threshold" and not 0.0 <= self.lam <= 1.0:
            raise ConfigError("LAMBDA must be between 0 and 1")
        if self.algorithm == "agglomerative":
            if self.linkage not in LINKAGES:
                raise ConfigError(f"LINKAGE must be one of {LINKAGES}, got {self.linkage!r}")
            if not np.isfinite(self.distance_cutoff):
                raise ConfigError("DISTANCE_CUTOFF must be a finite number")
        if self.algorithm == "hdbscan":
            if self.min_cluster_size < 2:
                raise ConfigError("MIN_CLUSTER_SIZE must be >= 2")
            if self.min_samples < 1:
                raise ConfigError("MIN_SAMPLES must be >= 1")
        if self.algorithm == "affinity_propagation":
            if not 0.0 <= self.preference_quantile <= 1.0:
                raise ConfigError("PREFERENCE_QUANTILE must be between 0 and 1")
            if not 0.5 <= self.damping < 1.0:
                raise ConfigError("DAMPING must be in [0.5, 1)")
            if self.max_iter < 1 or self.convergence_iter < 1:
                raise ConfigError("MAX_ITER and CONVERGENCE_ITER must be positive integers")
        return self

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "ClusteringConfig":
        raw = dict(raw)
        if "lambda" in raw:
            raw["lam"] = raw.pop("lambda")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - set(known))
        if unknown:
            raise ConfigError(f"Unknown clustering option(s) {unknown}")
        defaults = cls()
        coerced = {}
        for name, value in raw.items():
            kind = type(getattr(defaults, name))
            try:
                if kind is bool and isinstance(value, str):
                    coerced[name] = value.strip().lower() in ("1", "true", "yes")
                else:
                    coerced[name] = kind(value)
            except (TypeError, ValueError) as e:
                raise ConfigError(f"Invalid value {value!r} for clustering option {name}") from e
        return replace(defaults, **coerced).validate()

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def summary(self) -> Dict[str, Any]:
        """Only the fields the selected algorithm consults"""
        keys = {
            "threshold": ("lam",),
            "agglomerative": ("linkage", "distance_cutoff"),
            "hdbscan": ("min_cluster_size", "min_samples", "allow_single_cluster"),
            "affinity_propagation": ("preference_quantile", "damping", "max_iter",
                                     "convergence_iter", "jitter_seed", "refine_exemplars"),
        }[self.algorithm]
        return {"algorithm": self.algorithm, **{k: getattr(self, k) for k in keys}}


@dataclass(frozen=True)
class ClusterAssignment:
    video_id: str
    assignment: Mapping[str, int] = field(default_factory=dict)
    converged: bool = True

    @property
    def n_clusters(self) -> int:
        return len(set(self.assignment.values()))

    def clusters(self) -> Dict[int, list]:
        groups: Dict[int, list] = {}
        for tid in sorted(self.assignment):
            groups.setdefault(self.assignment[tid], []).append(tid)
        return groups

    def to_dict(self) -> Dict[str, Any]:
        return {
            "video_id": self.video_id,
            "clusters": {tid: int(self.assignment[tid]) for tid in sorted(self.assignment)},
            "converged": bool(self.converged),
        }

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "ClusterAssignment":
        try:
            return cls(video_id=str(raw["video_id"]),
                       assignment={str(k): int(v) for k, v in raw["clusters"].items()},
                       converged=bool(raw.get("converged", True)))
        except (KeyError, TypeError, ValueError, AttributeError) as e:
            raise DataError(f"Malformed cluster assignment: {e}") from e


def assignment_from_labels(video_id: str, tracklet_ids: Sequence[str], labels: Sequence[int],
                           converged: bool = True) -> ClusterAssignment:
    """Relabel clusters 0, 1, ... in order of first appearance"""
    remap: Dict[int, int] = {}
    assignment = {}
    for tid, label in zip(tracklet_ids, labels):
        label = int(label)
        if label not in remap:
            remap[label] = len(remap)
        assignment[tid] = remap[label]
    return ClusterAssignment(video_id=video_id, assignment=assignment, converged=converged)


def identity_assignment(video_id: str, tracklet_ids: Sequence[str]) -> ClusterAssignment:
    return assignment_from_labels(video_id, tracklet_ids, range(len(tracklet_ids)))


def _require(m: SimilarityMatrix, attr: str, algorithm: str) -> np.ndarray:
    values = getattr(m, attr)
    if values is None:
        raise DataError(f"{algorithm} clustering needs the matrix {attr} to be filled")
    return values


def cluster_threshold(m: SimilarityMatrix, lam: float, video_id: str = "") -> ClusterAssignment:
    """Connected components of the graph {(i, j): i != j, S_ij >= lam}"""
    S = _require(m, "similarities", "threshold")
    n = len(m)
    if n == 0:
        return ClusterAssignment(video_id=video_id)
    adjacency = S >= lam
    np.fill_diagonal(adjacency, False)
    _, labels = connected_components(csr_matrix(adjacency), directed=False)
    return assignment_from_labels(video_id, m.tracklet_ids, labels)


def cluster_agglomerative(m: SimilarityMatrix, linkage: str, distance_cutoff: float,
                          video_id: str = "") -> ClusterAssignment:
    """Bottom-up merging on D until the closest pair of clusters is farther than the cutoff.

    Clusters occupy the slot of their smallest member; among equal linkage
    distances the smallest (i, j) slot pair merges first. Average linkage keeps
    the sum of cross-cluster distances so the mean is exact at every step.
    """
    if linkage not in LINKAGES:
        raise ConfigError(f"LINKAGE must be one of {LINKAGES}, got {linkage!r}")
    D = _require(m, "distances", "agglomerative")
    n = len(m)
    if n == 0:
        return ClusterAssignment(video_id=video_id)

    # for average linkage `pair` holds distance sums, otherwise the linkage itself
    pair = D.astype(np.float64).copy()
    sizes = np.ones(n)
    active = np.ones(n, dtype=bool)
    labels = np.arange(n)
    upper = np.triu(np.ones((n, n), dtype=bool), k=1)

    for _ in range(n - 1):
        if linkage == "average":
            link = pair / np.outer(sizes, sizes)
        else:
            link = pair
        candidates = np.where(upper & active[:, None] & active[None, :], link, np.inf)
        flat = int(np.argmin(candidates))
        i, j = divmod(flat, n)
        if not candidates[i, j] <= distance_cutoff:
            break

        if linkage == "single":
            merged = np.minimum(pair[i], pair[j])
        elif linkage == "complete":
            merged = np.maximum(pair[i], pair[j])
        else:
            merged = pair[i] + pair[j]
        pair[i, :] = merged
        pair[:, i] = merged
        pair[i, i] = 0.0
        sizes[i] += sizes[j]
        active[j] = False
        labels[labels == j] = i

    return assignment_from_labels(video_id, m.tracklet_ids, labels)


def cluster(m: SimilarityMatrix, cfg: ClusteringConfig, video_id: str = "") -> ClusterAssignment:
    """Run the algorithm selected by ``cfg`` on one video's matrix"""
    cfg.validate()
    if len(m) == 0:
        return ClusterAssignment(video_id=video_id)

    if cfg.algorithm == "threshold":
        return cluster_threshold(m, cfg.lam, video_id)
    if cfg.algorithm == "agglomerative":
        return cluster_agglomerative(m, cfg.linkage, cfg.distance_cutoff, video_id)
    if cfg.algorithm == "hdbscan":
        from src.density import cluster_hdbscan
        return cluster_hdbscan(m, cfg.min_cluster_size, cfg.min_samples,
                               allow_single_cluster=cfg.allow_single_cluster, video_id=video_id)

    from src.affinity import cluster_affinity_propagation
    return cluster_affinity_propagation(m, cfg.preference_quantile, cfg.damping, cfg.max_iter,
                                        cfg.convergence_iter, cfg.jitter_seed,
                                        refine=cfg.refine_exemplars, video_id=video_id)


def cluster_videos(matrices: Sequence[SimilarityMatrix], video_ids: Sequence[str], cfg: ClusteringConfig,
                   parallelism: Optional[int] = 1) -> List[ClusterAssignment]:
    """Cluster each video's matrix independently; results in input order"""
    if len(matrices) != len(video_ids):
        raise DataError(f"Got {len(matrices)} matrices for {len(video_ids)} videos")
    cfg.validate()
    return parallel_map(lambda pair: cluster(pair[0], cfg, pair[1]), list(zip(matrices, video_ids)), parallelism)
