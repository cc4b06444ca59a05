"""
Per-video pairwise distances D and min-max normalised similarities S.
"""

import csv
import logging
import time
from dataclasses import dataclass, replace
from typing import List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.distance import cdist

from src.embeddings import EmbeddingTable, tracklet_embeddings
from src.errors import ConfigError, DataError
from src.models import VideoRecord
from src.utils import parallel_map

logger = logging.getLogger(__name__)

METRICS = ("euclidean", "cosine")


@dataclass(frozen=True)
class SimilarityMatrix:
    tracklet_ids: Tuple[str, ...]
    distances: Optional[np.ndarray] = None
    similarities: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.tracklet_ids)


def distance_matrix(embeddings: Mapping[str, np.ndarray], metric: str = "euclidean") -> SimilarityMatrix:
    """Pairwise distances between tracklet embeddings, ids in lexicographic order"""
    if metric not in METRICS:
        raise ConfigError(f"METRIC must be one of {METRICS}, got {metric!r}")

    ids = tuple(sorted(embeddings))
    if not ids:
        return SimilarityMatrix(tracklet_ids=(), distances=np.zeros((0, 0)))

    dims = {np.asarray(embeddings[i]).shape for i in ids}
    if len(dims) != 1 or len(next(iter(dims))) != 1:
        raise DataError(f"Embeddings must be vectors of one dimension, got shapes {sorted(dims)}")
    X = np.stack([np.asarray(embeddings[i], dtype=np.float64) for i in ids])
    if not np.all(np.isfinite(X)):
        bad = [ids[k] for k in np.where(~np.all(np.isfinite(X), axis=1))[0]]
        raise DataError(f"Non-finite embedding for tracklets {bad}")
    if metric == "cosine" and np.any(np.linalg.norm(X, axis=1) == 0):
        raise DataError("Cosine distance is undefined for zero embeddings")

    D = cdist(X, X, metric=metric)
    # exact symmetry, zero diagonal and no negative rounding from cosine
    D = np.maximum((D + D.T) / 2.0, 0.0)
    np.fill_diagonal(D, 0.0)
    return SimilarityMatrix(tracklet_ids=ids, distances=D)


def normalize_similarity(m: SimilarityMatrix, include_diagonal: bool = False) -> SimilarityMatrix:
    """S = 1 - (D - d_min) / (d_max - d_min) with S_ii = 1.

    d_min/d_max come from the off-diagonal entries unless ``include_diagonal``
    is set, in which case the zero diagonal pins d_min to 0.
    """
    if m.distances is None:
        raise DataError("normalize_similarity needs a matrix with distances filled")
    D = m.distances
    n = D.shape[0]
    if n <= 1:
        return replace(m, similarities=np.ones((n, n)))

    values = D.ravel() if include_diagonal else D[~np.eye(n, dtype=bool)]
    d_min, d_max = float(values.min()), float(values.max())
    if d_max == d_min:
        S = np.ones((n, n))
    else:
        S = np.clip(1.0 - (D - d_min) / (d_max - d_min), 0.0, 1.0)
        np.fill_diagonal(S, 1.0)
    return replace(m, similarities=S)


def build_similarity(video: VideoRecord, table: EmbeddingTable, stride: int = 4,
                     metric: str = "euclidean", include_diagonal: bool = False) -> SimilarityMatrix:
    """Tracklet embeddings → D → S for one video"""
    embeddings = tracklet_embeddings(video, table, stride)
    m = normalize_similarity(distance_matrix(embeddings, metric), include_diagonal)
    logger.debug(f"Video {video.video_id}: similarity matrix over {len(m)} tracklets")
    return m


def dump_matrix(path: str, m: SimilarityMatrix, which: str = "similarities") -> None:
    """Write D or S as CSV with a header row of tracklet ids"""
    values = getattr(m, which)
    if values is None:
        raise DataError(f"Matrix has no {which} to dump")
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["tracklet_id"] + list(m.tracklet_ids))
        for tid, row in zip(m.tracklet_ids, values):
            writer.writerow([tid] + [f"{v:.6f}" for v in row])
    logger.debug(f"Dumped {which} matrix of size {len(m)} to {path}")


def build_matrices(videos: Sequence[VideoRecord], table: EmbeddingTable, stride: int = 4,
                   metric: str = "euclidean", include_diagonal: bool = False,
                   parallelism: Optional[int] = 1) -> List[SimilarityMatrix]:
    """build_similarity for every video, in video order"""
    start = time.time()
    matrices = parallel_map(
        lambda v: build_similarity(v, table, stride, metric, include_diagonal), videos, parallelism)
    logger.info(f"Built {len(matrices)} similarity matrices ({metric}, stride={stride}) "
                f"in {time.time() - start:.2f}s")
    return matrices
