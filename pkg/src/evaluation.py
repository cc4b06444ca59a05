"""
Counting metrics for re-associated tracklets.

FR (fragmentation rate) is |clusters| / |entities| per video and is
macro-averaged over videos; FPR (false positive rate) counts tracklets whose
entity differs from the majority entity of their cluster.
"""

import json
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from src.clustering import ClusterAssignment, ClusteringConfig, identity_assignment
from src.errors import ConfigError, CoverageError, DataError
from src.models import VideoRecord

logger = logging.getLogger(__name__)

FPR_CONVENTIONS = ("pooled", "per_video")
STD_CONVENTIONS = ("population", "sample")


@dataclass(frozen=True)
class VideoScore:
    video_id: str
    fr: float
    n_clusters: int
    n_entities: int
    n_tracklets: int
    n_false_positives: int

    def to_dict(self) -> Dict[str, Any]:
        return {
            "fr": self.fr,
            "n_clusters": self.n_clusters,
            "n_entities": self.n_entities,
            "n_tracklets": self.n_tracklets,
            "n_false_positives": self.n_false_positives,
        }


@dataclass(frozen=True)
class EvalReport:
    per_video: Mapping[str, VideoScore]
    fr_macro: float
    fr_std: float
    fpr_pooled: float
    rho: float
    config: Optional[ClusteringConfig] = None
    fpr_convention: str = "pooled"
    std_convention: str = "population"
    unconverged_videos: Tuple[str, ...] = field(default_factory=tuple)

    @property
    def n_videos(self) -> int:
        return len(self.per_video)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "per_video": {vid: self.per_video[vid].to_dict() for vid in sorted(self.per_video)},
            "fr_macro": self.fr_macro,
            "fr_std": self.fr_std,
            "fpr_pooled": self.fpr_pooled,
            "rho": self.rho,
            "config": self.config.to_dict() if self.config is not None else None,
            "conventions": {"fpr": self.fpr_convention, "std": self.std_convention},
            "unconverged_videos": list(self.unconverged_videos),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "EvalReport":
        try:
            per_video = {
                vid: VideoScore(video_id=vid, **{k: row[k] for k in (
                    "fr", "n_clusters", "n_entities", "n_tracklets", "n_false_positives")})
                for vid, row in raw["per_video"].items()
            }
            conventions = raw.get("conventions", {})
            return cls(
                per_video=per_video,
                fr_macro=float(raw["fr_macro"]),
                fr_std=float(raw["fr_std"]),
                fpr_pooled=float(raw["fpr_pooled"]),
                rho=float(raw["rho"]),
                config=ClusteringConfig.from_dict(raw["config"]) if raw.get("config") else None,
                fpr_convention=conventions.get("fpr", "pooled"),
                std_convention=conventions.get("std", "population"),
                unconverged_videos=tuple(raw.get("unconverged_videos", ())),
            )
        except (KeyError, TypeError, ValueError, AttributeError) as e:
            if isinstance(e, ConfigError):
                raise
            raise DataError(f"Malformed evaluation report: {e}") from e

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as e:
            raise DataError(f"Evaluation report is not valid JSON: {e}") from e
        return cls.from_dict(raw)


def no_reid_assignment(video: VideoRecord) -> ClusterAssignment:
    """Every tracklet on its own: the baseline without re-identification"""
    return identity_assignment(video.video_id, video.tracklet_ids)


def check_coverage(assignment: ClusterAssignment, video: VideoRecord) -> None:
    expected = set(video.tracklet_ids)
    got = set(assignment.assignment)
    if expected != got:
        raise CoverageError(video.video_id, expected - got, got - expected)


def fragmentation_rate(assignment: ClusterAssignment, video: VideoRecord) -> float:
    check_coverage(assignment, video)
    if not video.entity_ids:
        raise DataError(f"Video {video.video_id} has no entities; FR is undefined")
    return assignment.n_clusters / len(video.entity_ids)


def count_false_positives(assignment: ClusterAssignment, video: VideoRecord) -> int:
    """Tracklets whose entity is not the majority entity of their cluster.

    Majority: most member tracklets, then most frames, then the smallest entity id.
    """
    check_coverage(assignment, video)
    by_id = {t.tracklet_id: t for t in video.tracklets}
    false_positives = 0
    for members in assignment.clusters().values():
        counts: Dict[str, int] = defaultdict(int)
        frames: Dict[str, int] = defaultdict(int)
        for tid in members:
            t = by_id[tid]
            counts[t.entity_id] += 1
            frames[t.entity_id] += len(t)
        majority = min(counts, key=lambda e: (-counts[e], -frames[e], e))
        false_positives += len(members) - counts[majority]
    return false_positives


def _match(assignments: Sequence[ClusterAssignment],
           videos: Sequence[VideoRecord]) -> List[Tuple[ClusterAssignment, VideoRecord]]:
    by_video = {}
    for a in assignments:
        if a.video_id in by_video:
            raise DataError(f"More than one assignment for video {a.video_id}")
        by_video[a.video_id] = a
    known = {v.video_id for v in videos}
    extra = sorted(set(by_video) - known)
    if extra:
        raise DataError(f"Assignments for videos outside the split: {extra}")

    pairs = []
    for v in videos:
        if v.video_id not in by_video:
            raise CoverageError(v.video_id, v.tracklet_ids, ())
        pairs.append((by_video[v.video_id], v))
    return pairs


def false_positive_rate(assignments: Sequence[ClusterAssignment], videos: Sequence[VideoRecord],
                        convention: str = "pooled") -> float:
    """Pooled: Σ false positives / Σ tracklets. per_video: mean of per-video rates."""
    if convention not in FPR_CONVENTIONS:
        raise ConfigError(f"FPR_CONVENTION must be one of {FPR_CONVENTIONS}, got {convention!r}")
    pairs = _match(assignments, videos)
    fps = [count_false_positives(a, v) for a, v in pairs]
    sizes = [len(v.tracklets) for _, v in pairs]

    if convention == "pooled":
        total = sum(sizes)
        return sum(fps) / total if total else 0.0
    rates = [fp / n for fp, n in zip(fps, sizes) if n]
    return float(np.mean(rates)) if rates else 0.0


def evaluate(assignments: Sequence[ClusterAssignment], videos: Sequence[VideoRecord], rho: float,
             config: Optional[ClusteringConfig] = None, fpr_convention: str = "pooled",
             std_convention: str = "population") -> EvalReport:
    if not videos:
        raise DataError("Cannot evaluate an empty list of videos")
    if not 0.0 < rho < 1.0:
        raise ConfigError("RHO must be between 0 and 1 (exclusive)")
    if std_convention not in STD_CONVENTIONS:
        raise ConfigError(f"STD_CONVENTION must be one of {STD_CONVENTIONS}, got {std_convention!r}")

    pairs = _match(assignments, videos)
    scored = []
    for a, v in pairs:
        if not v.entity_ids:
            logger.warning(f"Skipping video {v.video_id}: no annotated entities")
            continue
        scored.append((a, v))
    if not scored:
        raise DataError("No video in the split has annotated entities")

    per_video = {}
    for a, v in scored:
        per_video[v.video_id] = VideoScore(
            video_id=v.video_id,
            fr=fragmentation_rate(a, v),
            n_clusters=a.n_clusters,
            n_entities=len(v.entity_ids),
            n_tracklets=len(v.tracklets),
            n_false_positives=count_false_positives(a, v),
        )

    frs = np.array([per_video[v.video_id].fr for _, v in scored])
    ddof = 1 if std_convention == "sample" and len(frs) > 1 else 0
    report = EvalReport(
        per_video=per_video,
        fr_macro=float(np.mean(frs)),
        fr_std=float(np.std(frs, ddof=ddof)),
        fpr_pooled=false_positive_rate([a for a, _ in scored], [v for _, v in scored], fpr_convention),
        rho=rho,
        config=config,
        fpr_convention=fpr_convention,
        std_convention=std_convention,
        unconverged_videos=tuple(sorted(a.video_id for a, _ in scored if not a.converged)),
    )
    logger.debug(f"Evaluated {len(per_video)} videos: FR {report.fr_macro:.3f} ± {report.fr_std:.3f}, "
                 f"FPR {report.fpr_pooled:.4f}")
    return report


def top1_accuracy(pairs: Sequence[Tuple[np.ndarray, np.ndarray]]) -> float:
    """Fraction of the 2N vectors whose cosine nearest neighbour is their pair partner.

    Ties go to the lowest index among the other vectors.
    """
    if len(pairs) < 2:
        raise DataError("top1_accuracy needs at least 2 pairs")
    try:
        X = np.stack([np.asarray(v, dtype=np.float64) for pair in pairs for v in pair])
    except ValueError as e:
        raise DataError(f"Pair vectors must share one dimension: {e}") from e
    if X.ndim != 2:
        raise DataError("Pair members must be 1-d vectors")

    norms = np.linalg.norm(X, axis=1)
    if np.any(norms == 0):
        raise DataError("Cosine similarity is undefined for zero vectors")
    U = X / norms[:, None]
    sims = U @ U.T
    np.fill_diagonal(sims, -np.inf)

    nearest = np.argmax(sims, axis=1)
    partners = np.arange(len(X)) ^ 1
    return float(np.mean(nearest == partners))
