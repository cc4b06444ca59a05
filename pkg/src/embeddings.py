"""
Appearance embeddings at frame and tracklet granularity.

Frame tables are keyed by (video_id, frame_idx, entity_id) and are fused into a
tracklet vector by averaging every ``stride``-th frame of the tracklet.
Tracklet tables (sequence encoders) are keyed by tracklet id and used as-is.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Hashable, List, Mapping, Sequence, Tuple

import numpy as np

from src.errors import ConfigError, DataError, MissingEmbeddingError
from src.models import (BBox, FrameAnnotation, Tracklet, VideoRecord,
                        make_tracklet_id)

logger = logging.getLogger(__name__)

FRAME = "frame"
TRACKLET = "tracklet"
GRANULARITIES = (FRAME, TRACKLET)


def frame_key_to_str(key: Tuple[str, int, str]) -> str:
    video_id, frame_idx, entity_id = key
    return f"{video_id}/{frame_idx}/{entity_id}"


def parse_frame_key(text: str) -> Tuple[str, int, str]:
    parts = text.split("/")
    if len(parts) != 3 or not parts[1].isdigit():
        raise DataError(f"Frame key must look like 'video_id/frame_idx/entity_id', got {text!r}")
    return parts[0], int(parts[1]), parts[2]


@dataclass(frozen=True)
class EmbeddingTable:
    dim: int
    granularity: str
    entries: Mapping[Hashable, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.granularity not in GRANULARITIES:
            raise DataError(f"Granularity must be one of {GRANULARITIES}, got {self.granularity!r}")
        if self.dim < 1:
            raise DataError("Embedding dim must be a positive integer")

        entries = {}
        for key, vec in self.entries.items():
            arr = np.asarray(vec, dtype=np.float64)
            if arr.shape != (self.dim,):
                raise DataError(f"Embedding for {key!r} has shape {arr.shape}, expected ({self.dim},)")
            if not np.all(np.isfinite(arr)):
                raise DataError(f"Embedding for {key!r} has non-finite components")
            if self.granularity == FRAME and not (isinstance(key, tuple) and len(key) == 3):
                raise DataError(f"Frame-granularity keys must be (video_id, frame_idx, entity_id), got {key!r}")
            if self.granularity == TRACKLET and not isinstance(key, str):
                raise DataError(f"Tracklet-granularity keys must be tracklet id strings, got {key!r}")
            arr.setflags(write=False)
            entries[key] = arr
        object.__setattr__(self, "entries", entries)

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, key) -> bool:
        return key in self.entries

    def get(self, key) -> np.ndarray:
        try:
            return self.entries[key]
        except KeyError:
            raise MissingEmbeddingError(key) from None


def selected_positions(length: int, stride: int) -> range:
    """Positions 0, s, 2s, ... inside a tracklet of the given length"""
    if stride < 1:
        raise ConfigError("STRIDE must be a positive integer")
    return range(0, length, stride)


def aggregate_tracklet(tracklet: Tracklet, table: EmbeddingTable, stride: int = 4) -> np.ndarray:
    """Mean of the frame embeddings at tracklet positions 0, s, 2s, ..."""
    if table.granularity != FRAME:
        raise DataError("aggregate_tracklet needs a frame-granularity table")
    vectors = []
    for pos in selected_positions(len(tracklet), stride):
        frame_idx = tracklet.frames[pos][0]
        vectors.append(table.get((tracklet.video_id, frame_idx, tracklet.entity_id)))
    return np.mean(np.stack(vectors), axis=0)


def tracklet_embeddings(video: VideoRecord, table: EmbeddingTable, stride: int = 4) -> Dict[str, np.ndarray]:
    if table.granularity == TRACKLET:
        return {t.tracklet_id: table.get(t.tracklet_id) for t in video.tracklets}
    return {t.tracklet_id: aggregate_tracklet(t, table, stride) for t in video.tracklets}


@dataclass(frozen=True)
class SynthConfig:
    dim: int = 32
    n_videos: int = 10
    entities_per_video: int = 3
    tracklets_per_entity: int = 5
    frames_per_tracklet: int = 8
    intra_sigma: float = 0.1
    inter_sep: float = 1.0
    seed: int = 0
    n_cohorts: int = 4
    gap_frames: int = 2
    max_center_attempts: int = 1000

    def validate(self) -> None:
        for name in ("dim", "n_videos", "entities_per_video", "tracklets_per_entity",
                     "frames_per_tracklet", "n_cohorts", "gap_frames", "max_center_attempts"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name.upper()} must be a positive integer")
        if not self.intra_sigma > 0:
            raise ConfigError("INTRA_SIGMA must be > 0")
        if not self.inter_sep > 0:
            raise ConfigError("INTER_SEP must be > 0")


SYNTH_BOX = BBox(40.0, 40.0, 200.0, 200.0)


def _entity_centers(cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    centers: List[np.ndarray] = []
    for _ in range(cfg.entities_per_video):
        for _attempt in range(cfg.max_center_attempts):
            candidate = rng.normal(0.0, cfg.inter_sep, size=cfg.dim)
            if all(np.linalg.norm(candidate - c) >= cfg.inter_sep for c in centers):
                centers.append(candidate)
                break
        else:
            raise ConfigError(
                f"Cannot place {cfg.entities_per_video} entity centers at separation "
                f"{cfg.inter_sep} in dim {cfg.dim}"
            )
    return np.stack(centers)


def synthesize(cfg: SynthConfig) -> Tuple[List[VideoRecord], EmbeddingTable]:
    """Generate videos with known entity structure and frame embeddings.

    Each entity gets a center separated from the others by at least
    ``inter_sep``; frame embeddings are the center plus isotropic Gaussian noise
    of scale ``intra_sigma``. Tracklets of all entities are laid out one after
    another in time with ``gap_frames`` empty frames between them, so the
    annotations rebuild exactly the same tracklets.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    videos: List[VideoRecord] = []
    entries: Dict[tuple, np.ndarray] = {}

    for v in range(cfg.n_videos):
        video_id = f"{v % cfg.n_cohorts + 1:03d}-{v + 1:03d}"
        centers = _entity_centers(cfg, rng)
        entity_ids = [f"p{e + 1}" for e in range(cfg.entities_per_video)]

        tracklets = []
        cursor = 0
        for _round in range(cfg.tracklets_per_entity):
            for e, entity_id in enumerate(entity_ids):
                frames = tuple((cursor + k, SYNTH_BOX) for k in range(cfg.frames_per_tracklet))
                noise = rng.normal(0.0, cfg.intra_sigma, size=(cfg.frames_per_tracklet, cfg.dim))
                for (frame_idx, _), vec in zip(frames, centers[e] + noise):
                    entries[(video_id, frame_idx, entity_id)] = vec
                tracklets.append(Tracklet(
                    tracklet_id=make_tracklet_id(video_id, entity_id, cursor),
                    video_id=video_id,
                    entity_id=entity_id,
                    frames=frames,
                ))
                cursor += cfg.frames_per_tracklet + cfg.gap_frames

        tracklets.sort(key=lambda t: t.tracklet_id)
        videos.append(VideoRecord(video_id=video_id, cohort=f"{v % cfg.n_cohorts + 1:03d}",
                                  tracklets=tuple(tracklets)))

    videos.sort(key=lambda vr: vr.video_id)
    logger.info(f"Synthesized {len(videos)} videos with {len(entries)} frame embeddings (seed={cfg.seed})")
    return videos, EmbeddingTable(dim=cfg.dim, granularity=FRAME, entries=entries)


def synthesize_annotations(videos: Sequence[VideoRecord]) -> List[FrameAnnotation]:
    return [
        FrameAnnotation(video_id=t.video_id, frame_idx=frame_idx, entity_id=t.entity_id, box=box)
        for v in videos for t in v.tracklets for frame_idx, box in t.frames
    ]
