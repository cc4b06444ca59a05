"""
Domain types for polyp tracklet re-association.

All types are frozen dataclasses so they can be shared freely between worker
threads and processes.
"""

import math
from dataclasses import dataclass, field
from typing import FrozenSet, Tuple

from src.errors import ConfigError, DataError, InvalidBoxError

SPLIT_NAMES = ("train", "val", "test")


@dataclass(frozen=True)
class BBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        coords = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(math.isfinite(c) for c in coords):
            raise InvalidBoxError(f"Box coordinates must be finite: {coords}")
        if any(c < 0 for c in coords):
            raise InvalidBoxError(f"Box coordinates must be >= 0: {coords}")
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise InvalidBoxError(f"Box has zero or negative area: {coords}")

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    def as_list(self) -> list:
        return [self.x_min, self.y_min, self.x_max, self.y_max]


@dataclass(frozen=True)
class FrameAnnotation:
    video_id: str
    frame_idx: int
    entity_id: str
    box: BBox

    @property
    def key(self) -> Tuple[str, int, str]:
        return (self.video_id, self.frame_idx, self.entity_id)


@dataclass(frozen=True)
class Tracklet:
    tracklet_id: str
    video_id: str
    entity_id: str
    frames: Tuple[Tuple[int, BBox], ...]

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def start_frame(self) -> int:
        return self.frames[0][0]

    @property
    def end_frame(self) -> int:
        return self.frames[-1][0]

    @property
    def frame_indices(self) -> Tuple[int, ...]:
        return tuple(idx for idx, _ in self.frames)


def make_tracklet_id(video_id: str, entity_id: str, start_frame: int) -> str:
    # zero padding keeps lexicographic order equal to temporal order
    return f"{video_id}:{entity_id}:{start_frame:06d}"


def cohort_of(video_id: str) -> str:
    """REAL-Colon video ids look like '003-012'; the prefix is the cohort"""
    return video_id.split("-", 1)[0] if "-" in video_id else ""


@dataclass(frozen=True)
class VideoRecord:
    video_id: str
    cohort: str
    tracklets: Tuple[Tracklet, ...] = ()
    entity_ids: FrozenSet[str] = field(default_factory=frozenset)

    def __post_init__(self):
        derived = frozenset(t.entity_id for t in self.tracklets)
        if self.entity_ids and self.entity_ids != derived:
            raise DataError(f"entity_ids of video {self.video_id} do not match its tracklets")
        object.__setattr__(self, "entity_ids", derived)

    @property
    def tracklet_ids(self) -> Tuple[str, ...]:
        return tuple(t.tracklet_id for t in self.tracklets)

    @property
    def n_annotations(self) -> int:
        return sum(len(t) for t in self.tracklets)


@dataclass(frozen=True)
class SplitManifest:
    split_name: str
    video_ids: Tuple[str, ...]

    def __post_init__(self):
        if self.split_name not in SPLIT_NAMES:
            raise ConfigError(f"Split name must be one of {SPLIT_NAMES}, got {self.split_name!r}")
        if len(set(self.video_ids)) != len(self.video_ids):
            seen, dups = set(), []
            for vid in self.video_ids:
                if vid in seen:
                    dups.append(vid)
                seen.add(vid)
            raise ConfigError(f"Split {self.split_name} lists duplicate video ids: {sorted(set(dups))}")


@dataclass(frozen=True)
class SplitSummary:
    n_videos: int
    n_polyps: int
    n_single_polyp_videos: int
    n_multi_polyp_videos: int
    videos_per_cohort: Tuple[Tuple[str, int], ...]

    def to_dict(self) -> dict:
        return {
            "n_videos": self.n_videos,
            "n_polyps": self.n_polyps,
            "n_single_polyp_videos": self.n_single_polyp_videos,
            "n_multi_polyp_videos": self.n_multi_polyp_videos,
            "videos_per_cohort": "/".join(str(count) for _, count in self.videos_per_cohort),
        }
