"""
Annotation ingestion and ground-truth tracklet construction.

Tracklets are built directly from the annotations: a tracklet is a maximal run
of consecutive frames of one polyp entity whose boxes overlap by at least
``iou_min`` between neighbouring frames.
"""

import json
import logging
import time
from collections import Counter, defaultdict
from itertools import groupby
from typing import Dict, Iterable, List, Optional, Sequence

import yaml

from src.errors import (AnnotationParseError, ConfigError, DataError,
                        DuplicateAnnotationError, InvalidBoxError)
from src.models import (SPLIT_NAMES, BBox, FrameAnnotation, SplitManifest,
                        SplitSummary, Tracklet, VideoRecord, cohort_of,
                        make_tracklet_id)

logger = logging.getLogger(__name__)

ANNOTATION_FIELDS = ("video_id", "frame_idx", "entity_id", "bbox")


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes"""
    if a.area <= 0 or b.area <= 0:
        raise InvalidBoxError(f"Cannot compute IoU of a degenerate box: {a} / {b}")
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def _find_duplicates(annotations: Iterable[FrameAnnotation]) -> List[tuple]:
    counts = Counter(a.key for a in annotations)
    return sorted(key for key, count in counts.items() if count > 1)


def _split_group(video_id: str, entity_id: str, rows: Sequence[FrameAnnotation],
                 iou_min: float) -> List[Tracklet]:
    runs: List[List[FrameAnnotation]] = []
    for row in rows:
        if runs:
            prev = runs[-1][-1]
            if row.frame_idx == prev.frame_idx + 1 and iou(prev.box, row.box) >= iou_min:
                runs[-1].append(row)
                continue
        runs.append([row])

    return [
        Tracklet(
            tracklet_id=make_tracklet_id(video_id, entity_id, run[0].frame_idx),
            video_id=video_id,
            entity_id=entity_id,
            frames=tuple((r.frame_idx, r.box) for r in run),
        )
        for run in runs
    ]


def build_tracklets(annotations: Sequence[FrameAnnotation], iou_min: float = 0.1) -> List[Tracklet]:
    """Partition annotations into maximal IoU-linked runs of consecutive frames.

    A new tracklet starts whenever the frame index is not the predecessor + 1
    or the IoU with the previous frame's box falls below ``iou_min``. Output
    order and ids only depend on the annotation set, not on its order.
    """
    if not 0.0 <= iou_min <= 1.0:
        raise ConfigError("IOU_MIN must be between 0 and 1")

    duplicates = _find_duplicates(annotations)
    if duplicates:
        logger.error(f"Rejecting annotation set with {len(duplicates)} duplicate rows")
        raise DuplicateAnnotationError(duplicates)

    start = time.time()
    ordered = sorted(annotations, key=lambda a: (a.video_id, a.entity_id, a.frame_idx))
    tracklets: List[Tracklet] = []
    for (video_id, entity_id), group in groupby(ordered, key=lambda a: (a.video_id, a.entity_id)):
        tracklets.extend(_split_group(video_id, entity_id, list(group), iou_min))

    # tracklet ids sort by video, entity then start frame
    tracklets.sort(key=lambda t: t.tracklet_id)
    logger.info(f"Built {len(tracklets)} tracklets from {len(ordered)} annotations "
                f"in {time.time() - start:.2f}s")
    return tracklets


def build_videos(tracklets: Iterable[Tracklet], video_ids: Optional[Iterable[str]] = None) -> List[VideoRecord]:
    """Group tracklets into per-video records, sorted by video id.

    Videos listed in ``video_ids`` without any annotation still get an empty
    record; when ``video_ids`` is given, other videos are dropped.
    """
    by_video: Dict[str, List[Tracklet]] = defaultdict(list)
    for t in tracklets:
        by_video[t.video_id].append(t)

    wanted = sorted(set(video_ids)) if video_ids is not None else sorted(by_video)
    videos = []
    for vid in wanted:
        members = sorted(by_video.get(vid, []), key=lambda t: t.tracklet_id)
        if not members:
            logger.warning(f"Video {vid} has no annotated tracklets")
        videos.append(VideoRecord(video_id=vid, cohort=cohort_of(vid), tracklets=tuple(members)))
    return videos


def _parse_row(obj, path: str, line_no: int) -> FrameAnnotation:
    if not isinstance(obj, dict):
        raise AnnotationParseError(path, line_no, "row is not a JSON object")

    unknown = sorted(set(obj) - set(ANNOTATION_FIELDS))
    if unknown:
        raise AnnotationParseError(path, line_no, f"unknown field(s) {unknown}")
    missing = [f for f in ANNOTATION_FIELDS if f not in obj]
    if missing:
        raise AnnotationParseError(path, line_no, f"missing field(s) {missing}")

    video_id, frame_idx, entity_id, bbox = (obj[f] for f in ANNOTATION_FIELDS)
    if not isinstance(video_id, str) or not video_id:
        raise AnnotationParseError(path, line_no, "video_id must be a non-empty string")
    if not isinstance(entity_id, str) or not entity_id:
        raise AnnotationParseError(path, line_no, "entity_id must be a non-empty string")
    if isinstance(frame_idx, bool) or not isinstance(frame_idx, int) or frame_idx < 0:
        raise AnnotationParseError(path, line_no, "frame_idx must be a non-negative integer")
    if (not isinstance(bbox, list) or len(bbox) != 4
            or any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in bbox)):
        raise AnnotationParseError(path, line_no, "bbox must be an array of 4 numbers")

    try:
        box = BBox(*(float(v) for v in bbox))
    except InvalidBoxError as e:
        raise AnnotationParseError(path, line_no, str(e)) from e
    return FrameAnnotation(video_id=video_id, frame_idx=frame_idx, entity_id=entity_id, box=box)


def load_annotations(path: str) -> List[FrameAnnotation]:
    """Load a JSON Lines annotation file; blank lines are ignored"""
    logger.debug(f"Loading annotations from {path}")
    annotations = []
    try:
        with open(path, encoding="utf-8") as f:
            for line_no, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as e:
                    raise AnnotationParseError(path, line_no, f"invalid JSON ({e.msg})") from e
                annotations.append(_parse_row(obj, path, line_no))
    except OSError as e:
        logger.error(f"Failed to read annotations from {path}: {str(e)}")
        logger.error(f"Error type: {type(e).__name__}")
        raise DataError(f"Cannot read annotation file {path}: {e}") from e

    logger.info(f"Loaded {len(annotations)} annotations from {path}")
    return annotations


def write_annotations(path: str, annotations: Iterable[FrameAnnotation]) -> int:
    count = 0
    with open(path, "w", encoding="utf-8") as f:
        for a in annotations:
            row = {"video_id": a.video_id, "frame_idx": a.frame_idx,
                   "entity_id": a.entity_id, "bbox": a.box.as_list()}
            f.write(json.dumps(row) + "\n")
            count += 1
    logger.info(f"Wrote {count} annotations to {path}")
    return count


def load_split_manifest(path: str) -> Dict[str, SplitManifest]:
    """Load a {"train": [...], "val": [...], "test": [...]} manifest"""
    try:
        with open(path, encoding="utf-8") as f:
            raw = yaml.safe_load(f) or {}
    except (OSError, yaml.YAMLError) as e:
        raise ConfigError(f"Cannot read split manifest {path}: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError(f"Split manifest {path} must be an object of split → video ids")

    unknown = sorted(set(raw) - set(SPLIT_NAMES))
    if unknown:
        raise ConfigError(f"Split manifest {path} has unknown splits {unknown}")

    manifests = {}
    for name in SPLIT_NAMES:
        ids = raw.get(name) or []
        if not isinstance(ids, list) or not all(isinstance(v, str) for v in ids):
            raise ConfigError(f"Split {name} in {path} must be a list of video id strings")
        manifests[name] = SplitManifest(split_name=name, video_ids=tuple(ids))

    check_disjoint(manifests)
    logger.info("Loaded split manifest: " + ", ".join(
        f"{name}={len(m.video_ids)}" for name, m in manifests.items()))
    return manifests


def check_disjoint(manifests: Dict[str, SplitManifest]) -> None:
    names = sorted(manifests)
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            shared = set(manifests[a].video_ids) & set(manifests[b].video_ids)
            if shared:
                raise ConfigError(f"Splits {a} and {b} share video ids {sorted(shared)}")


def split_summary(videos: Sequence[VideoRecord]) -> SplitSummary:
    """Polyp and video counts of one split, broken down by cohort"""
    per_cohort = Counter(v.cohort for v in videos)
    return SplitSummary(
        n_videos=len(videos),
        n_polyps=sum(len(v.entity_ids) for v in videos),
        n_single_polyp_videos=sum(1 for v in videos if len(v.entity_ids) == 1),
        n_multi_polyp_videos=sum(1 for v in videos if len(v.entity_ids) >= 2),
        videos_per_cohort=tuple(sorted(per_cohort.items())),
    )
