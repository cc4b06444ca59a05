"""
Best-effort converter from the REAL-Colon release layout to annotation JSONL.

Assumed layout (to be confirmed against the released dataset):

    <root>/<video_id>_annotations/<video_id>_<frame_idx>.xml

Each XML file is Pascal-VOC style. Every ``<object>`` is one polyp box:

    <object>
        <name>lesion</name>
        <unique_id>001-001_1</unique_id>     polyp identity within the video
        <bndbox><xmin/><ymin/><xmax/><ymax/></bndbox>
    </object>

When ``unique_id`` is absent the ``name`` element is used as entity id.
Frames without objects produce no rows.
"""

import glob
import logging
import os
import re
import xml.etree.ElementTree as ET
from typing import Iterator, List

from src.errors import DataError, InvalidBoxError
from src.models import BBox, FrameAnnotation
from src.tracklets import write_annotations

logger = logging.getLogger(__name__)

FRAME_FILE_RE = re.compile(r"^(?P<video>.+)_(?P<frame>\d+)\.xml$")


def _text(node, tag: str):
    child = node.find(tag)
    return child.text.strip() if child is not None and child.text else None


def parse_frame_xml(path: str) -> List[FrameAnnotation]:
    match = FRAME_FILE_RE.match(os.path.basename(path))
    if not match:
        raise DataError(f"Unexpected annotation file name: {path}")
    video_id, frame_idx = match.group("video"), int(match.group("frame"))

    try:
        root = ET.parse(path).getroot()
    except ET.ParseError as e:
        raise DataError(f"Malformed XML in {path}: {e}") from e

    rows = []
    for obj in root.iter("object"):
        entity_id = _text(obj, "unique_id") or _text(obj, "name")
        bndbox = obj.find("bndbox")
        if entity_id is None or bndbox is None:
            raise DataError(f"Object without identity or bndbox in {path}")
        try:
            box = BBox(*(float(_text(bndbox, tag)) for tag in ("xmin", "ymin", "xmax", "ymax")))
        except (TypeError, ValueError, InvalidBoxError) as e:
            raise DataError(f"Invalid bndbox in {path}: {e}") from e
        rows.append(FrameAnnotation(video_id=video_id, frame_idx=frame_idx, entity_id=entity_id, box=box))
    return rows


def iter_real_colon(annotation_dir: str) -> Iterator[FrameAnnotation]:
    pattern = os.path.join(annotation_dir, "*_annotations", "*.xml")
    files = sorted(glob.glob(pattern))
    logger.info(f"Found {len(files)} frame annotation files under {annotation_dir}")
    for path in files:
        yield from parse_frame_xml(path)


def convert_real_colon(annotation_dir: str, out_path: str) -> int:
    """Convert a REAL-Colon annotation tree to JSONL, returning the row count"""
    if not os.path.isdir(annotation_dir):
        raise DataError(f"Annotation directory does not exist: {annotation_dir}")
    return write_annotations(out_path, iter_real_colon(annotation_dir))
