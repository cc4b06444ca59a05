"""
Embedding file reader/writer.

Binary layout (little-endian):

    magic      4 bytes  b"PEM1"
    gran       uint8    0 = frame, 1 = tracklet
    dim        uint32
    count      uint64
    count x record:
        key_len  uint16
        key      key_len bytes UTF-8 ("video_id/frame_idx/entity_id" for frames)
        vector   dim x float32

A CSV alternative (``key,v0,v1,...``, optional header row starting with
``key``) is accepted for small files.
"""

import csv
import logging
import os
import struct
from typing import Optional

import numpy as np

from src.embeddings import (FRAME, TRACKLET, EmbeddingTable, frame_key_to_str,
                            parse_frame_key)
from src.errors import DataError, EmbeddingFormatError

logger = logging.getLogger(__name__)

MAGIC = b"PEM1"
HEADER = struct.Struct("<4sBIQ")
KEY_LEN = struct.Struct("<H")
GRANULARITY_CODES = {FRAME: 0, TRACKLET: 1}
CODE_GRANULARITIES = {code: name for name, code in GRANULARITY_CODES.items()}


def _key_to_str(table: EmbeddingTable, key) -> str:
    return frame_key_to_str(key) if table.granularity == FRAME else key


def _sorted_items(table: EmbeddingTable):
    # written in key order so identical tables give identical bytes
    return sorted(table.entries.items(), key=lambda kv: _key_to_str(table, kv[0]))


def write_embeddings(path: str, table: EmbeddingTable) -> None:
    if path.lower().endswith(".csv"):
        _write_csv(path, table)
        return

    logger.debug(f"Writing {len(table)} {table.granularity} embeddings to {path}")
    try:
        with open(path, "wb") as f:
            f.write(HEADER.pack(MAGIC, GRANULARITY_CODES[table.granularity], table.dim, len(table)))
            for key, vec in _sorted_items(table):
                encoded = _key_to_str(table, key).encode("utf-8")
                if len(encoded) > 0xFFFF:
                    raise EmbeddingFormatError(f"Key too long for embedding file: {key!r}")
                f.write(KEY_LEN.pack(len(encoded)))
                f.write(encoded)
                f.write(np.asarray(vec, dtype="<f4").tobytes())
    except OSError as e:
        logger.error(f"Failed to write embeddings to {path}: {str(e)}")
        logger.error(f"Error type: {type(e).__name__}")
        raise
    logger.info(f"Wrote {len(table)} embeddings (dim={table.dim}) to {path}")


def _read_exact(f, size: int, what: str) -> bytes:
    data = f.read(size)
    if len(data) != size:
        raise EmbeddingFormatError(f"Truncated embedding file while reading {what}")
    return data


def _read_binary(path: str) -> EmbeddingTable:
    with open(path, "rb") as f:
        magic, code, dim, count = HEADER.unpack(_read_exact(f, HEADER.size, "header"))
        if magic != MAGIC:
            raise EmbeddingFormatError(f"{path} is not a PEM1 embedding file (magic={magic!r})")
        if code not in CODE_GRANULARITIES:
            raise EmbeddingFormatError(f"Unknown granularity code {code} in {path}")
        granularity = CODE_GRANULARITIES[code]

        entries = {}
        vec_bytes = 4 * dim
        for i in range(count):
            (key_len,) = KEY_LEN.unpack(_read_exact(f, KEY_LEN.size, f"key length of record {i}"))
            key_text = _read_exact(f, key_len, f"key of record {i}").decode("utf-8")
            vec = np.frombuffer(_read_exact(f, vec_bytes, f"vector of record {i}"), dtype="<f4")
            key = parse_frame_key(key_text) if granularity == FRAME else key_text
            if key in entries:
                raise EmbeddingFormatError(f"Duplicate embedding key {key_text!r} in {path}")
            entries[key] = vec.astype(np.float64)
        if f.read(1):
            raise EmbeddingFormatError(f"Trailing bytes after {count} records in {path}")

    return EmbeddingTable(dim=dim, granularity=granularity, entries=entries)


def _looks_like_frame_key(text: str) -> bool:
    parts = text.split("/")
    return len(parts) == 3 and parts[1].isdigit()


def _read_csv(path: str, granularity: Optional[str]) -> EmbeddingTable:
    rows = []
    with open(path, newline="", encoding="utf-8") as f:
        for line_no, row in enumerate(csv.reader(f), start=1):
            if not row:
                continue
            if line_no == 1 and row[0].strip().lower() == "key":
                continue
            rows.append((line_no, row))

    if not rows:
        raise EmbeddingFormatError(f"No embeddings in {path}")
    if granularity is None:
        granularity = FRAME if all(_looks_like_frame_key(r[0]) for _, r in rows) else TRACKLET

    dim = len(rows[0][1]) - 1
    entries = {}
    for line_no, row in rows:
        if len(row) - 1 != dim:
            raise EmbeddingFormatError(f"{path}:{line_no}: expected {dim} values, got {len(row) - 1}")
        try:
            vec = np.array([float(v) for v in row[1:]])
        except ValueError as e:
            raise EmbeddingFormatError(f"{path}:{line_no}: {e}") from e
        key = parse_frame_key(row[0]) if granularity == FRAME else row[0]
        if key in entries:
            raise EmbeddingFormatError(f"{path}:{line_no}: duplicate key {row[0]!r}")
        entries[key] = vec
    return EmbeddingTable(dim=dim, granularity=granularity, entries=entries)


def _write_csv(path: str, table: EmbeddingTable) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["key"] + [f"v{i}" for i in range(table.dim)])
        for key, vec in _sorted_items(table):
            writer.writerow([_key_to_str(table, key)] + [repr(float(v)) for v in vec])
    logger.info(f"Wrote {len(table)} embeddings (dim={table.dim}) to {path}")


def read_embeddings(path: str, granularity: Optional[str] = None) -> EmbeddingTable:
    """Read a PEM1 binary or CSV embedding file.

    Binary files are recognised by their magic bytes; anything else with a
    ``.csv`` extension is parsed as CSV. ``granularity`` only matters for CSV,
    where it is otherwise inferred from the key shape.
    """
    if not os.path.exists(path):
        raise DataError(f"Embedding file does not exist: {path}")

    with open(path, "rb") as f:
        head = f.read(len(MAGIC))
    try:
        if head == MAGIC:
            table = _read_binary(path)
        elif path.lower().endswith(".csv"):
            table = _read_csv(path, granularity)
        else:
            raise EmbeddingFormatError(f"{path} is neither a PEM1 file nor a .csv file")
    except OSError as e:
        logger.error(f"Failed to read embeddings from {path}: {str(e)}")
        logger.error(f"Error type: {type(e).__name__}")
        raise DataError(f"Cannot read embedding file {path}: {e}") from e

    logger.info(f"Loaded {len(table)} {table.granularity} embeddings (dim={table.dim}) from {path}")
    return table
