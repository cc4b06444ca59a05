from typing import Iterable, List


class PolypCountError(Exception):
    """Base class for every error raised by the package"""
    exit_code = 1


class ConfigError(PolypCountError, ValueError):
    exit_code = 2


class DataError(PolypCountError, ValueError):
    exit_code = 3


class ConvergenceError(PolypCountError, RuntimeError):
    exit_code = 4


class AnnotationParseError(DataError):
    def __init__(self, path: str, line_no: int, reason: str):
        self.path = path
        self.line_no = line_no
        self.reason = reason
        super().__init__(f"{path}:{line_no}: {reason}")


class InvalidBoxError(DataError):
    pass


class DuplicateAnnotationError(DataError):
    def __init__(self, duplicates: Iterable[tuple]):
        self.duplicates: List[tuple] = list(duplicates)
        rows = ", ".join(f"(video={v}, frame={f}, entity={e})" for v, f, e in self.duplicates[:10])
        more = f" and {len(self.duplicates) - 10} more" if len(self.duplicates) > 10 else ""
        super().__init__(f"Duplicate (video, frame, entity) annotations: {rows}{more}")


class MissingEmbeddingError(DataError):
    def __init__(self, key):
        self.key = key
        super().__init__(f"No embedding stored for key {key!r}")


class EmbeddingFormatError(DataError):
    pass


class CoverageError(DataError):
    def __init__(self, video_id: str, missing: Iterable[str], extra: Iterable[str]):
        self.video_id = video_id
        self.missing = sorted(missing)
        self.extra = sorted(extra)
        super().__init__(
            f"Assignment for video {video_id} does not cover its tracklets: "
            f"missing={self.missing[:10]} extra={self.extra[:10]}"
        )
