import os
import logging
from typing import Callable, List, Optional, Sequence, TypeVar

from joblib import Parallel, delayed

from src.errors import ConfigError

T = TypeVar("T")
R = TypeVar("R")


def resolve_workers(parallelism: Optional[int], n_items: int) -> int:
    """
    Number of workers to use for n_items independent jobs.

    Args:
        parallelism: Requested worker count; None or 0 means all available cores
        n_items: Number of jobs that will be submitted

    Returns:
        A worker count between 1 and n_items (1 for empty input)
    """
    if parallelism is not None and parallelism < 0:
        raise ConfigError("PARALLELISM must be >= 0 (0 or unset means all cores)")
    requested = parallelism or os.cpu_count() or 1
    return max(1, min(requested, n_items))


def parallel_map(func: Callable[[T], R], items: Sequence[T], parallelism: Optional[int] = 1,
                 logger: logging.Logger = None) -> List[R]:
    """
    Apply func to every item, possibly in parallel, keeping input order.

    Results always come back in the order of ``items`` so that anything
    reduced from them is independent of the worker count.
    """
    if logger is None:
        logger = logging.getLogger(__name__)

    items = list(items)
    workers = resolve_workers(parallelism, len(items))
    if workers == 1:
        return [func(item) for item in items]

    logger.debug(f"Running {len(items)} jobs on {workers} workers")
    # threads: the heavy lifting is numpy/scipy, which releases the GIL
    return Parallel(n_jobs=workers, prefer="threads")(delayed(func)(item) for item in items)
