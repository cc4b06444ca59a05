"""
Positive-pair samplers for training tracklet encoders.

All indices are 1-based positions inside a tracklet. Every function takes an
explicit ``numpy.random.Generator`` so callers control determinism.
"""

import logging
from dataclasses import dataclass, replace
from typing import Any, Dict, List, Mapping, Sequence, Tuple

import numpy as np

from src.errors import ConfigError, DataError
from src.models import Tracklet, VideoRecord

logger = logging.getLogger(__name__)

MAX_REJECTIONS = 100

Fragment = Tuple[int, ...]


@dataclass(frozen=True)
class SamplingConfig:
    sigma: float = 30.0
    fragment_len: int = 8
    strides: Tuple[int, ...] = (1, 2, 3, 4)
    alpha_start: float = 1.0
    alpha_end: float = 0.5
    alpha_horizon: float = 0.75
    seed: int = 0
    # alpha as the probability of a same-tracklet pair instead of a cross-tracklet one
    invert_alpha: bool = False

    def validate(self) -> "SamplingConfig":
        if not self.sigma > 0:
            raise ConfigError("SIGMA must be > 0")
        if self.fragment_len < 1:
            raise ConfigError("FRAGMENT_LEN must be >= 1")
        if not self.strides or any(s < 1 for s in self.strides):
            raise ConfigError("STRIDES must be a non-empty list of positive integers")
        if not 0.0 <= self.alpha_end <= self.alpha_start <= 1.0:
            raise ConfigError("ALPHA values must satisfy 0 <= ALPHA_END <= ALPHA_START <= 1")
        if not 0.0 < self.alpha_horizon <= 1.0:
            raise ConfigError("ALPHA_HORIZON must be in (0, 1]")
        return self

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "SamplingConfig":
        unknown = sorted(set(raw) - set(cls.__dataclass_fields__))
        if unknown:
            raise ConfigError(f"Unknown sampling option(s) {unknown}")
        values = dict(raw)
        try:
            if "strides" in values:
                values["strides"] = tuple(int(s) for s in values["strides"])
            for name in ("sigma", "alpha_start", "alpha_end", "alpha_horizon"):
                if name in values:
                    values[name] = float(values[name])
            for name in ("fragment_len", "seed"):
                if name in values:
                    values[name] = int(values[name])
            if "invert_alpha" in values:
                values["invert_alpha"] = bool(values["invert_alpha"])
        except (TypeError, ValueError) as e:
            raise ConfigError(f"Invalid sampling option: {e}") from e
        return replace(cls(), **values).validate()

    def to_dict(self) -> Dict[str, Any]:
        return {
            "sigma": self.sigma,
            "fragment_len": self.fragment_len,
            "strides": list(self.strides),
            "alpha_start": self.alpha_start,
            "alpha_end": self.alpha_end,
            "alpha_horizon": self.alpha_horizon,
            "seed": self.seed,
            "invert_alpha": self.invert_alpha,
        }


@dataclass(frozen=True)
class FragmentPair:
    entity_key: str
    tracklet_a: str
    first: Fragment
    tracklet_b: str
    second: Fragment

    @property
    def same_tracklet(self) -> bool:
        return self.tracklet_a == self.tracklet_b


def make_rng(cfg: SamplingConfig) -> np.random.Generator:
    return np.random.default_rng(cfg.seed)


def sample_frame_pair(length: int, cfg: SamplingConfig, rng: np.random.Generator) -> Tuple[int, int]:
    """(i, j): i uniform, j a rounded Gaussian around i, rejected until valid and != i"""
    if length < 2:
        raise DataError(f"Frame pairs need a tracklet of length >= 2, got {length}")
    i = int(rng.integers(1, length + 1))
    draw = float(i)
    for _ in range(MAX_REJECTIONS):
        draw = rng.normal(i, cfg.sigma)
        j = int(np.rint(draw))
        if 1 <= j <= length and j != i:
            return i, j

    # nearest valid index to the last draw, smaller one on ties
    valid = np.array([k for k in range(1, length + 1) if k != i])
    return i, int(valid[np.argmin(np.abs(valid - draw))])


def _fragment(start: int, n: int, pad_limit: int, cfg: SamplingConfig, rng: np.random.Generator) -> Fragment:
    """fragment_len indices from start; the stride shrinks to fit n, else the fragment is padded"""
    span = cfg.fragment_len - 1
    stride = int(cfg.strides[rng.integers(len(cfg.strides))])
    if start + span * stride > n:
        fitting = [s for s in cfg.strides if start + span * s <= n]
        if not fitting:
            step = min(cfg.strides)
            indices = [start + k * step for k in range(cfg.fragment_len) if start + k * step <= pad_limit]
            return tuple(indices + [indices[-1]] * (cfg.fragment_len - len(indices)))
        stride = max(fitting)
    return tuple(start + k * stride for k in range(cfg.fragment_len))


def sample_fragment_pair(n: int, cfg: SamplingConfig, rng: np.random.Generator) -> Tuple[Fragment, Fragment]:
    """Two fragments starting in the first and second half of the tracklet"""
    if n < 2:
        raise DataError(f"Fragment pairs need a tracklet of length >= 2, got {n}")
    half = n // 2
    start_a = int(rng.integers(1, half + 1))
    start_b = int(rng.integers(half + 1, n + 1))
    # padding keeps the first fragment inside the first half
    return _fragment(start_a, n, half, cfg, rng), _fragment(start_b, n, n, cfg, rng)


def _single_fragment(n: int, cfg: SamplingConfig, rng: np.random.Generator) -> Fragment:
    start = int(rng.integers(1, n + 1))
    return _fragment(start, n, n, cfg, rng)


def alpha_schedule(step: int, total_steps: int, cfg: SamplingConfig) -> float:
    """Linear from alpha_start to alpha_end over the first alpha_horizon of training, then flat"""
    if total_steps < 1:
        raise ConfigError("TOTAL_STEPS must be >= 1")
    if not 0 <= step <= total_steps:
        raise ConfigError(f"Step {step} is outside [0, {total_steps}]")
    knee = cfg.alpha_horizon * total_steps
    if step >= knee:
        return cfg.alpha_end
    return cfg.alpha_start + (cfg.alpha_end - cfg.alpha_start) * step / knee


def sample_cross_tracklet_pair(tracklets: Sequence[Tracklet], step: int, total_steps: int,
                               cfg: SamplingConfig, rng: np.random.Generator,
                               entity_key: str = "") -> FragmentPair:
    """Fragments from two different tracklets of one entity with probability alpha(step)"""
    if not tracklets:
        raise DataError(f"Entity {entity_key or '?'} has no tracklets to sample from")
    p_cross = alpha_schedule(step, total_steps, cfg)
    if cfg.invert_alpha:
        p_cross = 1.0 - p_cross
    cross = rng.random() < p_cross

    if cross and len(tracklets) >= 2:
        a, b = (int(k) for k in rng.choice(len(tracklets), size=2, replace=False))
        ta, tb = tracklets[a], tracklets[b]
        return FragmentPair(entity_key, ta.tracklet_id, _single_fragment(len(ta), cfg, rng),
                            tb.tracklet_id, _single_fragment(len(tb), cfg, rng))

    t = tracklets[int(rng.integers(len(tracklets)))]
    if len(t) < 2:
        single = (1,) * cfg.fragment_len
        return FragmentPair(entity_key, t.tracklet_id, single, t.tracklet_id, single)
    first, second = sample_fragment_pair(len(t), cfg, rng)
    return FragmentPair(entity_key, t.tracklet_id, first, t.tracklet_id, second)


def split_into_fragments(n: int, fragment_len: int = 8) -> List[Fragment]:
    """Consecutive chunks of a tracklet; the last one is padded with its final index"""
    if n < 1:
        raise DataError("Tracklet length must be >= 1")
    if fragment_len < 1:
        raise ConfigError("FRAGMENT_LEN must be >= 1")
    chunks = []
    for start in range(1, n + 1, fragment_len):
        chunk = list(range(start, min(start + fragment_len, n + 1)))
        chunks.append(tuple(chunk + [chunk[-1]] * (fragment_len - len(chunk))))
    return chunks


def entity_tracklets(videos: Sequence[VideoRecord]) -> Dict[str, List[Tracklet]]:
    """Tracklets grouped per polyp, keyed "video_id/entity_id" """
    groups: Dict[str, List[Tracklet]] = {}
    for v in videos:
        for t in v.tracklets:
            groups.setdefault(f"{v.video_id}/{t.entity_id}", []).append(t)
    return {key: groups[key] for key in sorted(groups)}


def sample_batch(entities: Mapping[str, Sequence[Tracklet]], batch_size: int, step: int, total_steps: int,
                 cfg: SamplingConfig, rng: np.random.Generator) -> List[FragmentPair]:
    """One pair for each of batch_size distinct entities"""
    keys = sorted(entities)
    if batch_size < 1:
        raise ConfigError("BATCH_SIZE must be >= 1")
    if batch_size > len(keys):
        raise ConfigError(f"BATCH_SIZE {batch_size} exceeds the {len(keys)} available entities")
    chosen = rng.choice(len(keys), size=batch_size, replace=False)
    return [sample_cross_tracklet_pair(entities[keys[k]], step, total_steps, cfg, rng, entity_key=keys[k])
            for k in chosen]
