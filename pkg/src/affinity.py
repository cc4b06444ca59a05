"""
Affinity propagation on a per-video similarity matrix S.

Responsibilities and availabilities are exchanged with damping until the
exemplar set has been stable for ``convergence_iter`` iterations. The
preference (diagonal of S) is a quantile of the off-diagonal similarities,
which transfers across videos because S is min-max normalised per video.
"""

import itertools
import logging
from typing import Tuple

import numpy as np

from src.clustering import ClusterAssignment, _require, assignment_from_labels
from src.similarity import SimilarityMatrix

logger = logging.getLogger(__name__)

JITTER_SCALE = 1e-9
# videos up to this many tracklets get an exhaustive exemplar search
EXACT_SEARCH_MAX = 10


def preference_from_quantile(S: np.ndarray, quantile: float) -> float:
    n = S.shape[0]
    off = S[~np.eye(n, dtype=bool)]
    return float(np.quantile(off, quantile))


def prepare_similarities(S: np.ndarray, preference: float, jitter_seed: int) -> np.ndarray:
    """Copy of S with the preference on the diagonal and a seeded tiny jitter"""
    n = S.shape[0]
    S = S.astype(np.float64).copy()
    np.fill_diagonal(S, preference)
    rng = np.random.default_rng(jitter_seed)
    return S + JITTER_SCALE * rng.standard_normal((n, n))


def net_similarity(S: np.ndarray, exemplars: np.ndarray) -> float:
    """Σ_i S[i, exemplar(i)] with each point on its most similar exemplar.

    Exemplars take their own diagonal entry, i.e. the preference.
    """
    labels = assign_to_exemplars(S, exemplars)
    return float(S[np.arange(S.shape[0]), labels].sum())


def assign_to_exemplars(S: np.ndarray, exemplars: np.ndarray) -> np.ndarray:
    """Index of the chosen exemplar for every point"""
    exemplars = np.asarray(exemplars)
    labels = exemplars[np.argmax(S[:, exemplars], axis=1)]
    labels[exemplars] = exemplars
    return labels


def propagate(S: np.ndarray, damping: float, max_iter: int,
              convergence_iter: int) -> Tuple[np.ndarray, bool, int]:
    """Message passing; returns (exemplar indices, converged, iterations)"""
    n = S.shape[0]
    A = np.zeros((n, n))
    R = np.zeros((n, n))
    rows = np.arange(n)
    history = np.zeros((n, convergence_iter), dtype=bool)
    converged = False
    it = 0

    for it in range(max_iter):
        # responsibilities
        AS = A + S
        best = np.argmax(AS, axis=1)
        first = AS[rows, best]
        AS[rows, best] = -np.inf
        second = np.max(AS, axis=1)
        new_R = S - first[:, None]
        new_R[rows, best] = S[rows, best] - second
        R = damping * R + (1.0 - damping) * new_R

        # availabilities
        Rp = np.maximum(R, 0.0)
        Rp[rows, rows] = R[rows, rows]
        new_A = Rp.sum(axis=0)[None, :] - Rp
        self_avail = np.diag(new_A).copy()
        new_A = np.minimum(new_A, 0.0)
        new_A[rows, rows] = self_avail
        A = damping * A + (1.0 - damping) * new_A

        is_exemplar = (np.diag(A) + np.diag(R)) > 0
        history[:, it % convergence_iter] = is_exemplar
        if it + 1 >= convergence_iter:
            stable_counts = history.sum(axis=1)
            stable = np.all((stable_counts == convergence_iter) | (stable_counts == 0))
            if stable and is_exemplar.any():
                converged = True
                break

    exemplars = np.flatnonzero((np.diag(A) + np.diag(R)) > 0)
    return exemplars, converged, it + 1


def exact_exemplars(S: np.ndarray, exemplars: np.ndarray) -> np.ndarray:
    """Best exemplar set by enumeration; the message-passing result wins ties"""
    n = S.shape[0]
    best = np.array(sorted(int(e) for e in exemplars))
    best_score = net_similarity(S, best)
    for size in range(1, n + 1):
        for subset in itertools.combinations(range(n), size):
            candidate = np.array(subset)
            score = net_similarity(S, candidate)
            if score > best_score + 1e-12:
                best, best_score = candidate, score
    return best


def refine_exemplars(S: np.ndarray, exemplars: np.ndarray) -> np.ndarray:
    """Add/drop/swap local search on the exemplar set; never lowers net similarity"""
    n = S.shape[0]
    current = set(int(e) for e in exemplars)
    score = net_similarity(S, np.array(sorted(current)))

    improved = True
    while improved:
        improved = False
        moves = []
        for k in range(n):
            if k in current:
                if len(current) > 1:
                    moves.append(current - {k})
            else:
                moves.append(current | {k})
        for out in sorted(current):
            for k in range(n):
                if k not in current:
                    moves.append((current - {out}) | {k})

        for candidate in moves:
            cand_score = net_similarity(S, np.array(sorted(candidate)))
            if cand_score > score + 1e-12:
                current, score = candidate, cand_score
                improved = True
                break

    return np.array(sorted(current))


def cluster_affinity_propagation(m: SimilarityMatrix, preference_quantile: float, damping: float = 0.9,
                                 max_iter: int = 1000, convergence_iter: int = 50, jitter_seed: int = 0,
                                 refine: bool = True, video_id: str = "") -> ClusterAssignment:
    S = _require(m, "similarities", "affinity_propagation")
    n = len(m)
    if n == 0:
        return ClusterAssignment(video_id=video_id)
    if n == 1:
        return assignment_from_labels(video_id, m.tracklet_ids, [0])

    preference = preference_from_quantile(S, preference_quantile)
    S_work = prepare_similarities(S, preference, jitter_seed)
    exemplars, converged, iterations = propagate(S_work, damping, max_iter, convergence_iter)

    if not converged:
        logger.warning(f"Video {video_id}: affinity propagation did not converge in {iterations} iterations "
                       f"(preference quantile {preference_quantile})")
    if len(exemplars) == 0:
        # no exemplar emerged: every tracklet stays on its own
        return assignment_from_labels(video_id, m.tracklet_ids, range(n), converged=False)

    if refine and converged:
        if n <= EXACT_SEARCH_MAX:
            exemplars = exact_exemplars(S_work, exemplars)
        else:
            exemplars = refine_exemplars(S_work, exemplars)

    labels = assign_to_exemplars(S_work, exemplars)
    logger.debug(f"Video {video_id}: {len(exemplars)} exemplars after {iterations} iterations")
    return assignment_from_labels(video_id, m.tracklet_ids, labels, converged=converged)
