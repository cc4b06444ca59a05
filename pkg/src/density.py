"""
HDBSCAN over a precomputed distance matrix.

Pipeline: core distances (distance to the ``min_samples``-th nearest other
point) → mutual reachability distances → minimum spanning tree (Prim) →
top-down single-linkage hierarchy → condensed tree at ``min_cluster_size`` →
excess-of-mass selection. Noise points come back as singleton clusters so that
every tracklet is counted.

The hierarchy is walked one distinct edge weight at a time, so a cluster that
falls apart into three large pieces at one level gets three children instead
of a chain of binary splits.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from src.clustering import ClusterAssignment, _require, assignment_from_labels
from src.similarity import SimilarityMatrix

logger = logging.getLogger(__name__)


def core_distances(D: np.ndarray, min_samples: int) -> np.ndarray:
    n = D.shape[0]
    if n <= 1:
        return np.zeros(n)
    k = min(min_samples, n - 1)
    # column 0 of each sorted row is the point itself
    return np.sort(D, axis=1)[:, k]


def mutual_reachability(D: np.ndarray, min_samples: int) -> np.ndarray:
    core = core_distances(D, min_samples)
    M = np.maximum(D, np.maximum(core[:, None], core[None, :]))
    np.fill_diagonal(M, 0.0)
    return M


def minimum_spanning_tree(M: np.ndarray) -> np.ndarray:
    """Prim's algorithm on a dense matrix; rows of (u, v, weight).

    Zero weights are real edges here, which rules out scipy's sparse MST.
    """
    n = M.shape[0]
    in_tree = np.zeros(n, dtype=bool)
    best = np.full(n, np.inf)
    parent = np.full(n, -1)
    edges = np.zeros((max(n - 1, 0), 3))
    current = 0
    in_tree[0] = True
    for k in range(n - 1):
        closer = (~in_tree) & (M[current] < best)
        best[closer] = M[current][closer]
        parent[closer] = current
        nxt = int(np.argmin(np.where(in_tree, np.inf, best)))
        edges[k] = (parent[nxt], nxt, best[nxt])
        in_tree[nxt] = True
        current = nxt
    return edges


def _lambda(weight: float) -> float:
    return np.inf if weight <= 0.0 else 1.0 / weight


@dataclass
class CondensedCluster:
    cluster_id: int
    parent: Optional[int]
    birth_lambda: float
    points: np.ndarray
    children: List[int] = field(default_factory=list)
    # lambda at which each point stops belonging to this cluster
    leave_lambda: Dict[int, float] = field(default_factory=dict)

    @property
    def stability(self) -> float:
        if np.isinf(self.birth_lambda):
            return 0.0
        return float(sum(lam - self.birth_lambda for lam in self.leave_lambda.values()))


def condense_tree(mst: np.ndarray, n: int, min_cluster_size: int) -> List[CondensedCluster]:
    """Condensed cluster tree; index 0 is the root, parents precede children"""
    clusters: List[CondensedCluster] = []
    pending = [(None, 0.0, np.arange(n), mst)]

    while pending:
        parent, birth, points, edges = pending.pop(0)
        node = CondensedCluster(cluster_id=len(clusters), parent=parent, birth_lambda=birth, points=points)
        clusters.append(node)
        if parent is not None:
            clusters[parent].children.append(node.cluster_id)

        while True:
            if len(edges) == 0:
                for p in points:
                    node.leave_lambda[int(p)] = np.inf
                break
            level = edges[:, 2].max()
            lam = _lambda(level)
            kept = edges[edges[:, 2] < level]

            local = {int(p): k for k, p in enumerate(points)}
            rows = [local[int(u)] for u in kept[:, 0]]
            cols = [local[int(v)] for v in kept[:, 1]]
            graph = csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(points), len(points)))
            n_comp, comp = connected_components(graph, directed=False)

            sizes = np.bincount(comp, minlength=n_comp)
            big = [c for c in range(n_comp) if sizes[c] >= min_cluster_size]

            if len(big) == 1:
                keep = comp == big[0]
                for p in points[~keep]:
                    node.leave_lambda[int(p)] = lam
                points = points[keep]
                members = set(points.tolist())
                edges = kept[np.isin(kept[:, 0], list(members))]
                continue

            for p in points:
                node.leave_lambda[int(p)] = lam
            for c in big:
                child_points = points[comp == c]
                members = set(child_points.tolist())
                pending.append((node.cluster_id, lam, child_points, kept[np.isin(kept[:, 0], list(members))]))
            break

    return clusters


def select_clusters(clusters: List[CondensedCluster], allow_single_cluster: bool = False) -> List[int]:
    """Excess-of-mass selection, children visited before their parents"""
    selected = np.zeros(len(clusters), dtype=bool)
    total = np.zeros(len(clusters))

    def deselect_below(cid: int) -> None:
        for child in clusters[cid].children:
            selected[child] = False
            deselect_below(child)

    for node in reversed(clusters):
        cid = node.cluster_id
        if cid == 0 and not allow_single_cluster:
            continue
        stability = node.stability
        child_sum = float(sum(total[c] for c in node.children))
        if node.children and child_sum > stability:
            total[cid] = child_sum
        else:
            total[cid] = stability
            selected[cid] = True
            deselect_below(cid)

    return [cid for cid in range(len(clusters)) if selected[cid]]


def label_points(clusters: List[CondensedCluster], selected: List[int], n: int) -> np.ndarray:
    """Cluster index per point, -1 for noise"""
    chosen = set(selected)
    labels = np.full(n, -1)
    root_cutoff = max(clusters[0].leave_lambda.values()) if clusters else np.inf

    for node in clusters:
        for p, lam in node.leave_lambda.items():
            cid: Optional[int] = node.cluster_id
            while cid is not None and cid not in chosen:
                cid = clusters[cid].parent
            if cid is None:
                continue
            # points that drop out of a selected root early stay noise
            if cid == 0 and node.cluster_id == 0 and lam < root_cutoff:
                continue
            labels[p] = cid
    return labels


def cluster_hdbscan(m: SimilarityMatrix, min_cluster_size: int, min_samples: int,
                    allow_single_cluster: bool = False, video_id: str = "") -> ClusterAssignment:
    D = _require(m, "distances", "hdbscan")
    n = len(m)
    if n == 0:
        return ClusterAssignment(video_id=video_id)
    if n < min_cluster_size:
        return assignment_from_labels(video_id, m.tracklet_ids, range(n))

    M = mutual_reachability(D, min_samples)
    if not np.any(M > 0):
        return assignment_from_labels(video_id, m.tracklet_ids, [0] * n)

    clusters = condense_tree(minimum_spanning_tree(M), n, min_cluster_size)
    selected = select_clusters(clusters, allow_single_cluster)
    labels = label_points(clusters, selected, n)

    n_noise = int(np.sum(labels < 0))
    # noise points become their own clusters
    labels = np.where(labels < 0, len(clusters) + np.arange(n), labels)
    logger.debug(f"Video {video_id}: HDBSCAN selected {len(selected)} clusters, {n_noise} noise points")
    return assignment_from_labels(video_id, m.tracklet_ids, labels)
