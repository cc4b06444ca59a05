import numpy as np
import pytest
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from src.clustering import (ClusterAssignment, ClusteringConfig, assignment_from_labels, cluster,
                            cluster_agglomerative, cluster_threshold, cluster_videos,
                            identity_assignment)
from src.errors import ConfigError, DataError
from src.similarity import SimilarityMatrix
from mock_data import (clustered_points, matrix_from_distances, matrix_from_points, partition,
                       partition_from_labels, point_ids, random_distances)


def s_matrix(S):
    S = np.asarray(S, dtype=float)
    return SimilarityMatrix(tracklet_ids=tuple(point_ids(len(S))), similarities=S)


def naive_agglomerative(D, linkage, cutoff):
    """Recompute every linkage from scratch; clusters ordered by their smallest member"""
    reduce = {"single": np.min, "complete": np.max, "average": np.mean}[linkage]
    groups = [[k] for k in range(len(D))]
    while len(groups) > 1:
        groups.sort(key=min)
        best = None
        for a in range(len(groups)):
            for b in range(a + 1, len(groups)):
                d = reduce(D[np.ix_(groups[a], groups[b])])
                if best is None or d < best[0]:
                    best = (d, a, b)
        if best[0] > cutoff:
            break
        _, a, b = best
        groups[a] = groups[a] + groups[b]
        del groups[b]
    ids = point_ids(len(D))
    return {frozenset(ids[k] for k in g) for g in groups}


def coarser_or_equal(coarse, fine):
    return all(any(f <= c for c in coarse) for f in fine)


class TestClusterThreshold:
    def test_nothing_passes_gives_singletons(self):
        S = [[1, 0.2, 0.1], [0.2, 1, 0.3], [0.1, 0.3, 1]]
        assert cluster_threshold(s_matrix(S), lam=0.5).n_clusters == 3

    def test_lambda_zero_gives_one_cluster(self):
        S = [[1, 0.0, 0.1], [0.0, 1, 0.3], [0.1, 0.3, 1]]
        assert cluster_threshold(s_matrix(S), lam=0.0).n_clusters == 1

    def test_components_are_transitive(self):
        S = [[1, 0.8, 0.1], [0.8, 1, 0.7], [0.1, 0.7, 1]]
        assert cluster_threshold(s_matrix(S), lam=0.6).n_clusters == 1

    def test_lambda_one_on_normalized_matrix(self):
        D = np.array([[0.0, 1.0, 3.0], [1.0, 0.0, 2.0], [3.0, 2.0, 0.0]])
        result = cluster_threshold(matrix_from_distances(D), lam=1.0)
        assert partition(result) == {frozenset({"t00", "t01"}), frozenset({"t02"})}

    def test_empty_matrix(self):
        result = cluster_threshold(SimilarityMatrix(tracklet_ids=(), similarities=np.zeros((0, 0))), 0.5)
        assert result.assignment == {}

    def test_needs_similarities(self):
        m = SimilarityMatrix(tracklet_ids=("a",), distances=np.zeros((1, 1)))
        with pytest.raises(DataError):
            cluster_threshold(m, 0.5)

    def test_lowering_lambda_only_merges(self):
        rng = np.random.default_rng(11)
        for _ in range(1000):
            n = int(rng.integers(2, 9))
            m = matrix_from_distances(random_distances(rng, n))
            hi, lo = sorted(rng.random(2), reverse=True)
            fine = partition(cluster_threshold(m, hi))
            coarse = partition(cluster_threshold(m, lo))
            assert coarser_or_equal(coarse, fine)


class TestClusterAgglomerative:
    def test_cutoff_below_min_gives_singletons(self):
        D = random_distances(np.random.default_rng(0), 6) + 1.0
        np.fill_diagonal(D, 0.0)
        for linkage in ("single", "complete", "average"):
            assert cluster_agglomerative(matrix_from_distances(D), linkage, 0.5).n_clusters == 6

    def test_cutoff_at_max_single_linkage_gives_one_cluster(self):
        D = random_distances(np.random.default_rng(1), 7)
        result = cluster_agglomerative(matrix_from_distances(D), "single", float(D.max()))
        assert result.n_clusters == 1

    def test_two_blobs(self):
        points = np.array([[0.0, 0.0], [0.1, 0.0], [0.0, 0.1], [5.0, 5.0], [5.1, 5.0]])
        for linkage in ("single", "complete", "average"):
            result = cluster_agglomerative(matrix_from_points(points), linkage, 1.0)
            assert partition(result) == {frozenset({"t00", "t01", "t02"}), frozenset({"t03", "t04"})}

    @pytest.mark.parametrize("linkage", ["single", "complete", "average"])
    def test_matches_naive_reference(self, linkage):
        rng = np.random.default_rng({"single": 1, "complete": 2, "average": 3}[linkage])
        for trial in range(200):
            n = int(rng.integers(1, 13))
            # every other instance draws from a few integer levels so that ties occur
            D = random_distances(rng, n, levels=3 if trial % 2 else 0)
            off = D[~np.eye(n, dtype=bool)]
            cutoff = float(rng.choice(off)) if len(off) else 0.0
            result = cluster_agglomerative(matrix_from_distances(D), linkage, cutoff)
            assert partition(result) == naive_agglomerative(D, linkage, cutoff), (trial, n, cutoff)

    def test_single_linkage_equals_components(self):
        rng = np.random.default_rng(7)
        for _ in range(500):
            n = int(rng.integers(1, 31))
            D = random_distances(rng, n)
            t = float(rng.random())
            adjacency = D <= t
            np.fill_diagonal(adjacency, False)
            _, labels = connected_components(csr_matrix(adjacency), directed=False)
            result = cluster_agglomerative(matrix_from_distances(D), "single", t)
            assert partition(result) == partition_from_labels(point_ids(n), labels)

    def test_unknown_linkage(self):
        with pytest.raises(ConfigError):
            cluster_agglomerative(matrix_from_distances(np.zeros((2, 2))), "ward", 1.0)

    def test_needs_distances(self):
        m = SimilarityMatrix(tracklet_ids=("a",), similarities=np.ones((1, 1)))
        with pytest.raises(DataError):
            cluster_agglomerative(m, "single", 1.0)


class TestClusteringConfig:
    def test_defaults_are_valid(self):
        assert ClusteringConfig().validate().algorithm == "affinity_propagation"

    def test_from_dict_lambda_alias_and_coercion(self):
        cfg = ClusteringConfig.from_dict({"algorithm": "threshold", "lambda": "0.7"})
        assert cfg.lam == 0.7

    def test_from_dict_bool_strings(self):
        cfg = ClusteringConfig.from_dict({"algorithm": "hdbscan", "allow_single_cluster": "yes"})
        assert cfg.allow_single_cluster is True

    def test_unknown_option(self):
        with pytest.raises(ConfigError, match="Unknown"):
            ClusteringConfig.from_dict({"eps": 0.5})

    def test_bad_value(self):
        with pytest.raises(ConfigError):
            ClusteringConfig.from_dict({"max_iter": "many"})

    @pytest.mark.parametrize("kwargs, message", [
        ({"algorithm": "kmeans"}, "ALGORITHM"),
        ({"algorithm": "threshold", "lam": 1.5}, "LAMBDA"),
        ({"algorithm": "agglomerative", "linkage": "ward"}, "LINKAGE"),
        ({"algorithm": "agglomerative", "distance_cutoff": float("inf")}, "DISTANCE_CUTOFF"),
        ({"algorithm": "hdbscan", "min_cluster_size": 1}, "MIN_CLUSTER_SIZE"),
        ({"algorithm": "hdbscan", "min_samples": 0}, "MIN_SAMPLES"),
        ({"preference_quantile": 1.2}, "PREFERENCE_QUANTILE"),
        ({"damping": 1.0}, "DAMPING"),
        ({"convergence_iter": 0}, "CONVERGENCE_ITER"),
    ])
    def test_validation(self, kwargs, message):
        with pytest.raises(ConfigError, match=message):
            ClusteringConfig(**kwargs).validate()

    def test_summary_lists_only_relevant_fields(self):
        assert ClusteringConfig(algorithm="threshold", lam=0.3).summary() == {"algorithm": "threshold", "lam": 0.3}

    def test_to_dict_roundtrip(self):
        cfg = ClusteringConfig(algorithm="agglomerative", linkage="complete", distance_cutoff=0.4)
        assert ClusteringConfig.from_dict(cfg.to_dict()) == cfg


class TestClusterAssignment:
    def test_relabels_in_order_of_appearance(self):
        result = assignment_from_labels("v", ["a", "b", "c", "d"], [7, 3, 7, 9])
        assert result.assignment == {"a": 0, "b": 1, "c": 0, "d": 2}
        assert result.n_clusters == 3
        assert result.clusters() == {0: ["a", "c"], 1: ["b"], 2: ["d"]}

    def test_identity(self):
        assert identity_assignment("v", ["a", "b"]).n_clusters == 2

    def test_dict_roundtrip(self):
        original = ClusterAssignment("v", {"b": 1, "a": 0}, converged=False)
        data = original.to_dict()
        assert list(data["clusters"]) == ["a", "b"]
        assert ClusterAssignment.from_dict(data) == original

    def test_malformed(self):
        with pytest.raises(DataError):
            ClusterAssignment.from_dict({"video_id": "v"})


class TestDispatch:
    def test_threshold_dispatch(self):
        m = matrix_from_points(clustered_points(np.random.default_rng(2), 8, 2))
        cfg = ClusteringConfig(algorithm="threshold", lam=0.6)
        assert cluster(m, cfg, "v") == cluster_threshold(m, 0.6, "v")

    @pytest.mark.parametrize("algorithm", ["threshold", "agglomerative", "hdbscan", "affinity_propagation"])
    def test_empty_video(self, algorithm):
        m = SimilarityMatrix(tracklet_ids=(), distances=np.zeros((0, 0)), similarities=np.zeros((0, 0)))
        result = cluster(m, ClusteringConfig(algorithm=algorithm), "v")
        assert result.video_id == "v"
        assert result.assignment == {}

    @pytest.mark.parametrize("algorithm", ["threshold", "agglomerative", "hdbscan", "affinity_propagation"])
    def test_deterministic(self, algorithm):
        m = matrix_from_points(clustered_points(np.random.default_rng(5), 15, 3))
        cfg = ClusteringConfig(algorithm=algorithm)
        assert cluster(m, cfg, "v") == cluster(m, cfg, "v")

    def test_invalid_config_rejected(self):
        with pytest.raises(ConfigError):
            cluster(matrix_from_distances(np.zeros((2, 2))), ClusteringConfig(algorithm="kmeans"))

    def test_cluster_videos_keeps_order(self):
        rng = np.random.default_rng(9)
        matrices = [matrix_from_points(clustered_points(rng, 10, 2)) for _ in range(4)]
        ids = ["d", "a", "c", "b"]
        cfg = ClusteringConfig(algorithm="agglomerative", distance_cutoff=0.5)
        serial = cluster_videos(matrices, ids, cfg, parallelism=1)
        threaded = cluster_videos(matrices, ids, cfg, parallelism=4)
        assert [a.video_id for a in serial] == ids
        assert serial == threaded

    def test_cluster_videos_length_mismatch(self):
        with pytest.raises(DataError):
            cluster_videos([], ["v"], ClusteringConfig())
