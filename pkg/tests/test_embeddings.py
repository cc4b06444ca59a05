import numpy as np
import pytest

from src.embeddings import (FRAME, TRACKLET, EmbeddingTable, SynthConfig, _entity_centers, aggregate_tracklet,
                            selected_positions, synthesize, synthesize_annotations,
                            tracklet_embeddings)
from src.errors import ConfigError, DataError, MissingEmbeddingError
from src.tracklets import build_tracklets, build_videos
from mock_data import make_tracklet, make_video


def ramp_table(tracklet, dim=2):
    """Frame k of the tracklet gets the vector [k, -k, ...]"""
    entries = {}
    for pos, (idx, _) in enumerate(tracklet.frames):
        entries[(tracklet.video_id, idx, tracklet.entity_id)] = np.array([pos, -pos][:dim], dtype=float)
    return EmbeddingTable(dim=dim, granularity=FRAME, entries=entries)


class TestEmbeddingTable:
    def test_rejects_wrong_shape(self):
        with pytest.raises(DataError):
            EmbeddingTable(dim=3, granularity=TRACKLET, entries={"a": [1.0, 2.0]})

    def test_rejects_non_finite(self):
        with pytest.raises(DataError):
            EmbeddingTable(dim=2, granularity=TRACKLET, entries={"a": [1.0, np.inf]})

    def test_rejects_bad_key_type(self):
        with pytest.raises(DataError):
            EmbeddingTable(dim=1, granularity=FRAME, entries={"a": [1.0]})

    def test_vectors_are_read_only(self):
        table = EmbeddingTable(dim=1, granularity=TRACKLET, entries={"a": [1.0]})
        with pytest.raises(ValueError):
            table.get("a")[0] = 2.0

    def test_missing_key(self):
        table = EmbeddingTable(dim=1, granularity=TRACKLET, entries={})
        with pytest.raises(MissingEmbeddingError, match="b"):
            table.get("b")


class TestAggregation:
    def test_selected_positions(self):
        assert list(selected_positions(10, 4)) == [0, 4, 8]
        assert list(selected_positions(3, 4)) == [0]

    def test_stride_one_is_plain_mean(self):
        t = make_tracklet("v", "p1", 0, 8)
        assert aggregate_tracklet(t, ramp_table(t), stride=1) == pytest.approx([3.5, -3.5])

    def test_stride_four(self):
        t = make_tracklet("v", "p1", 0, 10)
        # positions 0, 4, 8
        assert aggregate_tracklet(t, ramp_table(t), stride=4) == pytest.approx([4.0, -4.0])

    def test_stride_longer_than_tracklet_uses_first_frame(self):
        t = make_tracklet("v", "p1", 3, 3)
        assert aggregate_tracklet(t, ramp_table(t), stride=4) == pytest.approx([0.0, 0.0])

    def test_missing_frame_named(self):
        t = make_tracklet("v", "p1", 0, 4)
        table = EmbeddingTable(dim=1, granularity=FRAME, entries={("v", 0, "p1"): [1.0]})
        with pytest.raises(MissingEmbeddingError) as info:
            aggregate_tracklet(t, table, stride=2)
        assert info.value.key == ("v", 2, "p1")

    def test_invalid_stride(self):
        t = make_tracklet("v", "p1", 0, 4)
        with pytest.raises(ConfigError):
            aggregate_tracklet(t, ramp_table(t), stride=0)

    def test_tracklet_granularity_passthrough(self):
        video = make_video("v", [("p1", 4), ("p2", 4)])
        entries = {tid: np.array([float(k)]) for k, tid in enumerate(video.tracklet_ids)}
        table = EmbeddingTable(dim=1, granularity=TRACKLET, entries=entries)
        out = tracklet_embeddings(video, table, stride=4)
        assert {tid: float(vec[0]) for tid, vec in out.items()} == {
            tid: float(k) for k, tid in enumerate(video.tracklet_ids)}


class TestSynthesize:
    def test_shape_of_generated_data(self):
        cfg = SynthConfig(n_videos=4, entities_per_video=3, tracklets_per_entity=5, frames_per_tracklet=8, dim=16)
        videos, table = synthesize(cfg)
        assert len(videos) == 4
        assert all(len(v.tracklets) == 15 for v in videos)
        assert all(len(v.entity_ids) == 3 for v in videos)
        assert len(table) == 4 * 15 * 8
        assert table.dim == 16

    def test_deterministic(self):
        a_videos, a_table = synthesize(SynthConfig(n_videos=2, seed=5))
        b_videos, b_table = synthesize(SynthConfig(n_videos=2, seed=5))
        assert a_videos == b_videos
        for key in a_table.entries:
            np.testing.assert_array_equal(a_table.get(key), b_table.get(key))

    def test_annotations_rebuild_same_tracklets(self):
        videos, _ = synthesize(SynthConfig(n_videos=3))
        rebuilt = build_videos(build_tracklets(synthesize_annotations(videos)))
        assert rebuilt == videos

    def test_cohort_naming(self):
        videos, _ = synthesize(SynthConfig(n_videos=5, n_cohorts=4))
        assert videos[0].video_id == "001-001"
        assert {v.cohort for v in videos} == {"001", "002", "003", "004"}

    def test_impossible_separation(self):
        cfg = SynthConfig(dim=1, entities_per_video=50, inter_sep=10.0, max_center_attempts=5)
        with pytest.raises(ConfigError):
            synthesize(cfg)

    def test_invalid_config(self):
        with pytest.raises(ConfigError):
            synthesize(SynthConfig(intra_sigma=0.0))

    def test_centers_respect_separation(self):
        for seed in range(20):
            cfg = SynthConfig(dim=4, entities_per_video=6, inter_sep=1.5, seed=seed)
            centers = _entity_centers(cfg, np.random.default_rng(seed))
            assert centers.shape == (6, 4)
            for i in range(6):
                for j in range(i + 1, 6):
                    assert np.linalg.norm(centers[i] - centers[j]) >= cfg.inter_sep

    def test_frames_closest_to_own_entity(self):
        cfg = SynthConfig(n_videos=3, entities_per_video=2, inter_sep=10.0, intra_sigma=0.01, seed=2)
        videos, table = synthesize(cfg)
        for v in videos:
            keys = {e: [(v.video_id, idx, e) for t in v.tracklets if t.entity_id == e for idx in t.frame_indices]
                    for e in v.entity_ids}
            centers = {e: np.mean([table.get(k) for k in ks], axis=0) for e, ks in keys.items()}
            for e, ks in keys.items():
                for k in ks:
                    nearest = min(centers, key=lambda c: np.linalg.norm(table.get(k) - centers[c]))
                    assert nearest == e
            fused = tracklet_embeddings(v, table, stride=4)
            for t in v.tracklets:
                nearest = min(centers, key=lambda c: np.linalg.norm(fused[t.tracklet_id] - centers[c]))
                assert nearest == t.entity_id

    def test_tiny_noise_gives_identical_tracklets_per_entity(self):
        cfg = SynthConfig(n_videos=2, intra_sigma=1e-12, seed=3)
        videos, table = synthesize(cfg)
        for v in videos:
            fused = tracklet_embeddings(v, table, stride=1)
            for e in v.entity_ids:
                vecs = [fused[t.tracklet_id] for t in v.tracklets if t.entity_id == e]
                for vec in vecs[1:]:
                    np.testing.assert_allclose(vec, vecs[0], rtol=0, atol=1e-9)
            # distinct entities stay apart
            means = [np.mean([fused[t.tracklet_id] for t in v.tracklets if t.entity_id == e], axis=0)
                     for e in v.entity_ids]
            assert min(np.linalg.norm(a - b) for i, a in enumerate(means) for b in means[i + 1:]) >= cfg.inter_sep - 1e-6
