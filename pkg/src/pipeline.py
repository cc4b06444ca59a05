import time
import logging
from typing import Dict, List, Optional, Sequence, Tuple

from src.config import RunConfig
from src.errors import ConfigError, ConvergenceError, DataError
from src.models import SPLIT_NAMES, SplitManifest, VideoRecord


class PolypCountingPipeline:
    """The CLI commands: ingest, cluster, sweep, evaluate and report.

    Each command writes into one run directory together with a snapshot of the
    resolved configuration.
    """

    def __init__(self, config: RunConfig):
        self.config = config
        self.logger = logging.getLogger(__name__)
        self.storage = None  # created on first use
        self.reports = None

    def _outputs(self):
        from src.reports import ReportWriter
        from src.storage import RunStorage

        if self.storage is None:
            self.storage = RunStorage(self.config.output_dir)
            self.reports = ReportWriter(self.config.output_dir)
            self.storage.save_config(self.config.to_dict())
        return self.storage, self.reports

    def _manifests(self) -> Optional[Dict[str, SplitManifest]]:
        from src.tracklets import load_split_manifest

        if self.config.manifest_path is None:
            return None
        return load_split_manifest(self.config.manifest_path)

    def _load_videos(self, splits: Sequence[str] = None) -> Dict[str, List[VideoRecord]]:
        """Videos per requested split; without a manifest every annotated video is in each"""
        from src.tracklets import build_tracklets, build_videos, load_annotations

        self.config.require("annotations_path")
        splits = list(splits or [self.config.split])
        tracklets = build_tracklets(load_annotations(self.config.annotations_path), self.config.iou_min)
        manifests = self._manifests()

        videos = {}
        for split in splits:
            if manifests is None:
                videos[split] = build_videos(tracklets)
            else:
                videos[split] = build_videos(tracklets, manifests[split].video_ids)
            if not videos[split]:
                raise DataError(f"Split {split} has no videos")
            self.logger.info(f"Split {split}: {len(videos[split])} videos, "
                             f"{sum(len(v.tracklets) for v in videos[split])} tracklets")
        return videos

    def _embeddings(self):
        from src.embedding_io import read_embeddings

        self.config.require("embeddings_path")
        return read_embeddings(self.config.embeddings_path)

    def _check_convergence(self, assignments) -> None:
        unconverged = sorted(a.video_id for a in assignments if not a.converged)
        if not unconverged:
            return
        message = f"Clustering did not converge for {len(unconverged)} video(s): {unconverged}"
        if self.config.strict_convergence:
            raise ConvergenceError(message)
        self.logger.warning(message)

    def _cluster_split(self, videos, table, cfg, dump: bool = False):
        from src.clustering import cluster_videos
        from src.evaluation import evaluate
        from src.similarity import build_matrices, dump_matrix

        c = self.config
        matrices = build_matrices(videos, table, c.stride, c.metric, c.include_diagonal, c.parallelism)
        if dump:
            for video, m in zip(videos, matrices):
                dump_matrix(self.storage.path(f"similarity_{video.video_id}.csv"), m)
            self.logger.info(f"Dumped {len(matrices)} similarity matrices to {c.output_dir}")
        assignments = cluster_videos(matrices, [v.video_id for v in videos], cfg, c.parallelism)
        self._check_convergence(assignments)
        report = evaluate(assignments, videos, c.rho, config=cfg,
                          fpr_convention=c.fpr_convention, std_convention=c.std_convention)
        return assignments, report

    def run_tracklets(self):
        """Tracklet listing, split summary and the No-ReID table of the configured split"""
        from src.evaluation import evaluate, no_reid_assignment
        from src.tracklets import split_summary

        self.logger.info("Building tracklets")
        job_start_time = time.time()
        storage, reports = self._outputs()
        split = self.config.split
        videos = self._load_videos()[split]

        reports.write_tracklet_summary(videos, f"tracklets_{split}.csv")
        storage.write_json(f"split_summary_{split}.json", split_summary(videos).to_dict())
        report = evaluate([no_reid_assignment(v) for v in videos], videos, self.config.rho,
                          fpr_convention=self.config.fpr_convention, std_convention=self.config.std_convention)
        storage.save_report(f"no_reid_report_{split}.json", report)

        self.logger.info(f"No-ReID FR on {split}: {report.fr_macro:.2f} ± {report.fr_std:.2f} "
                         f"({time.time() - job_start_time:.2f}s)")
        return report

    def run_synth(self) -> Dict[str, str]:
        """Synthetic annotations, frame embeddings and a val/test manifest"""
        from src.embedding_io import write_embeddings
        from src.embeddings import synthesize, synthesize_annotations
        from src.tracklets import write_annotations

        storage, _ = self._outputs()
        videos, table = synthesize(self.config.effective_synth())
        ids = [v.video_id for v in videos]
        half = len(ids) // 2
        manifest = {"train": [], "val": ids[:half], "test": ids[half:]}

        paths = {
            "annotations": storage.path("annotations.jsonl"),
            "embeddings": storage.path("embeddings.pem"),
            "manifest": storage.write_json("manifest.json", manifest),
        }
        write_annotations(paths["annotations"], synthesize_annotations(videos))
        write_embeddings(paths["embeddings"], table)
        self.logger.info(f"Synthetic dataset written to {self.config.output_dir}: "
                         f"{len(manifest['val'])} val / {len(manifest['test'])} test videos")
        return paths

    def run_cluster(self):
        """Cluster the configured split with the fixed clustering config"""
        self.logger.info("Clustering tracklets")
        job_start_time = time.time()
        storage, _ = self._outputs()
        split = self.config.split
        videos = self._load_videos()[split]
        cfg = self.config.effective_clustering()

        assignments, report = self._cluster_split(videos, self._embeddings(), cfg, dump=self.config.dump_matrices)
        storage.save_assignments(f"assignments_{split}.json", assignments)
        storage.save_report(f"report_{split}.json", report)
        self.logger.info(f"Clustering completed in {time.time() - job_start_time:.2f}s")
        return report

    def run_sweep(self):
        """Select a config on val, freeze it, evaluate once on test"""
        from src.sweep import sweep_grid

        c = self.config
        if c.sweep is None:
            raise ConfigError("SWEEP must be specified for the sweep command")
        c.require("manifest_path")
        self.logger.info(f"Sweeping {len(c.sweep)} {c.sweep.algorithm} configs at rho={c.rho}")
        job_start_time = time.time()
        storage, reports = self._outputs()

        # the manifest loader rejects video ids shared between splits
        videos = self._load_videos(["val", "test"])
        table = self._embeddings()

        outcome = sweep_grid(c.sweep, videos["val"], table, c.rho, c.sweep_mode, c.stride, c.metric,
                             c.include_diagonal, c.fpr_convention, c.std_convention, c.parallelism,
                             base=c.effective_clustering())
        best_cfg = outcome.best_config
        reports.write_sweep_ledger(outcome.reports, outcome.best)
        storage.write_json("best_config.json", best_cfg.to_dict())
        storage.save_report("sweep_report_val.json", outcome.best_report)

        # test only sees the frozen config
        assignments, test_report = self._cluster_split(videos["test"], table, best_cfg)
        storage.save_assignments("assignments_test.json", assignments)
        storage.save_report("sweep_report_test.json", test_report)
        self.logger.info(f"Sweep completed in {time.time() - job_start_time:.2f}s")
        return best_cfg, outcome.best_report, test_report

    def run_eval(self):
        """Evaluate an existing assignments file against the annotations"""
        from src.evaluation import evaluate

        self.config.require("assignments_path")
        storage, _ = self._outputs()
        assignments = storage.load_assignments(self.config.assignments_path)
        split = self.config.split
        videos = self._load_videos()[split]
        if self.config.manifest_path is None:
            # without a manifest the assignments file defines the video set
            wanted = {a.video_id for a in assignments}
            videos = [v for v in videos if v.video_id in wanted]

        report = evaluate(assignments, videos, self.config.rho,
                          fpr_convention=self.config.fpr_convention, std_convention=self.config.std_convention)
        storage.save_report(f"eval_report_{split}.json", report)
        return report

    def run_report(self, entries: Sequence[Tuple[str, str, str]], include_no_reid: bool = True) -> str:
        """Comparison table from (method, split, report path) entries"""
        from src.evaluation import evaluate, no_reid_assignment

        storage, reports = self._outputs()
        rows: Dict[str, Dict[str, object]] = {}
        order: List[str] = []

        if include_no_reid and self.config.annotations_path is not None:
            manifests = self._manifests()
            if manifests is None:
                splits = [self.config.split]
            else:
                # splits the manifest leaves empty get "-" cells
                splits = [s for s in ("val", "test") if manifests[s].video_ids]
            videos = self._load_videos(splits) if splits else {}
            order.append("No ReID")
            rows["No ReID"] = {
                split: evaluate([no_reid_assignment(v) for v in vids], vids, self.config.rho,
                                fpr_convention=self.config.fpr_convention,
                                std_convention=self.config.std_convention)
                for split, vids in videos.items()
            }

        for method, split, path in entries:
            if split not in SPLIT_NAMES:
                raise ConfigError(f"Split must be one of {SPLIT_NAMES}, got {split!r}")
            if method not in rows:
                rows[method] = {}
                order.append(method)
            rows[method][split] = storage.load_report(path)

        if not order:
            raise ConfigError("Nothing to report: give report files or an annotations path")
        return reports.write_comparison([(m, rows[m]) for m in order], no_fpr=("No ReID",))

    def run_sample(self) -> Tuple[str, str, str]:
        """Dump sampled frame pairs, fragment pairs and the fragment cover of every tracklet"""
        from src.sampling import entity_tracklets, make_rng, sample_batch, sample_frame_pair, split_into_fragments

        _, reports = self._outputs()
        cfg = self.config.effective_sampling()
        draws = self.config.sample_draws
        videos = self._load_videos()[self.config.split]
        rng = make_rng(cfg)

        long_enough = [t for v in videos for t in v.tracklets if len(t) >= 2]
        if not long_enough:
            raise DataError("No tracklet has at least 2 frames to sample from")
        frame_pairs = []
        for _ in range(draws):
            t = long_enough[int(rng.integers(len(long_enough)))]
            i, j = sample_frame_pair(len(t), cfg, rng)
            frame_pairs.append((t.tracklet_id, i, j))

        entities = entity_tracklets(videos)
        fragment_pairs = [(step, pair) for step in range(draws)
                          for pair in sample_batch(entities, 1, step, draws, cfg, rng)]
        covers = [(t.tracklet_id, split_into_fragments(len(t), cfg.fragment_len))
                  for v in videos for t in v.tracklets]

        self.logger.info(f"Sampled {len(frame_pairs)} frame pairs and {len(fragment_pairs)} fragment pairs "
                         f"from {len(entities)} entities")
        return (reports.write_frame_pairs(frame_pairs), reports.write_fragment_pairs(fragment_pairs),
                reports.write_tracklet_fragments(covers))

    def run_convert(self, annotation_dir: str) -> str:
        from src.converter import convert_real_colon

        storage, _ = self._outputs()
        out_path = storage.path("annotations.jsonl")
        count = convert_real_colon(annotation_dir, out_path)
        self.logger.info(f"Converted {count} REAL-Colon annotations to {out_path}")
        return out_path
