import csv
import os
import logging
from typing import Any, Dict, List, Optional, Sequence, Tuple

from src.evaluation import EvalReport, fragmentation_rate, no_reid_assignment
from src.models import VideoRecord
from src.sampling import Fragment, FragmentPair


class ReportWriter:
    """CSV outputs of a run: tracklet summary, sweep ledger, comparison table, samples"""

    def __init__(self, output_dir: str):
        self.output_dir = output_dir
        self.logger = logging.getLogger(__name__)
        self._ensure_dir()

    def _ensure_dir(self) -> None:
        """Create output directory if it doesn't exist"""
        os.makedirs(self.output_dir, exist_ok=True)

    def write_tracklet_summary(self, videos: Sequence[VideoRecord], filename: str = "tracklets.csv") -> str:
        """One row per video with its tracklets and the No-ReID FR"""
        rows = []
        for v in videos:
            rows.append({
                "video_id": v.video_id,
                "cohort": v.cohort,
                "n_entities": len(v.entity_ids),
                "n_tracklets": len(v.tracklets),
                "n_annotations": v.n_annotations,
                "no_reid_fr": _fmt(fragmentation_rate(no_reid_assignment(v), v)) if v.entity_ids else "-",
                "tracklets": " ".join(v.tracklet_ids),
            })
        return self._write_csv(filename, rows, ["video_id", "cohort", "n_entities", "n_tracklets",
                                                "n_annotations", "no_reid_fr", "tracklets"])

    def write_sweep_ledger(self, reports: Sequence[EvalReport], selected: int,
                           filename: str = "sweep_ledger.csv") -> str:
        """One row per grid point: hyperparameters then val metrics"""
        if not reports:
            self.logger.warning(f"No grid points to write to {filename}")
            return self._write_csv(filename, [], ["grid_index"])

        param_names = list(reports[0].config.summary().keys()) if reports[0].config else []
        rows = []
        for k, report in enumerate(reports):
            params = report.config.summary() if report.config else {}
            rows.append({
                "grid_index": k,
                **{name: params.get(name) for name in param_names},
                "fr_macro": _fmt(report.fr_macro),
                "fr_std": _fmt(report.fr_std),
                "fpr_pooled": _fmt(report.fpr_pooled),
                "selected": int(k == selected),
            })
        fieldnames = ["grid_index"] + param_names + ["fr_macro", "fr_std", "fpr_pooled", "selected"]
        return self._write_csv(filename, rows, fieldnames)

    def write_comparison(self, rows: Sequence[Tuple[str, Dict[str, Optional[EvalReport]]]],
                         filename: str = "comparison.csv", no_fpr: Sequence[str] = ()) -> str:
        """Method × split table of FR, FR_std and FPR.

        Methods listed in ``no_fpr`` show "-" for FPR (the No-ReID baseline).
        """
        splits = sorted({split for _, by_split in rows for split in by_split},
                        key=lambda s: ("val", "test").index(s) if s in ("val", "test") else 2)
        fieldnames = ["method"]
        for split in splits:
            fieldnames += [f"{split}_fr", f"{split}_fr_std", f"{split}_fpr"]

        table = []
        for method, by_split in rows:
            row: Dict[str, Any] = {"method": method}
            for split in splits:
                report = by_split.get(split)
                if report is None:
                    row.update({f"{split}_fr": "-", f"{split}_fr_std": "-", f"{split}_fpr": "-"})
                    continue
                row[f"{split}_fr"] = _fmt(report.fr_macro, 2)
                row[f"{split}_fr_std"] = _fmt(report.fr_std, 2)
                row[f"{split}_fpr"] = "-" if method in no_fpr else _fmt(report.fpr_pooled, 4)
            table.append(row)
            self.logger.info("  ".join(f"{k}={v}" for k, v in row.items()))
        return self._write_csv(filename, table, fieldnames)

    def write_frame_pairs(self, pairs: Sequence[Tuple[str, int, int]], filename: str = "frame_pairs.csv") -> str:
        rows = [{"tracklet_id": tid, "i": i, "j": j} for tid, i, j in pairs]
        return self._write_csv(filename, rows, ["tracklet_id", "i", "j"])

    def write_fragment_pairs(self, pairs: Sequence[Tuple[int, FragmentPair]],
                             filename: str = "fragment_pairs.csv") -> str:
        rows = [{
            "step": step,
            "entity": p.entity_key,
            "tracklet_a": p.tracklet_a,
            "fragment_a": " ".join(map(str, p.first)),
            "tracklet_b": p.tracklet_b,
            "fragment_b": " ".join(map(str, p.second)),
            "same_tracklet": int(p.same_tracklet),
        } for step, p in pairs]
        return self._write_csv(filename, rows, ["step", "entity", "tracklet_a", "fragment_a",
                                                "tracklet_b", "fragment_b", "same_tracklet"])

    def write_tracklet_fragments(self, fragments: Sequence[Tuple[str, Sequence[Fragment]]],
                                 filename: str = "tracklet_fragments.csv") -> str:
        """Fixed-length chunks covering each tracklet, as fed to a sequence encoder"""
        rows = [{"tracklet_id": tid, "fragment": k, "indices": " ".join(map(str, chunk))}
                for tid, chunks in fragments for k, chunk in enumerate(chunks)]
        return self._write_csv(filename, rows, ["tracklet_id", "fragment", "indices"])

    def _write_csv(self, filename: str, rows: List[Dict[str, Any]], fieldnames: List[str]) -> str:
        """Write rows to CSV file with headers"""
        filepath = os.path.join(self.output_dir, filename)
        self.logger.debug(f"Writing CSV file: {filepath} with {len(rows)} rows")
        try:
            with open(filepath, "w", newline="") as f:
                writer = csv.DictWriter(f, fieldnames=fieldnames)
                writer.writeheader()
                for row in rows:
                    writer.writerow(row)
            self.logger.info(f"Successfully wrote CSV file: {filepath} with {len(rows)} rows")
        except Exception as e:
            self.logger.error(f"Failed to write CSV file {filepath}: {str(e)}")
            self.logger.error(f"Error type: {type(e).__name__}")
            raise
        return filepath


def _fmt(value: float, digits: int = 6) -> str:
    return f"{value:.{digits}f}"
