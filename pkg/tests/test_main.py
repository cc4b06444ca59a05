import json
import os

import pytest

from main import build_parser, main


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    for key in list(os.environ):
        if key.startswith("POLYP_"):
            monkeypatch.delenv(key)


def synth(tmp_path):
    out = tmp_path / "data"
    assert main(["synth", "--output", str(out), "--parallelism", "1"]) == 0
    return out


class TestMain:
    def test_parser_defaults(self):
        args = build_parser().parse_args(["cluster"])
        assert args.rho is None
        assert args.report == []

    def test_synth_then_cluster(self, tmp_path):
        data = synth(tmp_path)
        run = tmp_path / "run"
        code = main(["cluster", "--annotations", str(data / "annotations.jsonl"),
                     "--embeddings", str(data / "embeddings.pem"), "--manifest", str(data / "manifest.json"),
                     "--output", str(run), "--rho", "0.1", "--stride", "2"])
        assert code == 0
        snapshot = json.loads((run / "config.json").read_text())
        assert snapshot["rho"] == 0.1
        assert snapshot["stride"] == 2
        assert (run / "report_test.json").exists()

    def test_dump_matrices_flag(self, tmp_path):
        data = synth(tmp_path)
        run = tmp_path / "run"
        code = main(["cluster", "--annotations", str(data / "annotations.jsonl"),
                     "--embeddings", str(data / "embeddings.pem"), "--manifest", str(data / "manifest.json"),
                     "--output", str(run), "--dump-matrices"])
        assert code == 0
        assert json.loads((run / "config.json").read_text())["dump_matrices"] is True
        manifest = json.loads((data / "manifest.json").read_text())
        assert sorted(p.name for p in run.glob("similarity_*.csv")) == sorted(
            f"similarity_{vid}.csv" for vid in manifest["test"])

    def test_config_file(self, tmp_path):
        config_file = tmp_path / "run.yaml"
        config_file.write_text(f"output_dir: {tmp_path / 'from_file'}\nsynth:\n  n_videos: 2\n")
        assert main(["synth", "--config", str(config_file)]) == 0
        manifest = json.loads((tmp_path / "from_file" / "manifest.json").read_text())
        assert len(manifest["val"]) == 1 and len(manifest["test"]) == 1

    def test_config_error_exit_code(self, tmp_path):
        assert main(["cluster", "--output", str(tmp_path / "run")]) == 2
        assert main(["synth", "--rho", "1.5", "--output", str(tmp_path / "run")]) == 2
        assert main(["convert", "--output", str(tmp_path / "run")]) == 2

    def test_missing_path_is_config_error(self, tmp_path):
        assert main(["tracklets", "--annotations", str(tmp_path / "none.jsonl")]) == 2

    def test_data_error_exit_code(self, tmp_path):
        bad = tmp_path / "ann.jsonl"
        bad.write_text('{"video_id": "v", "frame_idx": 0}\n')
        assert main(["tracklets", "--annotations", str(bad), "--output", str(tmp_path / "run")]) == 3

    def test_strict_convergence_exit_code(self, tmp_path):
        data = synth(tmp_path)
        config_file = tmp_path / "run.yaml"
        config_file.write_text("clustering:\n  max_iter: 1\n")
        code = main(["cluster", "--config", str(config_file), "--strict",
                     "--annotations", str(data / "annotations.jsonl"),
                     "--embeddings", str(data / "embeddings.pem"), "--output", str(tmp_path / "run")])
        assert code == 4

    def test_env_variables(self, tmp_path, monkeypatch):
        monkeypatch.setenv("POLYP_OUTPUT_DIR", str(tmp_path / "env_out"))
        monkeypatch.setenv("POLYP_SYNTH", '{"n_videos": 2}')
        assert main(["synth"]) == 0
        assert (tmp_path / "env_out" / "embeddings.pem").exists()

    def test_report_command(self, tmp_path):
        data = synth(tmp_path)
        common = ["--annotations", str(data / "annotations.jsonl"), "--manifest", str(data / "manifest.json")]
        assert main(["cluster", "--embeddings", str(data / "embeddings.pem"), "--output",
                     str(tmp_path / "run")] + common) == 0
        assert main(["report", "--report", "AP", "test", str(tmp_path / "run" / "report_test.json"),
                     "--output", str(tmp_path / "table")] + common) == 0
        assert (tmp_path / "table" / "comparison.csv").exists()
