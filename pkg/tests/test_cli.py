import json

import pytest

from conftest import write_parquet_dataset
from rs_synthgen import cli, provenance
from rs_synthgen.classes import DEFAULT_CLASS_COUNTS
from rs_synthgen.config import PipelineConfig, load_config, parse_counts, parse_fractions
from rs_synthgen.errors import ConfigError


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    monkeypatch.delenv(cli.WORKSPACE_ENV_VAR, raising=False)


class TestConfigFile:
    def test_defaults_without_file(self):
        cfg = load_config(None)
        assert cfg["pipeline"]["seed"] == 0
        assert cfg["ingest"]["holdout"] == 500
        assert cfg["fid"]["sample_size"] == 250

    def test_values_parsed_with_types(self, tmp_path):
        path = tmp_path / "run.ini"
        path.write_text(
            "[pipeline]\nseed = 7\n"
            "[finetune]\nlearning_rate = 1e-4\nmixed_precision = false\n"
            "[ingest]\naugment = true\nholdout = 12\n",
            encoding="utf-8",
        )
        cfg = load_config(path)
        assert cfg["pipeline"]["seed"] == 7
        assert cfg["finetune"]["learning_rate"] == pytest.approx(1e-4)
        assert cfg["finetune"]["mixed_precision"] is False
        assert cfg["ingest"]["augment"] is True
        assert cfg["ingest"]["holdout"] == 12
        # untouched sections keep defaults
        assert cfg["generate"]["steps"] == 50

    def test_unknown_section_rejected(self, tmp_path):
        path = tmp_path / "run.ini"
        path.write_text("[training]\nepochs = 2\n", encoding="utf-8")
        with pytest.raises(ConfigError, match=r"\[training\]"):
            load_config(path)

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "run.ini"
        path.write_text("[finetune]\noptimizer = adam\n", encoding="utf-8")
        with pytest.raises(ConfigError, match="optimizer"):
            load_config(path)

    def test_bad_value_rejected(self, tmp_path):
        path = tmp_path / "run.ini"
        path.write_text("[pipeline]\nseed = soon\n", encoding="utf-8")
        with pytest.raises(ConfigError, match="seed"):
            load_config(path)

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "absent.ini")

    def test_hash_tracks_values(self):
        a, b = PipelineConfig(), PipelineConfig()
        assert a.config_hash() == b.config_hash()
        b.set("pipeline", "seed", 9)
        assert a.config_hash() != b.config_hash()
        with pytest.raises(ConfigError):
            b.set("pipeline", "nope", 1)


class TestParseHelpers:
    def test_counts_empty_uses_default_copy(self):
        counts = parse_counts("")
        assert counts == dict(DEFAULT_CLASS_COUNTS)
        counts["Water Body"] = 0
        assert DEFAULT_CLASS_COUNTS["Water Body"] != 0

    def test_counts_parses_entries(self):
        assert parse_counts(" Water Body : 3 ,Bare Land:2") == {"Water Body": 3, "Bare Land": 2}

    @pytest.mark.parametrize("raw", ["Water Body", "Water Body:x", "Water Body:-1", ":4"])
    def test_counts_bad_entries(self, raw):
        with pytest.raises(ConfigError):
            parse_counts(raw)

    def test_fractions(self):
        assert parse_fractions("0.7, 0.15,0.15") == (0.7, 0.15, 0.15)
        with pytest.raises(ConfigError):
            parse_fractions("0.5,0.5")
        with pytest.raises(ConfigError):
            parse_fractions("a,b,c")


class TestWorkspaceResolution:
    def run_stats(self, extra):
        # stats without prepare exits 3 but still creates the workspace dir
        return cli.run_command(extra + ["stats"])

    def test_flag_beats_config_and_env(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        monkeypatch.setenv(cli.WORKSPACE_ENV_VAR, str(tmp_path / "env_ws"))
        ini = tmp_path / "run.ini"
        ini.write_text(f"[pipeline]\nworkspace = {tmp_path / 'cfg_ws'}\n", encoding="utf-8")
        assert self.run_stats(["-c", str(ini), "-w", str(tmp_path / "flag_ws")]) == 3
        assert (tmp_path / "flag_ws").is_dir()
        assert not (tmp_path / "cfg_ws").exists()
        assert not (tmp_path / "env_ws").exists()

    def test_config_beats_env(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        monkeypatch.setenv(cli.WORKSPACE_ENV_VAR, str(tmp_path / "env_ws"))
        ini = tmp_path / "run.ini"
        ini.write_text(f"[pipeline]\nworkspace = {tmp_path / 'cfg_ws'}\n", encoding="utf-8")
        assert self.run_stats(["-c", str(ini)]) == 3
        assert (tmp_path / "cfg_ws").is_dir()
        assert not (tmp_path / "env_ws").exists()

    def test_env_beats_default(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        monkeypatch.setenv(cli.WORKSPACE_ENV_VAR, str(tmp_path / "env_ws"))
        assert self.run_stats([]) == 3
        assert (tmp_path / "env_ws").is_dir()
        assert not (tmp_path / "workspace").exists()

    def test_default_is_local_workspace_dir(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        assert self.run_stats([]) == 3
        assert (tmp_path / "workspace").is_dir()


class TestExitCodesAndLock:
    def test_prepare_success(self, tmp_path):
        data = tmp_path / "data.parquet"
        write_parquet_dataset(data, n=6, shape=(12, 12))
        ws = tmp_path / "ws"
        code = cli.run_command(["-w", str(ws), "prepare", "--in", str(data), "--holdout", "2", "--resize-side", "8"])
        assert code == 0
        assert (ws / cli.LAYOUT_DIR / "manifest.json").exists()
        assert (ws / cli.HOLDOUT_DIR / "manifest.json").exists()
        assert not (ws / cli.LOCK_FILE).exists()

    def test_validation_error_is_2(self, tmp_path):
        data = tmp_path / "data.parquet"
        write_parquet_dataset(data, n=4, shape=(12, 12))
        code = cli.run_command(["-w", str(tmp_path / "ws"), "prepare", "--in", str(data), "--holdout", "50"])
        assert code == 2

    def test_config_error_is_2(self, tmp_path):
        ini = tmp_path / "run.ini"
        ini.write_text("[mystery]\nx = 1\n", encoding="utf-8")
        assert cli.run_command(["-c", str(ini), "-w", str(tmp_path / "ws"), "stats"]) == 2

    def test_missing_artifact_is_3(self, tmp_path):
        assert cli.run_command(["-w", str(tmp_path / "ws"), "stats"]) == 3

    def test_missing_input_dataset_is_3(self, tmp_path):
        code = cli.run_command(["-w", str(tmp_path / "ws"), "prepare", "--in", str(tmp_path / "nope.parquet")])
        assert code == 3

    def test_locked_workspace_is_1_and_lock_kept(self, tmp_path, capsys):
        ws = tmp_path / "ws"
        ws.mkdir()
        (ws / cli.LOCK_FILE).write_text("pid=999\n", encoding="utf-8")
        assert cli.run_command(["-w", str(ws), "stats"]) == 1
        assert "locked" in capsys.readouterr().err
        assert (ws / cli.LOCK_FILE).exists()

    def test_unknown_command_is_2(self, capsys):
        assert cli.run_command(["frobnicate"]) == 2
        capsys.readouterr()


class TestProvenance:
    def test_records_appended_per_stage(self, tmp_path):
        data = tmp_path / "data.parquet"
        write_parquet_dataset(data, n=6, shape=(12, 12))
        ws = tmp_path / "ws"
        assert cli.run_command(["-w", str(ws), "prepare", "--in", str(data), "--holdout", "2", "--resize-side", "8"]) == 0
        assert cli.run_command(["-w", str(ws), "stats"]) == 0
        records = provenance.read_records(ws)
        assert [r["command"] for r in records] == ["prepare", "stats"]
        for r in records:
            for entry in r["outputs"].values():
                digest = entry["sha256"]
                assert len(digest) == 64 and set(digest) <= set("0123456789abcdef")
        # a repeated stage appends rather than rewrites
        assert cli.run_command(["-w", str(ws), "stats"]) == 0
        assert [r["command"] for r in provenance.read_records(ws)] == ["prepare", "stats", "stats"]

    def test_failed_stage_leaves_no_record(self, tmp_path):
        ws = tmp_path / "ws"
        assert cli.run_command(["-w", str(ws), "stats"]) == 3
        assert provenance.read_records(ws) == []


class TestReportGuard:
    def test_untracked_artifact_refused(self, tmp_path, capsys):
        ws = tmp_path / "ws"
        ws.mkdir()
        rogue = ws / cli.METRICS_FILE
        rogue.parent.mkdir(parents=True)
        rogue.write_text("{}", encoding="utf-8")
        assert cli.run_command(["-w", str(ws), "report"]) == 1
        assert "no provenance record" in capsys.readouterr().err

    def test_tampered_artifact_refused(self, tmp_path, capsys):
        data = tmp_path / "data.parquet"
        write_parquet_dataset(data, n=6, shape=(12, 12))
        ws = tmp_path / "ws"
        assert cli.run_command(["-w", str(ws), "prepare", "--in", str(data), "--holdout", "2", "--resize-side", "8"]) == 0
        assert cli.run_command(["-w", str(ws), "finetune", "--epochs", "1"]) == 0
        ledger = ws / "finetune" / "train_ledger.jsonl"
        assert ledger.exists()
        with ledger.open("a", encoding="utf-8") as fh:
            fh.write("\n")
        assert cli.run_command(["-w", str(ws), "report"]) == 1
        assert "checksum" in capsys.readouterr().err.lower()

    def test_empty_workspace_report_succeeds(self, tmp_path):
        ws = tmp_path / "ws"
        assert cli.run_command(["-w", str(ws), "report"]) == 0
        html = (ws / cli.REPORT_FILE).read_text(encoding="utf-8")
        assert "has not run" in html


class TestPipelineSmoke:
    def test_small_end_to_end(self, tmp_path):
        data = tmp_path / "data.parquet"
        write_parquet_dataset(data, n=10, shape=(16, 16))
        doc = tmp_path / "notes.txt"
        doc.write_text(
            "Agricultural plots form rectangular grids. Rivers meander through basins. "
            "Snow covers the high ridges in winter. Forests trace the wetter slopes. "
            "Urban areas show regular street patterns under clear skies.",
            encoding="utf-8",
        )
        ws = tmp_path / "ws"
        w = ["-w", str(ws)]
        assert cli.run_command(w + ["prepare", "--in", str(data), "--holdout", "4", "--resize-side", "16"]) == 0
        assert cli.run_command(w + ["stats"]) == 0
        assert cli.run_command(w + ["finetune", "--epochs", "1"]) == 0
        assert cli.run_command(w + ["corpus", "--docs", str(doc), "--min-chars", "40"]) == 0
        assert cli.run_command(w + ["index"]) == 0
        assert cli.run_command(w + ["prompts", "--context-k", "1"]) == 0
        assert cli.run_command(w + [
            "generate", "--counts", "Bare Land:4,Water Body:4", "--width", "16", "--height", "16", "--steps", "2",
        ]) == 0
        assert cli.run_command(w + ["fid", "--sample-size", "2", "--runs", "2"]) == 0
        assert cli.run_command(w + ["train-downstream", "--epochs", "4", "--learning-rate", "0.05"]) == 0
        assert cli.run_command(w + ["report"]) == 0

        fid_payload = json.loads((ws / cli.FID_REPORT_FILE).read_text(encoding="utf-8"))
        assert fid_payload["runs"] == 2 and len(fid_payload["per_run"]) == 2
        metrics = json.loads((ws / cli.METRICS_FILE).read_text(encoding="utf-8"))
        assert set(metrics) >= {"overall_accuracy", "average_accuracy", "macro_f1", "jaccard", "confusion"}
        html = (ws / cli.REPORT_FILE).read_text(encoding="utf-8")
        assert "data:image/png;base64," in html
        assert [r["command"] for r in provenance.read_records(ws)][-1] == "report"
