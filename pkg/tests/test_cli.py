"""Subcommand behaviour through main(argv): files, exit codes, output shapes."""

import csv
import json

import pytest

from boxdec.cli import (EXIT_EXISTS, EXIT_MISSING, EXIT_OK, EXIT_USAGE, main)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A small generated dataset and a briefly trained checkpoint."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    run = root / "run"
    assert main(["gen", "--out", str(data),
                 "--set", "train_scenes=12", "--set", "eval_scenes=4"]) == EXIT_OK
    assert main(["train", "--dataset", str(data / "train.jsonl"),
                 "--out", str(run),
                 "--set", "steps=10", "--set", "rows_per_batch=4",
                 "--set", "log_every=5"]) == EXIT_OK
    return {"data": data, "run": run, "root": root,
            "eval": data / "eval.jsonl",
            "ckpt": run / "checkpoint.npz"}


class TestGen:
    def test_refuses_overwrite_then_force(self, workspace):
        out = str(workspace["data"])
        assert main(["gen", "--out", out,
                     "--set", "train_scenes=12",
                     "--set", "eval_scenes=4"]) == EXIT_EXISTS
        assert main(["gen", "--out", out, "--force",
                     "--set", "train_scenes=12",
                     "--set", "eval_scenes=4"]) == EXIT_OK

    def test_deterministic_bytes(self, workspace, tmp_path):
        first = workspace["data"] / "eval.jsonl"
        again = tmp_path / "again"
        assert main(["gen", "--out", str(again),
                     "--set", "train_scenes=1",
                     "--set", "eval_scenes=4"]) == EXIT_OK
        assert (again / "eval.jsonl").read_bytes() == first.read_bytes()

    def test_writes_manifest(self, workspace):
        manifest = workspace["data"] / "gen.cfg"
        assert "train_scenes = 12" in manifest.read_text()


class TestTrain:
    def test_outputs_exist(self, workspace):
        assert workspace["ckpt"].exists()
        with (workspace["run"] / "loss.csv").open() as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 10

    def test_missing_dataset_exit_code(self, workspace, tmp_path):
        assert main(["train", "--dataset", str(tmp_path / "nope.jsonl"),
                     "--out", str(tmp_path / "r")]) == EXIT_MISSING

    def test_resume_continues_counter(self, workspace, tmp_path, capsys):
        out = tmp_path / "resumed"
        code = main(["train", "--dataset",
                     str(workspace["data"] / "train.jsonl"),
                     "--out", str(out), "--resume", str(workspace["ckpt"]),
                     "--set", "steps=12", "--set", "rows_per_batch=4"])
        assert code == EXIT_OK
        text = capsys.readouterr().out
        assert "resuming" in text and "step 10" in text.replace("   ", " ")


class TestDecode:
    def test_predictions_and_trace(self, workspace, tmp_path):
        preds = tmp_path / "preds.jsonl"
        trace = tmp_path / "trace.json"
        code = main(["decode", "--mode", "fast", "--greedy",
                     "--checkpoint", str(workspace["ckpt"]),
                     "--scene", str(workspace["eval"]),
                     "--max-new-tokens", "24",
                     "--out", str(preds), "--trace", str(trace)])
        assert code == EXIT_OK
        lines = [json.loads(l) for l in preds.read_text().splitlines()]
        assert lines and all({"seed", "query", "gt_boxes", "pred_boxes",
                              "negative"} <= set(l) for l in lines)
        doc = json.loads(trace.read_text())
        assert set(doc) == {"steps", "forward_passes", "fallbacks", "boxes",
                            "seconds", "bps"}
        assert doc["forward_passes"] >= doc["steps"]

    def test_missing_checkpoint(self, workspace, tmp_path):
        assert main(["decode", "--checkpoint", str(tmp_path / "x.npz"),
                     "--scene", str(workspace["eval"]),
                     "--out", str(tmp_path / "p.jsonl")]) == EXIT_MISSING


class TestEval:
    def test_report(self, workspace, tmp_path, capsys):
        report = tmp_path / "report.json"
        code = main(["eval", "--checkpoint", str(workspace["ckpt"]),
                     "--dataset", str(workspace["eval"]),
                     "--mode", "slow", "--greedy",
                     "--max-new-tokens", "24", "--out", str(report)])
        assert code == EXIT_OK
        scores = json.loads(report.read_text())
        for key in ("F1@0.5", "F1@0.95", "F1@mean", "P@mean", "R@mean"):
            assert key in scores
        assert "F1@0.5" in capsys.readouterr().out


class TestBench:
    def test_table_and_ratio_line(self, workspace, tmp_path, capsys):
        out = tmp_path / "bench.csv"
        code = main(["bench", "--modes", "slow,fast",
                     "--checkpoint", str(workspace["ckpt"]),
                     "--dataset", str(workspace["eval"]),
                     "--limit", "2", "--set", "max_new_tokens=24",
                     "--out", str(out)])
        assert code == EXIT_OK
        with out.open() as fh:
            rows = list(csv.DictReader(fh))
        assert [r["mode"] for r in rows] == ["slow", "fast"]
        assert "passes-per-box ratio fast/slow" in capsys.readouterr().out

    def test_unknown_mode(self, workspace, tmp_path):
        assert main(["bench", "--modes", "warp",
                     "--checkpoint", str(workspace["ckpt"]),
                     "--dataset", str(workspace["eval"])]) == EXIT_USAGE


class TestBenchPack:
    def test_efficiency_report(self, tmp_path, capsys):
        out = tmp_path / "pack.csv"
        code = main(["bench-pack", "--batches", "40", "--out", str(out)])
        assert code == EXIT_OK
        assert "efficiency" in capsys.readouterr().out
        with out.open() as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 40
        assert all(float(r["fill"]) <= 1.0 for r in rows)

    def test_bad_distribution(self):
        assert main(["bench-pack", "--dist", "zipf:3"]) == EXIT_USAGE


class TestInspectMask:
    def test_renders_uneven_views(self, capsys):
        # two 6-token blocks against a 6-token causal stream
        assert main(["inspect-mask", "--vis", "2", "--q", "1",
                     "--ntp", "6", "--blk", "12"]) == EXIT_OK
        text = capsys.readouterr().out
        assert "#" in text and "." in text
        assert text.splitlines()[0].strip() == "vvqnnnnnnbbbbbbbbbbbb"

    def test_bad_geometry(self):
        assert main(["inspect-mask", "--blk", "7"]) == EXIT_USAGE


def test_unknown_config_key_is_usage_error(tmp_path):
    assert main(["gen", "--out", str(tmp_path / "d"),
                 "--set", "bogus=1"]) == EXIT_USAGE
