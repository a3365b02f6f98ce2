"""CLI tests: every command end to end on tiny fixtures, exit codes,
config resolution, and artifact round-trips."""

import csv
import json
import shutil
from pathlib import Path

import numpy as np
import pytest

from osfa.cli import main

FIXTURE_XML = Path(__file__).parent / "fixtures" / "mini_book.xml"

# seed 0 leaves every class of both blocks present in the test split
GEN_ARGS = ["--n-seen", "3", "--n-unseen", "2", "--train-pages", "6", "--test-pages", "4",
            "--page-size", "128", "--face-base", "40", "--seed", "0"]
TRAIN_ARGS = ["--epochs", "1", "--episodes", "2",
              "--set", "detector.channels=8", "--set", "detector.query_size=32",
              "--set", "detector.roi_channels=8", "--set", "detector.roi_size=3",
              "--set", "detector.rpn_hidden=4", "--set", "detector.relation_hidden=16",
              "--set", "detector.proposal_count=16"]


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data") / "ds"
    assert main(["gen-data", "--out", str(out)] + GEN_ARGS) == 0
    return out


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory, data_dir):
    out = tmp_path_factory.mktemp("runs") / "run"
    rc = main(["train", "--data", str(data_dir), "--out", str(out),
               "--variant", "channel"] + TRAIN_ARGS)
    assert rc == 0
    return out


class TestGenData:
    def test_deterministic_directories(self, tmp_path):
        a = tmp_path / "a"
        b = tmp_path / "b"
        assert main(["gen-data", "--out", str(a)] + GEN_ARGS) == 0
        assert main(["gen-data", "--out", str(b)] + GEN_ARGS) == 0
        names = sorted(p.name for p in a.iterdir())
        assert names == sorted(p.name for p in b.iterdir())
        for n in names:
            assert (a / n).read_bytes() == (b / n).read_bytes(), n

    def test_zero_seen_is_validation_error(self, tmp_path, capsys):
        rc = main(["gen-data", "--out", str(tmp_path / "x"), "--n-seen", "0"])
        assert rc == 1
        assert "error" in capsys.readouterr().err

    def test_nonempty_dir_refused_without_force(self, tmp_path):
        out = tmp_path / "ds"
        out.mkdir()
        (out / "junk.txt").write_text("x")
        assert main(["gen-data", "--out", str(out)] + GEN_ARGS) == 1
        assert main(["gen-data", "--out", str(out), "--force"] + GEN_ARGS) == 0

    def test_sidecar_schema_validates(self, data_dir):
        payload = json.loads((data_dir / "train.json").read_text())
        assert {"pages", "classes"} == set(payload)
        for page in payload["pages"]:
            assert {"id", "file", "instances"} == set(page)
            assert (data_dir / page["file"]).exists()

    def test_prints_rank_frequency(self, tmp_path, capsys):
        assert main(["gen-data", "--out", str(tmp_path / "p")] + GEN_ARGS) == 0
        out = capsys.readouterr().out
        assert "rank-frequency" in out


class TestTrain:
    def test_run_artifacts(self, run_dir):
        assert (run_dir / "run.json").exists()
        assert (run_dir / "checkpoint.osfa").exists()
        record = json.loads((run_dir / "run.json").read_text())
        assert record["variant"] == "channel"
        assert record["config"]["aug_variant"] == "channel"  # resolved-config echo

    def test_variant_none_is_default_row(self, data_dir, tmp_path):
        out = tmp_path / "run_none"
        assert main(["train", "--data", str(data_dir), "--out", str(out),
                     "--variant", "none"] + TRAIN_ARGS) == 0
        assert json.loads((out / "run.json").read_text())["variant"] == "none"

    def test_variant_fixed_sigma_snapshots_exactly_point_one(self, data_dir, tmp_path):
        out = tmp_path / "run_fixed"
        assert main(["train", "--data", str(data_dir), "--out", str(out),
                     "--variant", "fixed"] + TRAIN_ARGS) == 0
        record = json.loads((out / "run.json").read_text())
        for snap in record["sigma_snapshots"]:
            assert snap["min"] == snap["max"] == 0.10000000149011612  # float32 0.1

    def test_unknown_config_key_rejected(self, data_dir, tmp_path, capsys):
        rc = main(["train", "--data", str(data_dir), "--out", str(tmp_path / "r"),
                   "--set", "learning_rte=0.1"])
        assert rc == 1
        assert "unknown config key" in capsys.readouterr().err

    def test_missing_data_dir_rejected(self, tmp_path):
        assert main(["train", "--data", str(tmp_path / "nope"), "--out",
                     str(tmp_path / "r")]) == 1

    def test_config_file_and_overrides(self, data_dir, tmp_path):
        cfg = tmp_path / "cfg.txt"
        cfg.write_text("# comment\nepochs=1\nepisodes_per_epoch=2\nlearning_rate=0.01\n"
                       "aug_variant=single\n"
                       + "".join(f"detector.{k}={v}\n" for k, v in (
                           ("channels", 8), ("query_size", 32), ("roi_channels", 8),
                           ("roi_size", 3), ("rpn_hidden", 4), ("relation_hidden", 16),
                           ("proposal_count", 16))))
        out = tmp_path / "run_cfg"
        assert main(["train", "--data", str(data_dir), "--out", str(out),
                     "--config", str(cfg), "--set", "aug_variant=fixed"]) == 0
        record = json.loads((out / "run.json").read_text())
        assert record["variant"] == "fixed"  # --set beats the file
        assert record["config"]["learning_rate"] == "0.01"


class TestEval:
    def test_eval_writes_results(self, data_dir, run_dir, tmp_path):
        out = tmp_path / "eval"
        assert main(["eval", "--data", str(data_dir), "--run", str(run_dir),
                     "--out", str(out), "--thr", "0,2,4"]) == 0
        for block in ("seen", "unseen"):
            payload = json.loads((out / f"eval_{block}.json").read_text())
            assert sorted(int(k) for k in payload["thresholded"]) == [0, 2, 4]

    def test_oracle_gt_all_means_one(self, data_dir, run_dir, tmp_path):
        out = tmp_path / "eval_oracle"
        assert main(["eval", "--data", str(data_dir), "--run", str(run_dir),
                     "--out", str(out), "--oracle-gt", "--thr", "0,2"]) == 0
        for block in ("seen", "unseen"):
            payload = json.loads((out / f"eval_{block}.json").read_text())
            for v in payload["thresholded"].values():
                assert v is None or v == 1.0
            assert payload["thresholded"]["0"] == 1.0

    def test_missing_checkpoint_rejected(self, data_dir, tmp_path):
        assert main(["eval", "--data", str(data_dir), "--run", str(tmp_path / "nope"),
                     "--out", str(tmp_path / "e")]) == 1

    def test_eval_result_round_trips(self, data_dir, run_dir, tmp_path):
        from osfa.metrics import EvalResult
        out = tmp_path / "eval_rt"
        assert main(["eval", "--data", str(data_dir), "--run", str(run_dir),
                     "--out", str(out), "--block", "seen", "--thr", "0"]) == 0
        text = (out / "eval_seen.json").read_text()
        assert EvalResult.from_json(text).to_json() == text


class TestReport:
    def test_report_over_matrix(self, data_dir, tmp_path, capsys):
        out = tmp_path / "matrix"
        rc = main(["run-matrix", "--data", str(data_dir), "--out", str(out),
                   "--variants", "none,channel", "--seeds", "0,1",
                   "--thr-seen", "0,2", "--thr-unseen", "0,2"] + TRAIN_ARGS)
        assert rc == 0
        captured = capsys.readouterr().out
        assert "[seen]" in captured and "[unseen]" in captured
        assert (out / "report.csv").exists() and (out / "report.txt").exists()

        # text and csv agree numerically
        assert main(["report", str(out), "--format", "csv",
                     "--out", str(tmp_path / "again.csv")]) == 0
        first = (out / "report.csv").read_text()
        again = (tmp_path / "again.csv").read_text()
        assert first == again

        with open(out / "report.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert {r["variant"] for r in rows} == {"none", "channel"}
        assert all(r["n_seeds"] in ("0", "2") for r in rows)

    def test_report_empty_dir_rejected(self, tmp_path):
        assert main(["report", str(tmp_path)]) == 1


class TestDumpSigma:
    def test_csv_shape(self, run_dir, tmp_path, capsys):
        out = tmp_path / "sigma.csv"
        assert main(["dump-sigma", "--checkpoint", str(run_dir), "--out", str(out)]) == 0
        with open(out) as fh:
            rows = list(csv.DictReader(fh))
        assert [r["channel"] for r in rows] == [str(i) for i in range(8)]
        assert all(float(r["abs_sigma"]) >= 0 for r in rows)

    def test_missing_checkpoint_rejected(self, tmp_path):
        assert main(["dump-sigma", "--checkpoint", str(tmp_path / "none.osfa")]) == 1


class TestParseAnnotations:
    def test_fixture_summary(self, capsys, tmp_path):
        out_json = tmp_path / "book.json"
        assert main(["parse-annotations", str(FIXTURE_XML), "--json", str(out_json)]) == 0
        text = capsys.readouterr().out
        assert "2 characters" in text and "3 faces" in text
        payload = json.loads(out_json.read_text())
        assert len(payload["characters"]) == 2
        assert len(payload["faces"]) == 3

    def test_malformed_rejected_with_path(self, tmp_path, capsys):
        bad = tmp_path / "bad.xml"
        bad.write_text(FIXTURE_XML.read_text().replace('xmin="120"', 'nox="120"'))
        assert main(["parse-annotations", str(bad)]) == 1
        assert "face[0]" in capsys.readouterr().err

    def test_missing_file_rejected(self, tmp_path):
        assert main(["parse-annotations", str(tmp_path / "none.xml")]) == 1


class TestExitCodes:
    def test_unknown_command_is_validation_error(self):
        assert main(["frobnicate"]) == 1

    def test_bad_flag_value_is_validation_error(self):
        assert main(["gen-data", "--out", "/tmp/x", "--seed", "notanint"]) == 1
