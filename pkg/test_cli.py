"""End-to-end command tests through the typer app."""

import json

import pytest
from typer.testing import CliRunner

from config import EXIT_DATA, EXIT_IO, EXIT_USAGE, env_int
from ingest import read_predictions
from main import app

runner = CliRunner()

PAIR_A = {"fbox": [0, 0, 100, 200], "vbox": [0, 0, 60, 100]}
PAIR_B = {"fbox": [23, 0, 100, 200], "vbox": [42, 0, 60, 100]}
FAR = {"fbox": [500, 0, 10, 20], "vbox": [500, 0, 10, 20]}


def write_jsonl(path, *records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")
    return path


@pytest.fixture
def side_by_side(tmp_path):
    return write_jsonl(tmp_path / "preds.jsonl", {"ID": "fig", "dtboxes": [
        {**PAIR_A, "score": 0.9},
        {**PAIR_B, "score": 0.8},
    ]})


@pytest.fixture
def two_people(tmp_path):
    return write_jsonl(tmp_path / "gt.odgt", {"ID": "img", "gtboxes": [
        {"tag": "person", **PAIR_A, "extra": {"ignore": 0}},
        {"tag": "person", "fbox": [300, 0, 100, 200], "vbox": [300, 0, 100, 150], "extra": {"ignore": 0}},
    ]})


def last_json(result):
    return json.loads(result.stdout.strip().splitlines()[-1])


class TestNms:
    def test_r2_keeps_both(self, side_by_side, tmp_path):
        out = tmp_path / "out.jsonl"
        result = runner.invoke(app, ["nms", str(side_by_side), str(out), "--method", "r2", "-t", "0.5"])
        assert result.exit_code == 0, result.output
        assert len(read_predictions(out)[0].dets) == 2

    def test_greedy_full_keeps_one(self, side_by_side, tmp_path):
        out = tmp_path / "out.jsonl"
        result = runner.invoke(app, ["nms", str(side_by_side), str(out), "--method", "greedy-full"])
        assert result.exit_code == 0, result.output
        dets = read_predictions(out)[0].dets
        assert len(dets) == 1 and dets[0].score == 0.9

    def test_output_echoes_config(self, side_by_side, tmp_path):
        out = tmp_path / "out.jsonl"
        runner.invoke(app, ["nms", str(side_by_side), str(out), "-m", "r2", "-q"])
        header = out.read_text().splitlines()[0]
        assert header.startswith("# ")
        echo = json.loads(header[2:])
        assert echo["method"] == "greedy-visible"
        assert echo["threshold"] == 0.5

    def test_empty_input(self, tmp_path):
        src = write_jsonl(tmp_path / "empty.jsonl")
        out = tmp_path / "out.jsonl"
        result = runner.invoke(app, ["nms", str(src), str(out)])
        assert result.exit_code == 0, result.output
        assert read_predictions(out) == []

    @pytest.mark.parametrize("method", ["greedy-full", "r2"])
    def test_rerun_changes_nothing(self, side_by_side, tmp_path, method):
        first, second = tmp_path / "first.jsonl", tmp_path / "second.jsonl"
        runner.invoke(app, ["nms", str(side_by_side), str(first), "-m", method, "-q"])
        result = runner.invoke(app, ["nms", str(first), str(second), "-m", method, "-q"])
        assert result.exit_code == 0, result.output
        body = lambda p: p.read_text().splitlines()[1:]
        assert body(first) == body(second)

    def test_output_sorted_by_image_id(self, tmp_path):
        src = write_jsonl(tmp_path / "p.jsonl",
                          {"ID": "b", "dtboxes": []}, {"ID": "a", "dtboxes": [{**FAR, "score": 0.3}]})
        out = tmp_path / "out.jsonl"
        runner.invoke(app, ["nms", str(src), str(out), "-q", "-w", "2"])
        assert [r.image_id for r in read_predictions(out)] == ["a", "b"]

    def test_adaptive_reads_density(self, tmp_path):
        src = write_jsonl(tmp_path / "p.jsonl", {"ID": "fig", "dtboxes": [
            {**PAIR_A, "score": 0.9, "density": 0.7},
            {**PAIR_B, "score": 0.8, "density": 0.7},
        ]})
        out = tmp_path / "out.jsonl"
        result = runner.invoke(app, ["nms", str(src), str(out), "-m", "adaptive", "-q"])
        assert result.exit_code == 0, result.output
        assert len(read_predictions(out)[0].dets) == 2

    def test_adaptive_without_density(self, side_by_side, tmp_path):
        result = runner.invoke(app, ["nms", str(side_by_side), str(tmp_path / "o"), "-m", "adaptive"])
        assert result.exit_code == EXIT_DATA

    def test_unknown_method_is_usage_error(self, side_by_side, tmp_path):
        result = runner.invoke(app, ["nms", str(side_by_side), str(tmp_path / "o"), "-m", "matrix"])
        assert result.exit_code == EXIT_USAGE

    def test_missing_input_is_io_error(self, tmp_path):
        result = runner.invoke(app, ["nms", str(tmp_path / "nope.jsonl"), str(tmp_path / "o")])
        assert result.exit_code == EXIT_IO

    def test_malformed_input_is_data_error(self, tmp_path):
        src = tmp_path / "bad.jsonl"
        src.write_text("{oops\n")
        result = runner.invoke(app, ["nms", str(src), str(tmp_path / "o")])
        assert result.exit_code == EXIT_DATA


class TestEval:
    def test_perfect_predictions(self, two_people, tmp_path):
        preds = write_jsonl(tmp_path / "p.jsonl", {"ID": "img", "dtboxes": [
            {**PAIR_A, "score": 1.0},
            {"fbox": [300, 0, 100, 200], "vbox": [300, 0, 100, 150], "score": 1.0},
        ]})
        result = runner.invoke(app, ["eval", str(two_people), str(preds), "--json"])
        assert result.exit_code == 0, result.output
        report = last_json(result)
        assert report["full"]["mr_raw"] == 0.0
        assert report["full"]["ap"] == 1.0
        assert report["full"]["recall"] == 1.0
        assert report["visible"]["recall"] == 1.0

    def test_empty_predictions(self, two_people, tmp_path):
        preds = write_jsonl(tmp_path / "p.jsonl", {"ID": "img", "dtboxes": []})
        result = runner.invoke(app, ["eval", str(two_people), str(preds), "--json"])
        assert result.exit_code == 0, result.output
        assert last_json(result)["full"]["mr"] == 1.0

    def test_staircase(self, two_people, tmp_path):
        preds = write_jsonl(tmp_path / "p.jsonl", {"ID": "img", "dtboxes": [
            {**PAIR_A, "score": 0.9},
            {**FAR, "score": 0.8},
        ]})
        result = runner.invoke(app, ["eval", str(two_people), str(preds), "--json", "--no-visible"])
        assert result.exit_code == 0, result.output
        report = last_json(result)
        assert report["full"]["mr"] == pytest.approx(0.5)
        assert "visible" not in report

    def test_curves_written(self, two_people, tmp_path):
        preds = write_jsonl(tmp_path / "p.jsonl", {"ID": "img", "dtboxes": [{**PAIR_A, "score": 0.9}]})
        curves = tmp_path / "curves"
        result = runner.invoke(app, ["eval", str(two_people), str(preds), "--curves", str(curves)])
        assert result.exit_code == 0, result.output
        lines = (curves / "fppi_full.txt").read_text().splitlines()
        assert lines[0].startswith("# ")
        assert lines[1:] == ["0 0.5"]
        assert (curves / "pr_visible.txt").exists()

    def test_id_mismatch(self, two_people, tmp_path):
        preds = write_jsonl(tmp_path / "p.jsonl", {"ID": "other", "dtboxes": []})
        result = runner.invoke(app, ["eval", str(two_people), str(preds)])
        assert result.exit_code == EXIT_DATA
        assert "img" in result.output and "other" in result.output

    def test_unknown_subset(self, two_people, tmp_path):
        preds = write_jsonl(tmp_path / "p.jsonl", {"ID": "img", "dtboxes": []})
        result = runner.invoke(app, ["eval", str(two_people), str(preds), "--subset", "tiny"])
        assert result.exit_code == EXIT_USAGE


class TestSimulate:
    def test_fixed_seed_reproduces_files(self, tmp_path):
        outputs = []
        for k in range(2):
            gt, pred = tmp_path / f"gt{k}.odgt", tmp_path / f"pred{k}.jsonl"
            result = runner.invoke(app, ["simulate", "--scenes", "3", "--seed", "4",
                                         "--gt-out", str(gt), "--pred-out", str(pred)])
            assert result.exit_code == 0, result.output
            outputs.append((gt.read_bytes(), pred.read_bytes()))
        assert outputs[0] == outputs[1]
        assert outputs[0][0].startswith(b"# ")

    def test_oracle_on_disjoint_annotations(self, tmp_path):
        gt = write_jsonl(tmp_path / "gt.odgt", {"ID": "img", "gtboxes": [
            {"fbox": [x, 0, 20, 50], "vbox": [x, 0, 20, 30]} for x in (0, 40, 80)
        ]})
        result = runner.invoke(app, ["simulate", "--oracle", "--gt", str(gt), "--json"])
        assert result.exit_code == 0, result.output
        rows = last_json(result)["rows"]
        assert len(rows) == 12
        assert all(r["fraction"] == 1.0 for r in rows)

    def test_crowded_gap(self, tmp_path):
        table = tmp_path / "survival.tsv"
        result = runner.invoke(app, ["simulate", "--preset", "crowded", "--scenes", "30", "--oracle",
                                     "--thresholds", "0.5", "--json", "--table-out", str(table)])
        assert result.exit_code == 0, result.output
        rows = {r["method"]: r for r in last_json(result)["rows"]}
        assert rows["greedy-visible"]["kept"] > rows["greedy-full"]["kept"]
        assert table.read_text().splitlines()[1] == "method\tthreshold\tkept\ttotal\tfraction"

    def test_invalid_spec_is_usage_error(self, tmp_path):
        result = runner.invoke(app, ["simulate", "--people=-3", "--gt-out", str(tmp_path / "g")])
        assert result.exit_code == EXIT_USAGE

    def test_person_too_large_is_usage_error(self, tmp_path):
        result = runner.invoke(app, ["simulate", "--height", "1000", "--gt-out", str(tmp_path / "g")])
        assert result.exit_code == EXIT_USAGE
        assert not (tmp_path / "g").exists()

    def test_output_required(self):
        assert runner.invoke(app, ["simulate"]).exit_code == EXIT_USAGE


class TestBench:
    def test_zero_size(self):
        result = runner.invoke(app, ["bench", "--sizes", "0", "--plain"])
        assert result.exit_code == 0, result.output
        lines = result.stdout.strip().splitlines()
        assert lines[0].startswith("# ")
        assert lines[1] == "n\trepeat\tmean_seconds\tkept"
        n, repeat, seconds, kept = lines[2].split("\t")
        assert (n, repeat, kept) == ("0", "3", "0")
        assert float(seconds) >= 0

    @pytest.mark.parametrize("method", ["greedy-full", "r2", "soft-gaussian", "adaptive"])
    def test_methods_run(self, method):
        result = runner.invoke(app, ["bench", "--sizes", "0,10,50", "-m", method, "--plain", "-r", "1"])
        assert result.exit_code == 0, result.output
        assert len(result.stdout.strip().splitlines()) == 5

    def test_table_output(self):
        result = runner.invoke(app, ["bench", "--sizes", "10", "-r", "1"])
        assert result.exit_code == 0, result.output

    def test_bad_sizes(self):
        assert runner.invoke(app, ["bench", "--sizes", "ten"]).exit_code == EXIT_USAGE


class TestEnvironment:
    @pytest.mark.parametrize("raw, expected", [("", 5), ("8", 8), ("0", 0), ("eight", 5), ("-2", 5)])
    def test_env_int(self, monkeypatch, raw, expected):
        monkeypatch.setenv("PAIRNMS_TEST_WORKERS", raw)
        assert env_int("PAIRNMS_TEST_WORKERS", 5) == expected

    def test_env_int_unset(self, monkeypatch):
        monkeypatch.delenv("PAIRNMS_TEST_WORKERS", raising=False)
        assert env_int("PAIRNMS_TEST_WORKERS", 3) == 3
