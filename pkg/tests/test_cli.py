import json
import math
import shutil
import subprocess
import sys

import numpy as np
import pytest

from conformal_kit import io
from conformal_kit.cli import main, parse_size_bins
from conformal_kit.core import CalibrationArtifact, Interval, Labels, Mask
from conformal_kit.rcps import LossTable


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture
def cal_csv(tmp_path, rng):
    scores = rng.uniform(size=500)
    p = tmp_path / "cal.csv"
    io.write_scores_csv(p, scores)
    return p, io.read_scores_csv(p)[0]


class TestCalibrate:
    def test_lac_scores(self, tmp_path, cal_csv, capsys):
        path, scores = cal_csv
        out = tmp_path / "art.json"
        assert run("calibrate", "--method", "lac", "--alpha", 0.1, "--scores", path, "--out", out) == 0
        art = io.read_artifact(out)
        assert art.threshold == np.sort(scores)[450] and art.n == 500
        assert "qhat=" in capsys.readouterr().out

    def test_from_outputs(self, tmp_path):
        p = tmp_path / "o.csv"
        io.write_outputs_csv(p, "quantile", [[2, 5], [0, 1], [1, 2]], [6, 0.5, 4])
        out = tmp_path / "art.json"
        assert run("calibrate", "--method", "cqr", "--alpha", 0.5, "--outputs", p, "--out", out) == 0
        assert io.read_artifact(out).threshold == 1.0  # scores [1, -0.5, 2], k = 2

    def test_missing_file(self, tmp_path, capsys):
        code = run("calibrate", "--method", "lac", "--alpha", 0.1, "--scores", tmp_path / "no.csv", "--out", tmp_path / "a.json")
        assert code == 2 and "no.csv" in capsys.readouterr().err

    def test_bad_alpha(self, tmp_path, cal_csv, capsys):
        with pytest.raises(SystemExit) as e:
            run("calibrate", "--method", "lac", "--alpha", 1.5, "--scores", cal_csv[0], "--out", tmp_path / "a.json")
        assert e.value.code == 2 and "alpha" in capsys.readouterr().err

    def test_strict_infeasible(self, tmp_path, capsys):
        p = tmp_path / "s.csv"
        io.write_scores_csv(p, [0.4])
        out = tmp_path / "a.json"
        assert run("calibrate", "--method", "lac", "--alpha", 0.1, "--scores", p, "--out", out) == 0
        assert io.read_artifact(out).threshold == math.inf
        assert run("calibrate", "--method", "lac", "--alpha", 0.1, "--scores", p, "--out", out, "--strict") == 3
        assert "k=2" in capsys.readouterr().err

    def test_schema_mismatch(self, tmp_path):
        p = tmp_path / "o.csv"
        io.write_outputs_csv(p, "softmax", [[0.5, 0.5]], [0])
        assert run("calibrate", "--method", "cqr", "--alpha", 0.1, "--outputs", p, "--out", tmp_path / "a.json") == 2


class TestPredict:
    def _art(self, tmp_path, method, q):
        p = tmp_path / f"{method}.json"
        io.write_artifact(p, CalibrationArtifact(method, 0.1, 100, q))
        return p

    def test_lac(self, tmp_path):
        outputs = tmp_path / "t.csv"
        io.write_outputs_csv(outputs, "softmax", [[0.5, 0.3, 0.2]])
        out = tmp_path / "sets.jsonl"
        assert run("predict", "--artifact", self._art(tmp_path, "lac", 0.75), "--outputs", outputs, "--out", out) == 0
        assert out.read_text() == '{"labels": [0, 1]}\n'
        assert run("predict", "--artifact", self._art(tmp_path, "lac", math.inf), "--outputs", outputs, "--out", out) == 0
        assert io.read_sets(out) == [Labels((0, 1, 2))]

    def test_cqr(self, tmp_path):
        outputs = tmp_path / "t.csv"
        io.write_outputs_csv(outputs, "quantile", [[2, 5]])
        out = tmp_path / "sets.jsonl"
        assert run("predict", "--artifact", self._art(tmp_path, "cqr", 1.0), "--outputs", outputs, "--out", out) == 0
        assert json.loads(out.read_text()) == {"interval": [1.0, 6.0]}

    def test_bayes_grid_union(self, tmp_path):
        outputs = tmp_path / "t.csv"
        io.write_outputs_csv(outputs, "density", [[0.1, 0.7, 0.2]])
        out = tmp_path / "sets.jsonl"
        code = run("predict", "--artifact", self._art(tmp_path, "bayes", -0.15), "--outputs", outputs, "--grid", "0,2", "--out", out)
        assert code == 0
        assert json.loads(out.read_text()) == {"labels": [1, 2], "union": [[1.0, 2.0]]}

    def test_schema_mismatch(self, tmp_path, capsys):
        outputs = tmp_path / "t.csv"
        io.write_outputs_csv(outputs, "softmax", [[0.5, 0.5]])
        code = run("predict", "--artifact", self._art(tmp_path, "cqr", 1.0), "--outputs", outputs, "--out", tmp_path / "s.jsonl")
        assert code == 2 and "quantile" in capsys.readouterr().err

    def test_rcps_masks(self, tmp_path):
        art = tmp_path / "r.json"
        io.write_artifact(art, CalibrationArtifact("rcps", 0.1, 10, 0.5, delta=0.1))
        px = tmp_path / "px.jsonl"
        io.write_pixel_scores(px, np.array([[[0.2, 0.6], [0.5, 0.9]]]))
        out = tmp_path / "m.jsonl"
        assert run("predict", "--artifact", art, "--pixel-scores", px, "--out", out) == 0
        assert io.read_sets(out) == [Mask(np.array([[0, 1], [1, 1]]))]


class TestRcps:
    def test_all_zero_losses(self, tmp_path):
        t = tmp_path / "l.csv"
        io.write_loss_table(t, LossTable([0.0, 0.5, 1.0], np.zeros((500, 3))))
        out = tmp_path / "a.json"
        assert run("rcps", "--losses", t, "--alpha", 0.1, "--delta", 0.1, "--out", out) == 0
        art = io.read_artifact(out)
        assert art.threshold == 0.0 and art.delta == 0.1 and art.alpha == 0.1 and art.n == 500

    def test_non_monotone_exit_4(self, tmp_path, capsys):
        t = tmp_path / "l.csv"
        t.write_text("lambda:0,lambda:1,lambda:2\n1,0,0\n0,0,0\n0.1,0.3,0\n")
        assert run("rcps", "--losses", t, "--alpha", 0.1, "--delta", 0.1, "--out", tmp_path / "a.json") == 4
        assert "row 2" in capsys.readouterr().err

    def test_fallback_warns(self, tmp_path, capsys):
        t = tmp_path / "l.csv"
        io.write_loss_table(t, LossTable([0.0, 1.0], [[1.0, 0.0]] * 5))
        out = tmp_path / "a.json"
        assert run("rcps", "--losses", t, "--alpha", 0.1, "--delta", 0.1, "--out", out) == 0
        assert "warning" in capsys.readouterr().err
        assert io.read_artifact(out).metadata["lambda_max_fallback"] == "true"


class TestEvaluate:
    def test_reports(self, tmp_path):
        sets = [Labels((0,)), Labels((0, 1)), Labels((1, 2, 3)), Labels((2,))] * 5
        labels = [0, 1, 0, 3] * 5
        groups = [0, 0, 1, 1] * 5
        io.write_sets(tmp_path / "s.jsonl", sets)
        io.write_csv(tmp_path / "y.csv", ["label", "grp"], zip(labels, groups))
        out = tmp_path / "rep"
        code = run("evaluate", "--sets", tmp_path / "s.jsonl", "--labels", tmp_path / "y.csv",
                   "--groups", "grp", "--size-bins", "1,2,3+", "--out-dir", out)
        assert code == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["coverage"] == 0.5
        assert summary["fsc"] == 0.0 and summary["group_coverage"] == {"0": 1.0, "1": 0.0}
        assert summary["size_bin_coverage"] == {"1": 0.5, "2": 1.0, "3+": 0.0} and summary["ssc"] == 0.0
        fsc_rows = (out / "fsc.csv").read_text().splitlines()
        assert fsc_rows == ["group,n,coverage", "0,10,1", "1,10,0", "min,20,0"]
        ssc_rows = (out / "ssc.csv").read_text().splitlines()
        assert ssc_rows[0] == "size_bin,n,coverage" and ssc_rows[-1] == "min,20,0"
        for name in ("coverage.csv", "sizes.csv", "coverage.svg", "sizes.svg"):
            assert (out / name).exists()
        assert (out / "coverage.svg").read_text().startswith("<svg")

    def test_split_column(self, tmp_path):
        sets = [Interval(0, 1)] * 4
        io.write_sets(tmp_path / "s.jsonl", sets)
        io.write_csv(tmp_path / "y.csv", ["y", "split"], [[0.5, 0], [2, 0], [0.5, 1], [0.5, 1]])
        out = tmp_path / "rep"
        assert run("evaluate", "--sets", tmp_path / "s.jsonl", "--labels", tmp_path / "y.csv", "--label-column", "y",
                   "--split-column", "split", "--out-dir", out) == 0
        assert (out / "coverage.csv").read_text().splitlines() == ["split,n,coverage", "0,2,0.5", "1,2,1"]

    def test_masks(self, tmp_path):
        truth = [Mask(np.eye(2)), Mask(np.ones((2, 2)))]
        io.write_sets(tmp_path / "s.jsonl", [Mask(np.eye(2)), Mask(np.eye(2))])
        io.write_masks(tmp_path / "t.jsonl", truth)
        out = tmp_path / "rep"
        assert run("evaluate", "--sets", tmp_path / "s.jsonl", "--labels", tmp_path / "t.jsonl", "--out-dir", out) == 0
        assert json.loads((out / "summary.json").read_text())["coverage"] == 0.5

    def test_alignment_mismatch(self, tmp_path, capsys):
        io.write_sets(tmp_path / "s.jsonl", [Labels((0,))] * 3)
        io.write_csv(tmp_path / "y.csv", ["label"], [[0], [1]])
        assert run("evaluate", "--sets", tmp_path / "s.jsonl", "--labels", tmp_path / "y.csv", "--out-dir", tmp_path / "r") == 2
        assert "alignment" in capsys.readouterr().err

    def test_parse_size_bins(self):
        assert parse_size_bins("1,2,3+") == (1.0, 2.0, 3.0)
        assert parse_size_bins("0,5") == (0.0, 5.0)
        for bad in ("", "2,1", "1+,2"):
            with pytest.raises(Exception):
                parse_size_bins(bad)


class TestSimulate:
    def test_single_split_categorical(self, tmp_path):
        out = tmp_path / "sim"
        assert run("simulate", "--world", "categorical", "--method", "aps", "--n", 200, "--splits", 1, "--out-dir", out) == 0
        rows = (out / "splits.csv").read_text().splitlines()
        assert rows[0] == "split,threshold,coverage,mean_size" and len(rows) == 2
        summary = json.loads((out / "summary.json").read_text())
        assert summary["report"]["n_splits"] == 1 and isinstance(summary["pass"], bool)
        assert {"dataset.csv", "artifact.json", "coverage.svg", "sizes.svg"} <= {p.name for p in out.iterdir()}

    def test_dataset_feeds_calibrate(self, tmp_path):
        out = tmp_path / "sim"
        assert run("simulate", "--world", "gaussian", "--method", "scalar", "--n", 100, "--splits", 3, "--out-dir", out) == 0
        art = tmp_path / "a.json"
        assert run("calibrate", "--method", "scalar", "--alpha", 0.1, "--outputs", out / "dataset.csv", "--out", art) == 0
        assert io.read_artifact(art).n == 200

    def test_deterministic_summary(self, tmp_path):
        args = ["simulate", "--world", "segmentation", "--n", 150, "--splits", 5, "--seed", 7, "--n-fresh", 500]
        assert run(*args, "--out-dir", tmp_path / "a") == 0
        assert run(*args, "--out-dir", tmp_path / "b", "--threads", 2) == 0
        assert (tmp_path / "a" / "summary.json").read_bytes() == (tmp_path / "b" / "summary.json").read_bytes()
        assert (tmp_path / "a" / "splits.csv").read_bytes() == (tmp_path / "b" / "splits.csv").read_bytes()
        # the loss table written by simulate is accepted by the rcps subcommand
        assert run("rcps", "--losses", tmp_path / "a" / "losses.csv", "--alpha", 0.1, "--delta", 0.1,
                   "--out", tmp_path / "r.json") == 0

    def test_method_world_mismatch(self, tmp_path):
        assert run("simulate", "--world", "segmentation", "--method", "lac", "--out-dir", tmp_path / "x") == 2
        assert run("simulate", "--world", "categorical", "--method", "cqr", "--n", 20, "--out-dir", tmp_path / "y") == 2


@pytest.mark.skipif(shutil.which("conformal-kit") is None, reason="console script not installed")
def test_console_script(tmp_path):
    res = subprocess.run(["conformal-kit", "calibrate", "--method", "lac", "--alpha", "2", "--scores", "x", "--out", "y"],
                         capture_output=True, text=True)
    assert res.returncode == 2


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "conformal_kit.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "simulate" in res.stdout
