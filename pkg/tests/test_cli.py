import csv
import json
import math

import numpy as np
import pytest

from conflictlab import cli


def run(argv):
    return cli.main(argv)


@pytest.fixture(scope="module")
def encounter_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    assert run(["simulate", "--preset", "encounters", "--events", "6",
                "--seed", "3", "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def trained_model(tmp_path_factory, encounter_corpus):
    out = tmp_path_factory.mktemp("model") / "model.json"
    assert run(["train", "--data", str(encounter_corpus), "--mode", "sparse",
                "--m", "16", "--beta", "5", "--seed", "1", "--epochs", "3",
                "--batch-size", "512", "--out", str(out)]) == 0
    return out


class TestSimulate:
    def test_context_preset_writes_samples(self, tmp_path):
        out = tmp_path / "ctx"
        assert run(["simulate", "--preset", "sinusoidal", "--samples", "50",
                    "--seed", "7", "--out", str(out)]) == 0
        with (out / "samples.csv").open() as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 50
        assert set(rows[0]) == {"theta1", "theta2", "theta3", "log_s"}
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["seed"] == 7
        assert manifest["command"] == "simulate"

    def test_encounters_write_trajectories_and_manifest(self, encounter_corpus):
        assert (encounter_corpus / "trajectories.csv").exists()
        lines = (encounter_corpus / "events.jsonl").read_text().strip().splitlines()
        assert len(lines) == 6
        record = json.loads(lines[0])
        assert {"event_id", "ego_id", "target_id", "t_start", "t_end", "truth"} <= set(record)

    def test_identical_seed_identical_output(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert run(["simulate", "--preset", "linear", "--samples", "30",
                        "--seed", "11", "--out", str(out)]) == 0
        assert (a / "samples.csv").read_bytes() == (b / "samples.csv").read_bytes()

    def test_unknown_preset_fails_cleanly(self, tmp_path, capsys):
        code = run(["simulate", "--preset", "bogus", "--out", str(tmp_path / "x")])
        assert code == 1
        err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
        assert "bogus" in err["detail"]


class TestTrain:
    def test_sparse_train_writes_model_curves_figure(self, trained_model):
        doc = json.loads(trained_model.read_text())
        assert doc["kind"] == "sparse"
        curves = trained_model.with_name("model_curves.csv")
        assert curves.exists()
        header = curves.read_text().splitlines()[0]
        assert header == "epoch,train_loss,val_loss,val_nll"
        assert curves.with_suffix(".png").exists()
        manifest = json.loads(
            trained_model.with_suffix(".json.manifest.json").read_text()
        )
        assert "test_nll" in manifest

    def test_train_on_context_samples_csv(self, tmp_path):
        corpus = tmp_path / "ctx"
        assert run(["simulate", "--preset", "sinusoidal", "--samples", "300",
                    "--seed", "2", "--out", str(corpus)]) == 0
        model_path = tmp_path / "m.json"
        assert run(["train", "--data", str(corpus), "--mode", "sparse", "--m", "8",
                    "--beta", "1", "--epochs", "3", "--seed", "0",
                    "--out", str(model_path)]) == 0
        assert model_path.exists()


class TestAssess:
    def build_toy_corpus(self, tmp_path):
        corpus = tmp_path / "toy"
        corpus.mkdir()
        rows = ["vehicle_id,time,x,y,vx,vy,ax,length,width"]
        for k in range(160):
            t = k * 0.05
            rows.append(f"ego,{t},{15.0 * t},0.0,15.0,0.0,0.0,4.0,2.0")
            rows.append(f"lead,{t},{24.0 + 10.0 * t},0.0,10.0,0.0,0.0,4.0,2.0")
        (corpus / "trajectories.csv").write_text("\n".join(rows) + "\n")
        (corpus / "events.jsonl").write_text(json.dumps({
            "event_id": "toy", "kind": "generic", "source": "trajectories.csv",
            "ego_id": "ego", "target_id": "lead",
            "t_start": 0.0, "t_end": 7.95, "frame_rate": 20.0,
        }) + "\n")
        return corpus

    def test_ttc_known_value_in_csv(self, tmp_path):
        corpus = self.build_toy_corpus(tmp_path)
        out = tmp_path / "assess.csv"
        assert run(["assess", "--metric", "ttc", "--data", str(corpus),
                    "--out", str(out)]) == 0
        with out.open() as fh:
            rows = list(csv.DictReader(fh))
        first = rows[0]
        assert first["event_id"] == "toy"
        # 20 m bounding-box gap closing at 5 m/s.
        assert float(first["value"]) == pytest.approx(4.0, abs=1e-6)

    def test_unified_csv_columns(self, tmp_path, encounter_corpus, trained_model):
        out = tmp_path / "unified.csv"
        assert run(["assess", "--metric", "unified", "--data", str(encounter_corpus),
                    "--model", str(trained_model), "--n-list", "1,17",
                    "--out", str(out)]) == 0
        with out.open() as fh:
            header = fh.readline().strip().split(",")
        assert header == ["event_id", "time", "s", "mu", "sigma", "exceedance",
                          "n_max", "p_at_1", "p_at_17"]

    def test_missing_model_exits_one_with_error_json(self, tmp_path, encounter_corpus, capsys):
        missing = tmp_path / "nope.json"
        code = run(["assess", "--metric", "unified", "--data", str(encounter_corpus),
                    "--model", str(missing), "--out", str(tmp_path / "x.csv")])
        assert code == 1
        err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
        assert err["path"] == str(missing)


class TestWarnEval:
    def test_report_and_exports(self, tmp_path, encounter_corpus, trained_model):
        report_path = tmp_path / "report.json"
        assert run(["warn-eval", "--data", str(encounter_corpus),
                    "--metrics", "ttc,drac,unified", "--model", str(trained_model),
                    "--out", str(report_path)]) == 0
        report = json.loads(report_path.read_text())
        assert set(report["metrics"]) == {"ttc", "drac", "unified"}
        for block in report["metrics"].values():
            assert 0.0 <= block["auc"] <= 1.0
            assert len(block["outcomes"]) == report["n_events"]
        assert report_path.with_name("report_roc.csv").exists()
        assert report_path.with_name("report_outcomes.csv").exists()
        assert report_path.with_name("report_roc.png").exists()

    def test_argparse_usage_exit(self, encounter_corpus):
        with pytest.raises(SystemExit) as exc:
            cli.main(["warn-eval", "--bogus-flag", "x", "--data", str(encounter_corpus)])
        assert exc.value.code == 2


class TestLanechangeEval:
    def build_lanechange_corpus(self, tmp_path):
        corpus = tmp_path / "lc"
        corpus.mkdir()
        rows = ["vehicle_id,time,x,y,vx,vy,ax,length,width"]
        n, dt = 300, 0.04
        for k in range(n):
            t = k * dt
            lat = 3.5 * min(max((t - 4.0) / 3.0, 0.0), 1.0)
            rows.append(f"ego,{t},{25.0 * t},{lat},25.0,0.0,0.0,4.5,2.1")
            rows.append(f"lead,{t},{15.0 + 20.0 * t},3.5,20.0,0.0,0.0,4.5,2.0")
        (corpus / "trajectories.csv").write_text("\n".join(rows) + "\n")
        return corpus

    def test_lanechange_report(self, tmp_path, trained_model):
        corpus = self.build_lanechange_corpus(tmp_path)
        report_path = tmp_path / "lc_report.json"
        assert run(["lanechange-eval", "--data", str(corpus),
                    "--model", str(trained_model), "--lanes", "0,3.5,7",
                    "--lane-width", "3.5", "--out", str(report_path)]) == 0
        report = json.loads(report_path.read_text())
        assert report["n_lane_changes"] == 1
        assert report["n_paired_events"] == 1
        assert set(report["conflict_partition"]) == {"both", "ttc_only", "unified_only", "neither"}
        assert sum(report["conflict_partition"].values()) == 1
        assert report_path.with_name("lc_report_episodes.csv").exists()


class TestExport:
    def test_roc_export_from_report(self, tmp_path, encounter_corpus, trained_model):
        report_path = tmp_path / "report.json"
        assert run(["warn-eval", "--data", str(encounter_corpus), "--metrics", "ttc",
                    "--model", str(trained_model), "--no-figures",
                    "--out", str(report_path)]) == 0
        out = tmp_path / "flat"
        assert run(["export", "--kind", "roc", "--report", str(report_path),
                    "--out", str(out)]) == 0
        text = (out / "roc_points.csv").read_text()
        assert text.splitlines()[0] == "metric,threshold,fpr,tpr"

    def test_heatmap_export(self, tmp_path, encounter_corpus, trained_model):
        out = tmp_path / "heat"
        assert run(["export", "--kind", "heatmap", "--model", str(trained_model),
                    "--data", str(encounter_corpus), "--event-id", "e0000",
                    "--time", "6.0", "--n", "17", "--cells", "9",
                    "--out", str(out)]) == 0
        with (out / "heatmap.csv").open() as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 81
        assert (out / "heatmap_density.png").exists()
        assert (out / "heatmap_probability.png").exists()
        centre = [r for r in rows if float(r["s"]) == 0.0]
        assert len(centre) == 1 and float(centre[0]["probability"]) == 1.0

    def test_unknown_event_id(self, tmp_path, encounter_corpus, trained_model, capsys):
        code = run(["export", "--kind", "heatmap", "--model", str(trained_model),
                    "--data", str(encounter_corpus), "--event-id", "missing",
                    "--out", str(tmp_path / "h")])
        assert code == 1
        err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
        assert "missing" in err["detail"]
