import csv
import json

import numpy as np
import pytest

from ppci import dgp
from ppci.cli import main


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """One generate/train/predict pipeline shared by the round-trip tests."""
    root = tmp_path_factory.mktemp("cli")
    train_path = str(root / "train.ppci")
    target_path = str(root / "target.ppci")
    model_path = str(root / "model.ppnn")
    preds_path = str(root / "preds.csv")
    assert main(["generate", "--dgp", "A", "--n", "400", "--seed", "3",
                 "--out", train_path]) == 0
    assert main(["generate", "--dgp", "B", "--n", "400", "--seed", "4",
                 "--out", target_path, "--unlabeled"]) == 0
    assert main(["train", "--data", train_path, "--objective", "erm",
                 "--epochs", "1", "--hidden", "8", "--lr", "0.001",
                 "--out", model_path]) == 0
    assert main(["predict", "--model", model_path, "--data", target_path,
                 "--out", preds_path]) == 0
    return dict(root=root, train=train_path, target=target_path,
                model=model_path, preds=preds_path)


class TestPipeline:
    def test_generate_writes_loadable_dataset(self, workspace):
        ds = dgp.load_dataset(workspace["train"])
        assert len(ds) == 400
        assert ds.labeled

    def test_unlabeled_dataset_and_sealed_truth(self, workspace):
        ds = dgp.load_dataset(workspace["target"])
        assert not ds.labeled
        truth = np.load(workspace["target"] + ".labels.npy")
        assert truth.shape == (400,)
        assert set(np.unique(truth)) <= set(range(10))

    def test_predictions_cover_every_unit(self, workspace):
        with open(workspace["preds"]) as f:
            rows = list(csv.DictReader(f))
        assert len(rows) == 400
        assert [int(r["index"]) for r in rows] == list(range(400))
        assert all(0 <= int(r["y_pred"]) <= 9 for r in rows)

    def test_estimate_from_predictions_prints_record(self, workspace, capsys):
        code = main(["estimate", "--data", workspace["target"],
                     "--predictions", workspace["preds"], "--randomized"])
        assert code == 0
        rec = json.loads(capsys.readouterr().out)
        assert rec["method"] == "aipw"
        assert rec["n"] == 400
        assert rec["ci_low"] <= rec["tau_hat"] <= rec["ci_high"]
        assert rec["alpha"] == 0.05

    def test_estimate_with_labels_on_labeled_data(self, workspace, capsys):
        code = main(["estimate", "--data", workspace["train"], "--labels",
                     "--estimator", "diff"])
        assert code == 0
        rec = json.loads(capsys.readouterr().out)
        assert rec["method"] == "diff_means"
        assert abs(rec["tau_hat"] - 1.5) < 1.0

    def test_calibration_audit_on_labeled_data(self, workspace, capsys):
        code = main(["audit", "--data", workspace["train"],
                     "--model", workspace["model"], "--calibration"])
        assert code == 0
        report = json.loads(capsys.readouterr().out)
        assert "passed" in report
        assert "rows" in report

    def test_lifting_audit_on_labeled_data(self, workspace, capsys):
        code = main(["audit", "--data", workspace["train"],
                     "--model", workspace["model"], "--lifting"])
        assert code == 0
        report = json.loads(capsys.readouterr().out)
        assert "mean_excess" in report


class TestErrorExitCodes:
    def test_missing_file_exits_3(self, tmp_path, capsys):
        code = main(["estimate", "--data", str(tmp_path / "none.ppci"),
                     "--labels"])
        assert code == 3
        assert "data error" in capsys.readouterr().err

    def test_labels_flag_on_unlabeled_data_exits_3(self, workspace, capsys):
        code = main(["estimate", "--data", workspace["target"], "--labels"])
        assert code == 3
        assert "unlabeled" in capsys.readouterr().err

    def test_audit_without_labels_exits_3(self, workspace, capsys):
        code = main(["audit", "--data", workspace["target"],
                     "--model", workspace["model"], "--calibration"])
        assert code == 3
        err = capsys.readouterr().err
        assert "annotations" in err

    def test_estimate_without_outcome_source_exits_2(self, workspace, capsys):
        code = main(["estimate", "--data", workspace["target"]])
        assert code == 2
        assert "config error" in capsys.readouterr().err

    def test_bad_benchmark_config_exits_2(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"train_spec": "A"}))
        assert main(["benchmark", "--config", str(bad)]) == 2

    def test_corrupt_model_exits_3(self, workspace, tmp_path):
        bad = tmp_path / "bad.ppnn"
        bad.write_bytes(b"oops")
        code = main(["predict", "--model", str(bad),
                     "--data", workspace["target"],
                     "--out", str(tmp_path / "p.csv")])
        assert code == 3

    def test_prediction_count_mismatch_exits_3(self, workspace, tmp_path):
        short = tmp_path / "short.csv"
        short.write_text("index,y_pred\n0,1\n")
        code = main(["estimate", "--data", workspace["target"],
                     "--predictions", str(short), "--randomized"])
        assert code == 3


class TestBenchmarkCommand:
    def test_summary_and_csv(self, tmp_path, capsys):
        cfg = dict(train_spec="A", target_specs=["B"], n_train=50,
                   n_target=400, replications=2,
                   methods=[{"name": "ground_truth"}], base_seed=1)
        cfg_path = tmp_path / "bench.json"
        cfg_path.write_text(json.dumps(cfg))
        out_path = tmp_path / "results.csv"
        code = main(["benchmark", "--config", str(cfg_path),
                     "--out", str(out_path)])
        assert code == 0
        out = capsys.readouterr().out
        assert "ground_truth" in out
        assert "coverage" in out
        with open(out_path) as f:
            rows = list(csv.DictReader(f))
        assert len(rows) == 2
        assert {r["method"] for r in rows} == {"ground_truth"}
