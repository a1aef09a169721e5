import csv
import json

import pytest

from diffmcc import cli, data, model

CONFIG = """\
window = 5
lstm_sizes = 4
lr = 0.02
batch_size = 32
loss = weighted_ce(w_pos=3)
epochs = 3
split_seed = 0
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    ds = data.make_motif_dataset(200, 30, window=5, motif={5: "W"}, noise=0.0, seed=21)
    with open(root / "toy.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sequence", "label"])
        for r in ds:
            w.writerow([r.sequence, r.label])
    (root / "run.cfg").write_text(CONFIG)
    return root


@pytest.fixture(scope="module")
def trained(workspace):
    code = cli.main(["train", "--config", str(workspace / "run.cfg"), "--data", str(workspace / "toy.csv"),
                     "--out", str(workspace / "m" / "model.dmcc"), "--svg"])
    assert code == 0
    return workspace / "m" / "model.dmcc"


def error_of(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def test_train_writes_all_outputs(trained):
    for suffix in (".dmcc", ".epochs.csv", ".pr_curve.csv", ".pr_curve.svg"):
        assert trained.with_name("model" + suffix).is_file()
    assert trained.with_name("model.pr_curve.svg").read_text().startswith("<svg")
    params, meta = model.load(trained)
    assert {"threshold", "split_seed", "thresholds", "candidate"} <= meta.keys()


def test_train_rerun_reproduces_curve(workspace, trained):
    out = workspace / "again" / "model.dmcc"
    assert cli.main(["train", "--config", str(workspace / "run.cfg"), "--data", str(workspace / "toy.csv"), "--out", str(out)]) == 0
    assert out.with_name("model.pr_curve.csv").read_bytes() == trained.with_name("model.pr_curve.csv").read_bytes()
    assert out.read_bytes() == trained.read_bytes()


def test_train_missing_dataset(workspace, capsys):
    code = cli.main(["train", "--config", str(workspace / "run.cfg"), "--data", str(workspace / "nope.csv"), "--out", str(workspace / "x.dmcc")])
    assert code == 2
    err = error_of(capsys)
    assert err["error"] == "input" and "nope.csv" in err["message"]


def test_usage_error_exit_code(capsys):
    assert cli.main(["train"]) == 2
    assert error_of(capsys)["error"] == "usage"
    assert cli.main([]) == 2


def test_bad_config_is_input_error(workspace, capsys):
    (workspace / "bad.cfg").write_text("window = 7\n")
    code = cli.main(["train", "--config", str(workspace / "bad.cfg"), "--data", str(workspace / "toy.csv"), "--out", str(workspace / "x.dmcc")])
    assert code == 2 and error_of(capsys)["error"] == "input"


def test_predict_training_window_reproduces_forward(trained, capsys):
    params, _ = model.load(trained)
    ds = data.load_dataset(trained.parent.parent / "toy.csv", window=5)
    seq = ds[0].sequence
    expected = float(model.predict_proba(params, data.one_hot(data.tokenize([seq])))[0])
    assert cli.main(["predict", seq, "--model", str(trained)]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "position,window,probability,label"
    pos, win, prob, _ = lines[1].split(",")
    assert win == seq and float(prob) == expected


def test_predict_scans_a_protein(trained, capsys):
    assert cli.main(["predict", "MKSAAGTLLW", "--model", str(trained)]) == 0
    rows = capsys.readouterr().out.strip().splitlines()[1:]
    assert [r.split(",")[0] for r in rows] == ["3", "7"]
    assert rows[0].split(",")[1] == "---MKSAAGTL" == data.cut_window("MKSAAGTLLW", 2, 5)


def test_predict_sequence_without_sites(trained, capsys):
    assert cli.main(["predict", "MKAAGLLW", "--model", str(trained)]) == 2


def test_predict_csv_three_rows_and_threshold_zero(trained, tmp_path):
    src = tmp_path / "q.csv"
    src.write_text("Sequences\nAAAASAAAAAW\nCCCCTCCCCCC\nDDDDSDDDDDD\n")
    out = tmp_path / "out.csv"
    assert cli.main(["predict", str(src), "--model", str(trained), "-t", "0", "-bs", "2", "--out", str(out)]) == 0
    rows = list(csv.reader(out.open()))
    assert len(rows) == 4
    assert rows[0] == ["sequence", "position", "window", "probability", "label", "error"]
    assert all(r[4] == "1" for r in rows[1:])
    assert all(0 < float(r[3]) < 1 for r in rows[1:])


def test_predict_csv_default_output_under_home(trained, tmp_path, monkeypatch):
    src = tmp_path / "q.csv"
    src.write_text("Sequences\nAAAASAAAAAW\nKKKK\n")
    monkeypatch.setenv("DIFFMCC_HOME", str(tmp_path / "home"))
    assert cli.main(["predict", str(src), "--model", str(trained)]) == 0
    rows = list(csv.reader((tmp_path / "home" / "q_predictions.csv").open()))
    assert rows[2][-1] == "no S/T site"


def test_predict_missing_model(tmp_path, capsys):
    assert cli.main(["predict", "AAAASAAAAAA", "--model", str(tmp_path / "none.dmcc")]) == 2


def test_eval_matches_train_curve(trained, tmp_path):
    out = tmp_path / "eval.csv"
    assert cli.main(["eval", "--model", str(trained), "--data", str(trained.parent.parent / "toy.csv"), "--out", str(out)]) == 0
    assert out.read_bytes() == trained.with_name("model.pr_curve.csv").read_bytes()


def test_sweep_writes_results_store(workspace, tmp_path, capsys):
    (tmp_path / "grid.cfg").write_text(CONFIG.replace("lstm_sizes = 4", "lstm_sizes = 2 | 4").replace("epochs = 3", "epochs = 1"))
    assert cli.main(["sweep", "--grid", str(tmp_path / "grid.cfg"), "--data", str(workspace / "toy.csv"), "--out", str(tmp_path / "res")]) == 0
    assert len((tmp_path / "res" / "cv_ranked.csv").read_text().splitlines()) == 3


def test_nested_emits_five_curves_and_summary(workspace, tmp_path):
    (tmp_path / "n.cfg").write_text(CONFIG.replace("epochs = 3", "epochs = 1"))
    assert cli.main(["nested", "--config", str(tmp_path / "n.cfg"), "--data", str(workspace / "toy.csv"), "--out", str(tmp_path / "n")]) == 0
    names = sorted(p.name for p in (tmp_path / "n").iterdir())
    assert names == [f"nested_fold{k}.pr_curve.csv" for k in range(1, 6)] + ["nested_summary.csv"]
    summary = (tmp_path / "n" / "nested_summary.csv").read_text().splitlines()
    assert summary[0] == "metric,fold1,fold2,fold3,fold4,fold5,mean,std"


def test_output_csvs_end_with_newline(trained):
    for suffix in (".epochs.csv", ".pr_curve.csv"):
        assert trained.with_name("model" + suffix).read_text().endswith("\n")
