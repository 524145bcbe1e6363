import csv
import filecmp
import json
import shutil

import pytest
import yaml

from rsstereo.cli import main
from rsstereo.data import load_dataset, write_dataset
from rsstereo.evaluation import evaluate_checkpoint


def _write(path, data):
    path.write_text(yaml.safe_dump(data))
    return str(path)


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    spec = _write(root / "spec.yaml", {"height": 32, "width": 32, "count": 8, "dataset_id": "clia", "city": "a"})
    assert main(["synth", "--config", spec, "--seed", "1", "--out", str(root / "data")]) == 0
    run = _write(root / "run.yaml", {"model": {"family": "cascade"},
                                     "train": {"max_epochs": 1, "steps_per_epoch": 1, "batch_size": 2, "crop_size": 32},
                                     "data": {"train": str(root / "data")}})
    assert main(["train", "--config", run, "--preset", "desk", "--out", str(root / "run")]) == 0
    return root


def test_synth_layout_and_determinism(work, tmp_path):
    ds = load_dataset(work / "data", require_stats=True)
    assert len(ds) == 8 and ds.has_gt and (work / "data" / "occ").is_dir()
    spec = _write(tmp_path / "s.yaml", {"height": 32, "width": 32, "count": 8, "dataset_id": "clia", "city": "a"})
    assert main(["synth", "--config", spec, "--seed", "1", "--out", str(tmp_path / "again")]) == 0
    for sub in ("left", "right", "disp"):
        cmp = filecmp.dircmp(work / "data" / sub, tmp_path / "again" / sub)
        assert not cmp.diff_files and not cmp.left_only


def test_synth_invalid_spec(tmp_path, capsys):
    bad = _write(tmp_path / "bad.yaml", {"height": 32, "width": 32, "disparity_range": [-20, 20]})
    assert main(["synth", "--config", bad, "--out", str(tmp_path / "x")]) == 2
    assert "invalid synth spec" in capsys.readouterr().err


def test_train_artifacts(work):
    run = work / "run"
    assert (run / "config.json").exists() and (run / "metrics.jsonl").exists()
    assert (run / "final.pt").exists() and (run / "stats.json").exists()
    assert not (work / "data" / "checkpoints").exists()  # dataset untouched


def test_train_supervised_without_labels(work, tmp_path, capsys):
    stripped = [s.without_gt() for s in load_dataset(work / "data").samples()]
    write_dataset(tmp_path / "nogt", stripped)
    cfg = _write(tmp_path / "run.yaml", {"model": {"family": "cascade"}, "train": {"manner": "supervised"},
                                         "data": {"train": str(tmp_path / "nogt")}})
    assert main(["train", "--config", cfg, "--preset", "desk", "--out", str(tmp_path / "r")]) == 2
    assert "ground-truth" in capsys.readouterr().err


def test_train_pretrained_enables_early_stop(work, tmp_path):
    cfg = _write(tmp_path / "ft.yaml", {
        "model": {"family": "cascade"},
        "train": {"max_epochs": 2, "steps_per_epoch": 1, "batch_size": 2, "crop_size": 32,
                  "use_pretrained": True, "pretrained_checkpoint": str(work / "run" / "final.pt")},
        "data": {"train": str(work / "data")}})
    assert main(["train", "--config", cfg, "--preset", "desk", "--out", str(tmp_path / "ft")]) == 0
    start = json.loads((tmp_path / "ft" / "metrics.jsonl").read_text().splitlines()[0])
    assert start["early_stop"] is True


def test_train_bad_config(tmp_path):
    cfg = _write(tmp_path / "bad.yaml", {"model": {"family": "nope"}, "data": {"train": "x"}})
    assert main(["train", "--config", cfg, "--preset", "desk"]) == 2
    assert main(["train"]) == 2
    assert main(["frobnicate"]) == 2


def test_eval_record_matches_module(work, tmp_path, capsys):
    ckpt = str(work / "run" / "final.pt")
    assert main(["eval", ckpt, str(work / "data"), "--out", str(tmp_path)]) == 0
    printed = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    direct = evaluate_checkpoint(ckpt, load_dataset(work / "data", require_stats=True)).to_record()
    assert printed == direct == json.loads((tmp_path / "eval.json").read_text())


def test_eval_errors(work, tmp_path):
    ckpt = str(work / "run" / "final.pt")
    assert main(["eval", ckpt, str(tmp_path / "nowhere")]) == 2
    shutil.copytree(work / "data", tmp_path / "nostats")
    (tmp_path / "nostats" / "stats.json").unlink()
    assert main(["eval", ckpt, str(tmp_path / "nostats")]) == 2


def test_matrix_partial_failure_and_scatter(work, tmp_path):
    ckpt = str(work / "run" / "final.pt")
    out = tmp_path / "m"
    assert main(["matrix", "--checkpoints", ckpt, "--testsets", str(work / "data"), str(tmp_path / "gone"),
                 "--out", str(out)]) == 0
    records = [json.loads(l) for l in (out / "results.jsonl").read_text().splitlines()]
    assert [r["error"] is None for r in records] == [True, False]
    assert main(["scatter", str(out), "--out", str(tmp_path / "plot")]) == 0
    rows = list(csv.reader((tmp_path / "plot" / "scatter.csv").open()))
    assert len(rows) == 1  # header only: a single manner has nothing to pair
