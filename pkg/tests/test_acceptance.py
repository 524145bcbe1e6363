"""Acceptance criteria, each checked at its stated tolerance.

The desk-scale training experiment is shared by criteria 5 to 7 and takes
roughly ten minutes on one CPU core.
"""
import csv
import json
import time

import numpy as np
import pytest
import torch
import yaml

from rsstereo.cli import main as cli_main
from rsstereo.config import paper_constants
from rsstereo.data import SynthSpec, generate_dataset
from rsstereo.evaluation import d1, epe
from rsstereo.losses import occlusion_from_fb
from rsstereo.photometric import warp_horizontal
from rsstereo.verification import oracles as orc
from rsstereo.verification.desk import THRESHOLDS, run_desk_experiment
from rsstereo.verification.suite import REGISTRY, run_gradient_suite, run_oracle_suite

from test_config import GOLDEN


@pytest.fixture(scope="session")
def desk_record(tmp_path_factory):
    t0 = time.time()
    record = run_desk_experiment("clean", tmp_path_factory.mktemp("desk"), seed=0)
    record["wall_seconds"] = time.time() - t0
    return record


def test_criterion_1_oracle_suite(acceptance):
    t0 = time.time()
    reports = run_oracle_suite(seed=0, instances=100)
    elapsed = time.time() - t0
    failed = [r.operation for r in reports if not r.passed]
    ok = not failed and len(reports) == len(REGISTRY) and elapsed < 300
    acceptance(1, "oracle suite", ok, f"{len(reports)} ops x 100 instances, {elapsed:.0f}s, failed={failed}")
    assert ok


def test_criterion_2_gradient_suite(acceptance):
    t0 = time.time()
    reports = run_gradient_suite(seed=0)
    elapsed = time.time() - t0
    worst = max(r.max_rel_error for r in reports)
    ok = all(r.passed for r in reports) and elapsed < 300
    acceptance(2, "finite-difference gradients", ok, f"{len(reports)} ops, worst rel {worst:.1e}, {elapsed:.0f}s")
    assert ok


def test_criterion_3_warp_and_occlusion(acceptance):
    rng = np.random.default_rng(0)
    identity = True
    for _ in range(20):
        H, W = rng.integers(4, 40, 2)
        src = torch.from_numpy(rng.normal(size=(2, 3, H, W)).astype(np.float32))
        out, oob = warp_horizontal(src, torch.zeros(2, 1, H, W))
        identity &= bool(torch.equal(out, src)) and not bool(oob.any())
    inter = union = 0
    for s in generate_dataset(SynthSpec(seed=100), 16):
        occ = occlusion_from_fb(torch.from_numpy(s.disparity)[None, None], torch.from_numpy(s.disparity_right)[None, None],
                                tau=1.0)[0, 0].numpy().astype(bool)
        inter += int((occ & s.occlusion).sum())
        union += int((occ | s.occlusion).sum())
    iou = inter / union
    ok = identity and iou >= 0.9
    acceptance(3, "warp identity and occlusion recovery", ok, f"identity={identity}, IoU={iou:.3f}")
    assert ok


def test_criterion_4_metric_definitions(acceptance):
    case_a = d1(np.full((8, 8), 104.0), np.full((8, 8), 100.0))
    case_b = d1(np.full((8, 8), 14.0), np.full((8, 8), 10.0))
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(100):
        gt = rng.uniform(-30, 30, (9, 11))
        gt[rng.random(gt.shape) < 0.1] = np.nan
        pred = gt + rng.normal(scale=3, size=gt.shape)
        worst = max(worst, abs(epe(pred, gt) - orc.epe(pred, gt, np.ones(gt.shape, bool))))
    ok = case_a == 0.0 and case_b == 100.0 and worst <= 1e-9
    acceptance(4, "D1 both-condition rule and EPE", ok, f"D1 cases {case_a:.0f}%/{case_b:.0f}%, EPE max diff {worst:.1e}")
    assert ok


def test_criterion_5_desk_training(acceptance, desk_record):
    r = desk_record
    ok = r["final_epe"] < THRESHOLDS["epe"] and r["steps"] <= THRESHOLDS["max_steps"] and r["wall_seconds"] < 1800
    acceptance(5, "desk-scale unsupervised training", ok,
               f"EPE {r['final_epe']:.3f} px after {r['steps']} steps, {r['wall_seconds'] / 60:.1f} min")
    assert ok


def test_criterion_6_consistency_criterion(acceptance, desk_record):
    r = desk_record
    corr = r["spearman"] >= THRESHOLDS["spearman"] and r["epochs"] >= 10
    stop = r["violation_stopped_early"] and r["violation_restored_is_min"]
    ok = corr and stop
    acceptance(6, "CE tracks EPE and stops early", ok,
               f"Spearman {r['spearman']:.2f} over {r['epochs']} epochs; violation run stopped after "
               f"{r['violation_epochs_run']}/{r['violation_max_epochs']} epochs, restored epoch "
               f"{r['violation_restored_epoch']} (min CE: {r['violation_restored_is_min']})")
    assert ok


def test_criterion_7_signed_disparity(acceptance, desk_record):
    r = desk_record
    ok = r["mirror_gap"] < THRESHOLDS["mirror_gap"]
    acceptance(7, "mirrored scenes", ok,
               f"EPE {r['final_epe']:.3f} vs mirrored {r['mirrored_epe']:.3f}, gap {r['mirror_gap']:.3f} px")
    assert ok


def test_criterion_8_paper_constants(acceptance):
    ok = paper_constants() == json.loads(GOLDEN.read_text())
    acceptance(8, "configuration defaults reproduce published constants", ok)
    assert ok


def test_criterion_9_end_to_end(acceptance, tmp_path):
    t0 = time.time()
    codes = []

    def run(*argv):
        codes.append(cli_main([str(a) for a in argv]))
        return codes[-1]

    def dump(name, data):
        path = tmp_path / name
        path.write_text(yaml.safe_dump(data))
        return path

    train_spec = dump("a.yaml", {"count": 16, "dataset_id": "city_a", "city": "a", "seed": 1})
    other_spec = dump("b.yaml", {"count": 8, "dataset_id": "city_b", "city": "b", "seed": 2,
                                 "brightness_delta": 0.1})
    run("synth", "--config", train_spec, "--out", tmp_path / "city_a")
    run("synth", "--config", other_spec, "--out", tmp_path / "city_b")
    ckpts = []
    for manner in ("supervised", "unsupervised"):
        cfg = dump(f"{manner}.yaml", {"model": {"family": "cascade"},
                                      "train": {"manner": manner, "max_epochs": 2, "steps_per_epoch": 4},
                                      "data": {"train": str(tmp_path / "city_a"), "eval": str(tmp_path / "city_b")}})
        run("train", "--config", cfg, "--preset", "desk", "--out", tmp_path / manner)
        ckpts.append(tmp_path / manner / "final.pt")
    run("eval", ckpts[1], tmp_path / "city_b", "--out", tmp_path / "eval")
    run("matrix", "--checkpoints", *ckpts, "--testsets", tmp_path / "city_a", tmp_path / "city_b",
        "--out", tmp_path / "matrix")
    run("scatter", tmp_path / "matrix")
    elapsed = time.time() - t0

    table = (tmp_path / "matrix" / "table.txt").read_text() if (tmp_path / "matrix" / "table.txt").exists() else ""
    cells = [json.loads(l) for l in (tmp_path / "matrix" / "results.jsonl").read_text().splitlines()]
    rows = list(csv.DictReader((tmp_path / "matrix" / "scatter.csv").open()))
    ok = (all(c == 0 for c in codes) and elapsed < 600 and len(cells) == 4
          and all(c["error"] is None for c in cells) and "*" in table and len(rows) == 2
          and (tmp_path / "matrix" / "scatter.png").stat().st_size > 0)
    acceptance(9, "synth -> train -> eval -> matrix -> scatter", ok,
               f"exit codes {codes}, {len(cells)} cells, {len(rows)} scatter pairs, {elapsed:.0f}s")
    assert ok
