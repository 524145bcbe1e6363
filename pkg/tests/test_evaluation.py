import csv
from dataclasses import asdict

import numpy as np
import pytest
import torch

from rsstereo import evaluation as ev
from rsstereo.config import desk_model
from rsstereo.data import DomainDescriptor, SynthSpec, compute_stats, generate_dataset, write_dataset
from rsstereo.models import build_model
from rsstereo.models.output import ModelOutput
from rsstereo.training import save_checkpoint
from rsstereo.verification import oracles as orc


def test_d1_both_conditions():
    assert ev.d1(np.full((4, 4), 104.0), np.full((4, 4), 100.0)) == 0.0
    assert ev.d1(np.full((4, 4), 14.0), np.full((4, 4), 10.0)) == 100.0
    assert ev.d1(np.full((4, 4), 13.0), np.full((4, 4), 10.0)) == 0.0  # exactly 3 px is not counted


def test_epe_matches_loop_and_skips_nan(rng):
    gt = rng.uniform(-10, 10, (6, 7))
    gt[0, :3] = np.nan
    pred = gt + rng.normal(size=gt.shape)
    mask = rng.random(gt.shape) < 0.8
    assert ev.epe(pred, gt, mask) == pytest.approx(orc.epe(pred, gt, mask), rel=1e-12)
    assert ev.d1(pred, gt, mask) == orc.d1(pred, gt, mask)


def test_small_errors_never_counted(rng):
    gt = rng.uniform(-50, 50, (8, 8))
    pred = gt + rng.uniform(-3, 3, gt.shape)
    assert ev.d1(pred, gt) == 0.0


def test_metrics_mirror_invariant(rng):
    gt = rng.uniform(-20, 20, (5, 9))
    pred = gt + rng.normal(scale=4, size=gt.shape)
    mask = rng.random(gt.shape) < 0.7
    m = lambda a: a[:, ::-1]
    assert ev.epe(-m(pred), -m(gt), m(mask)) == pytest.approx(ev.epe(pred, gt, mask))
    assert ev.d1(-m(pred), -m(gt), m(mask)) == pytest.approx(ev.d1(pred, gt, mask))


class _Oracle(torch.nn.Module):
    """Returns the stored ground truth batch by batch."""

    def __init__(self, gts):
        super().__init__()
        self.gts = list(gts)
        self.cfg = desk_model("cascade")

    def forward(self, left, right):
        d = self.gts.pop(0)
        return ModelOutput(disparities=[torch.nn.functional.pad(d, (0, left.shape[-1] - d.shape[-1],
                                                                    0, left.shape[-2] - d.shape[-2]))])


def test_perfect_stub_scores_zero():
    samples = generate_dataset(SynthSpec(height=32, width=32, seed=2), 3)
    gts = [torch.from_numpy(np.stack([s.disparity for s in samples[i:i + 2]])[:, None]) for i in (0, 2)]
    res = ev.evaluate_model(_Oracle(gts), samples, compute_stats(samples), batch_size=2)
    assert res.epe == 0.0 and res.d1 == 0.0 and res.pixel_count == 3 * 32 * 32


@pytest.fixture
def matrix_inputs(tmp_path):
    ckpts = []
    for name, dom in (("m_a", "dom_a"), ("m_b", "dom_b")):
        torch.manual_seed(len(ckpts))
        model = build_model(desk_model("cascade"))
        path = save_checkpoint(tmp_path / name / "final.pt", model, extra={"train_domain": asdict(DomainDescriptor(dom, dom, "cam"))})
        ckpts.append(str(path))
    sets = []
    for dom in ("dom_a", "dom_b"):
        samples = generate_dataset(SynthSpec(height=32, width=32, dataset_id=dom, city=dom, sensor="cam", seed=len(sets)), 2)
        sets.append(str(write_dataset(tmp_path / dom, samples, stats=compute_stats(samples))))
    return ckpts, sets


def test_matrix_cells_match_single_eval(matrix_inputs, tmp_path):
    ckpts, sets = matrix_inputs
    cells = ev.cross_domain_matrix(ckpts, sets, tmp_path / "out")
    assert len(cells) == 4 and all(c.error is None for c in cells)
    single = ev.evaluate_checkpoint(ckpts[1], ev.load_dataset(sets[0], require_stats=True))
    match = [c for c in cells if c.model_id == "m_b" and c.domain.dataset_id == "dom_a"][0]
    assert match.epe == pytest.approx(single.epe) and match.d1 == pytest.approx(single.d1)
    assert sum(c.same_domain for c in cells) == 2
    table = (tmp_path / "out" / "table.txt").read_text()
    assert table.count("*") >= 2
    assert len(ev.read_results(tmp_path / "out")) == 4


def test_matrix_order_independent(matrix_inputs):
    ckpts, sets = matrix_inputs
    key = lambda c: (c.model_id, c.domain.dataset_id, c.epe)
    a = sorted(map(key, ev.cross_domain_matrix(ckpts, sets)))
    b = sorted(map(key, ev.cross_domain_matrix(ckpts[::-1], sets[::-1])))
    assert a == b


def test_matrix_missing_testset_errors_one_column(matrix_inputs, tmp_path):
    ckpts, sets = matrix_inputs
    cells = ev.cross_domain_matrix(ckpts[:1], [sets[0], str(tmp_path / "missing")])
    assert cells[0].error is None and cells[1].error is not None
    assert "error" in ev.render_table(cells)


def test_scatter_round_trip(tmp_path, monkeypatch):
    import matplotlib.axes

    lines = []
    real_plot = matplotlib.axes.Axes.plot
    monkeypatch.setattr(matplotlib.axes.Axes, "plot",
                        lambda self, *a, **k: lines.append(a[:2]) or real_plot(self, *a, **k))
    results = []
    for i, (sup, uns) in enumerate([(1.0, 0.8), (2.0, 2.5), (1.5, 1.2)]):
        for manner, val in (("supervised", sup), ("unsupervised", uns)):
            results.append(ev.MetricResult(val, 1.0, 10, DomainDescriptor(f"test{i}"), f"{manner}{i}",
                                           DomainDescriptor("train"), "cascade", manner))
    plot, data, warns = ev.emit_scatter(results, tmp_path)
    rows = list(csv.DictReader(data.open()))
    assert warns == 0 and plot.exists() and plot.stat().st_size > 0
    (xs, ys), = lines
    assert xs == ys and xs[0] == 0 and xs[1] > 2.5  # y = x divider spans every point
    assert [(float(r["supervised_epe"]), float(r["unsupervised_epe"])) for r in rows] == [(1.0, 0.8), (2.0, 2.5), (1.5, 1.2)]


def test_scatter_warns_on_unpaired(tmp_path):
    lone = [ev.MetricResult(1.0, 1.0, 10, DomainDescriptor("t"), "m", DomainDescriptor("train"), "cascade", "supervised")]
    with pytest.warns(UserWarning):
        _, data, warns = ev.emit_scatter(lone, tmp_path)
    assert warns >= 1 and len(data.read_text().splitlines()) == 1
