"""EPE/D1 metrics, cross-domain evaluation matrices and supervised-vs-unsupervised scatter reports."""
from __future__ import annotations

import csv
import json
import logging
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch

from .data.io import DatasetError, StereoDataset, load_dataset
from .data.sample import DomainDescriptor, NormalizationStats, StereoSample, normalize, to_batch

log = logging.getLogger(__name__)

D1_ABS = 3.0
D1_REL = 0.05


def _as_tensor(x):
    return x if torch.is_tensor(x) else torch.as_tensor(np.asarray(x, dtype=np.float64))


def _valid_mask(gt, mask):
    valid = torch.isfinite(gt)
    if mask is not None:
        valid = valid & _as_tensor(mask).bool()
    return valid


def d1_counts(pred, gt, mask=None) -> Tuple[float, float, float]:
    """(sum of absolute errors, count of D1 outliers, valid count) over valid pixels."""
    pred, gt = _as_tensor(pred), _as_tensor(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {tuple(pred.shape)} and ground truth {tuple(gt.shape)} differ")
    valid = _valid_mask(gt, mask)
    err = (pred - gt).abs()[valid].double()
    bad = (err > D1_ABS) & (err > D1_REL * gt[valid].abs().double())
    return float(err.sum()), float(bad.sum()), float(valid.sum())


def epe(pred, gt, mask=None) -> float:
    """Mean absolute disparity error over valid pixels (NaN ground truth is invalid)."""
    s, _, n = d1_counts(pred, gt, mask)
    if n == 0:
        raise ValueError("EPE over an empty mask")
    return s / n


def d1(pred, gt, mask=None) -> float:
    """Percentage of valid pixels whose error exceeds 3 px and 5% of the ground truth."""
    _, b, n = d1_counts(pred, gt, mask)
    if n == 0:
        raise ValueError("D1 over an empty mask")
    return 100.0 * b / n


@dataclass
class MetricResult:
    epe: Optional[float]
    d1: Optional[float]
    pixel_count: int
    domain: DomainDescriptor
    model_id: str
    train_domain: Optional[DomainDescriptor] = None
    family: str = ""
    manner: str = ""
    train_stats_id: Optional[str] = None
    error: Optional[str] = None

    @property
    def same_domain(self) -> bool:
        return self.train_domain is not None and self.train_domain.same_domain(self.domain)

    def to_record(self) -> dict:
        rec = asdict(self)
        rec["same_domain"] = self.same_domain
        for k in ("epe", "d1"):
            if rec[k] is not None:
                rec[k] = round(rec[k], 6)
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "MetricResult":
        rec = dict(rec)
        rec.pop("same_domain", None)
        rec["domain"] = DomainDescriptor(**rec["domain"])
        if rec.get("train_domain"):
            rec["train_domain"] = DomainDescriptor(**rec["train_domain"])
        return cls(**rec)


@torch.no_grad()
def evaluate_model(model, samples: Sequence[StereoSample], stats: NormalizationStats, model_id: str = "model",
                   train_domain: Optional[DomainDescriptor] = None, manner: str = "",
                   train_stats_id: Optional[str] = None, batch_size: int = 4,
                   override_stats: bool = False) -> MetricResult:
    """EPE/D1 of ``model`` on raw labeled samples normalized with the test set's own ``stats``."""
    samples = list(samples)
    if not samples:
        raise ValueError("empty test set")
    model.eval()
    s_sum = b_sum = n_sum = 0.0
    divisor = model.cfg.divisor
    for i in range(0, len(samples), batch_size):
        chunk = [normalize(s, stats, override_stats) for s in samples[i:i + batch_size]]
        if any(not s.has_gt for s in chunk):
            raise ValueError("evaluation needs ground-truth disparity")
        batch = to_batch(chunk)
        left, right = batch["left"], batch["right"]
        H, W = left.shape[-2:]
        ph, pw = (-H) % divisor, (-W) % divisor
        if ph or pw:
            left = torch.nn.functional.pad(left, (0, pw, 0, ph), mode="replicate")
            right = torch.nn.functional.pad(right, (0, pw, 0, ph), mode="replicate")
        pred = model(left, right).final[..., :H, :W]
        s, b, n = d1_counts(pred, batch["disparity"], batch["valid"])
        s_sum, b_sum, n_sum = s_sum + s, b_sum + b, n_sum + n
    if n_sum == 0:
        raise ValueError("no valid ground-truth pixels in the test set")
    return MetricResult(s_sum / n_sum, 100.0 * b_sum / n_sum, int(n_sum), samples[0].domain, model_id,
                        train_domain, model.cfg.family, manner, train_stats_id)


def _checkpoint_train_domain(ckpt) -> Optional[DomainDescriptor]:
    extra = ckpt.get("extra") or {}
    dom = extra.get("train_domain")
    if dom:
        return DomainDescriptor(**dom)
    return None


def evaluate_checkpoint(path, dataset: StereoDataset) -> MetricResult:
    from .training import model_from_checkpoint

    model, ckpt = model_from_checkpoint(path)
    if dataset.stats is None:
        raise DatasetError(f"{dataset.root} has no stats.json")
    return evaluate_model(model, dataset.samples(), dataset.stats, model_id=Path(path).parent.name or str(path),
                          train_domain=_checkpoint_train_domain(ckpt), manner=ckpt.get("manner", ""),
                          train_stats_id=ckpt.get("stats_id"))


def cross_domain_matrix(checkpoints: Sequence, testsets: Sequence, out_dir=None) -> List[MetricResult]:
    """Evaluate every (checkpoint, test set) pair; failing cells carry an ``error`` and the run continues."""
    cells: List[MetricResult] = []
    datasets = {}
    for t in testsets:
        try:
            ds = t if isinstance(t, StereoDataset) else load_dataset(t, require_stats=True)
            if ds.stats is None:
                raise DatasetError(f"{ds.root} has no stats.json")
            datasets[str(t)] = ds
        except (DatasetError, OSError) as exc:
            datasets[str(t)] = exc
    for c in checkpoints:
        for t in testsets:
            ds = datasets[str(t)]
            if isinstance(ds, Exception):
                cells.append(MetricResult(None, None, 0, DomainDescriptor(str(t)), Path(c).parent.name,
                                          error=str(ds)))
                continue
            try:
                cells.append(evaluate_checkpoint(c, ds))
            except Exception as exc:  # one bad cell must not abort the matrix
                log.warning("cell %s x %s failed: %s", c, t, exc)
                cells.append(MetricResult(None, None, 0, ds.domain, Path(c).parent.name, error=str(exc)))
    if out_dir is not None:
        write_matrix(cells, out_dir)
    return cells


def render_table(cells: Sequence[MetricResult]) -> str:
    """Text table: one row per model, one EPE/D1 column pair per test set; same-domain cells marked ``*``."""
    rows = list(dict.fromkeys((c.model_id, c.family, c.manner) for c in cells))
    cols = list(dict.fromkeys(c.domain.dataset_id for c in cells))
    lookup = {((c.model_id, c.family, c.manner), c.domain.dataset_id): c for c in cells}
    header = ["model", "family", "manner"] + [f"{t} EPE/D1" for t in cols]
    lines = []
    for r in rows:
        line = list(r)
        for t in cols:
            c = lookup.get((r, t))
            if c is None:
                line.append("-")
            elif c.error:
                line.append("error")
            else:
                mark = "*" if c.same_domain else ""
                line.append(f"{c.epe:.2f}/{c.d1:.2f}{mark}")
        lines.append(line)
    widths = [max(len(str(x)) for x in col) for col in zip(header, *lines)]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    out = [fmt.format(*header), fmt.format(*["-" * w for w in widths])]
    out += [fmt.format(*l) for l in lines]
    out.append("* same domain as the training set (excluded from cross-domain comparison)")
    return "\n".join(out) + "\n"


def write_matrix(cells: Sequence[MetricResult], out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with (out_dir / "results.jsonl").open("w") as f:
        for c in cells:
            f.write(json.dumps(c.to_record()) + "\n")
    (out_dir / "table.txt").write_text(render_table(cells))
    return out_dir


def read_results(path) -> List[MetricResult]:
    path = Path(path)
    if path.is_dir():
        path = path / "results.jsonl"
    return [MetricResult.from_record(json.loads(l)) for l in path.read_text().splitlines() if l.strip()]


def pair_results(results: Sequence[MetricResult]):
    """Pair supervised and unsupervised cells by (family, training domain, test set)."""
    groups = {}
    for r in results:
        if r.error or r.epe is None:
            continue
        key = (r.family, r.train_domain.dataset_id if r.train_domain else r.train_stats_id, r.domain.dataset_id)
        groups.setdefault(key, {}).setdefault(r.manner, r)
    pairs, skipped = [], 0
    for key, by_manner in groups.items():
        if "supervised" in by_manner and "unsupervised" in by_manner:
            pairs.append((key, by_manner["supervised"], by_manner["unsupervised"]))
        else:
            skipped += 1
    return pairs, skipped


def emit_scatter(results: Sequence[MetricResult], out_dir, name: str = "scatter"):
    """Scatter supervised EPE (x) against unsupervised EPE (y) with the y = x divider.

    Points below the diagonal are cells where unsupervised training wins.
    Returns (plot path, data path, warning count).
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    pairs, skipped = pair_results(results)
    if skipped:
        warnings.warn(f"{skipped} result groups without a supervised/unsupervised pair were skipped")
    warn_count = skipped + (1 if not pairs else 0)
    if not pairs:
        warnings.warn("no paired results to plot")
    data_path = out_dir / f"{name}.csv"
    with data_path.open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["family", "train", "test", "supervised_epe", "unsupervised_epe", "same_domain"])
        for (family, train, test), sup, uns in pairs:
            w.writerow([family, train, test, sup.epe, uns.epe, int(sup.same_domain)])
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    xs = [p[1].epe for p in pairs]
    ys = [p[2].epe for p in pairs]
    same = [p[1].same_domain for p in pairs]
    hi = max(xs + ys + [1.0]) * 1.1
    ax.plot([0, hi], [0, hi], "k--", lw=1, label="y = x")
    if pairs:
        ax.scatter([x for x, s in zip(xs, same) if not s], [y for y, s in zip(ys, same) if not s],
                   c="tab:blue", label="cross-domain")
        ax.scatter([x for x, s in zip(xs, same) if s], [y for y, s in zip(ys, same) if s],
                   c="tab:red", marker="s", label="same domain")
    ax.set_xlim(0, hi)
    ax.set_ylim(0, hi)
    ax.set_xlabel("supervised EPE (px)")
    ax.set_ylabel("unsupervised EPE (px)")
    ax.legend(loc="upper left", fontsize=8)
    fig.tight_layout()
    plot_path = out_dir / f"{name}.png"
    fig.savefig(plot_path, dpi=100)
    plt.close(fig)
    return plot_path, data_path, warn_count
