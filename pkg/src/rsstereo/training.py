"""Training loop, checkpoints and the left-right consistency (CE) early-stop controller."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import torch

from .config import ModelConfig, TrainConfig
from .data.sample import NormalizationStats, StereoSample, compute_stats, iterate_crops, normalize, split_holdout, to_batch
from .losses import pam_total, supervised_loss, unsupervised_loss
from .models import build_model, forward_both, mirror, predict_pair
from .photometric import ContractError, warp_horizontal

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "rsstereo-checkpoint-1"


class ConfigurationError(ValueError):
    pass


# ---- consistency criterion ------------------------------------------------------

def ce_from_disparities(d_left: torch.Tensor, d_right: torch.Tensor) -> torch.Tensor:
    """Per-sample CE: mean forward-backward residual of each view, summed over the two views.

    Pixels whose warp leaves the frame are excluded from both sum and count.
    """
    total = d_left.new_zeros(d_left.shape[0])
    for a, b in ((d_left, d_right), (d_right, d_left)):
        back, oob = warp_horizontal(b, a)
        keep = (~oob).to(a.dtype)
        res = (a + back).abs() * keep
        count = keep.sum(dim=(1, 2, 3))
        total = total + res.sum(dim=(1, 2, 3)) / count.clamp(min=1)
    return total


@torch.no_grad()
def consistency_criterion(model, samples: Sequence[StereoSample], batch_size: int = 8) -> float:
    """Mean CE over unlabeled, already-normalized samples."""
    if len(samples) == 0:
        raise ValueError("the CE validation set is empty")
    was_training = model.training
    model.eval()
    values = []
    for i in range(0, len(samples), batch_size):
        b = to_batch([s.without_gt() for s in samples[i:i + batch_size]])
        dl, dr = predict_pair(model, b["left"], b["right"])
        values.append(ce_from_disparities(dl, dr))
    model.train(was_training)
    return float(torch.cat(values).mean())


@dataclass
class SeriesEntry:
    epoch: int
    ce: float
    checkpoint: Optional[str] = None


@dataclass
class ConsistencySeries:
    entries: List[SeriesEntry] = field(default_factory=list)

    def append(self, epoch: int, ce: float, checkpoint=None):
        if ce < 0:
            raise ValueError("CE must be non-negative")
        if self.entries and epoch <= self.entries[-1].epoch:
            raise ValueError("epochs must be strictly increasing")
        self.entries.append(SeriesEntry(epoch, float(ce), None if checkpoint is None else str(checkpoint)))

    @property
    def last(self) -> Optional[SeriesEntry]:
        return self.entries[-1] if self.entries else None

    def best(self) -> Optional[SeriesEntry]:
        # earliest entry among equal minima
        return min(self.entries, key=lambda e: e.ce) if self.entries else None

    def to_list(self):
        return [vars(e) for e in self.entries]


@dataclass
class StopDecision:
    stop: bool
    restore: Optional[SeriesEntry] = None


def early_stop_step(series: ConsistencySeries, new_ce: float, checkpoint=None, epoch: Optional[int] = None) -> StopDecision:
    """Record ``new_ce``; stop as soon as it strictly exceeds the previous value.

    On stop the entry to restore is the one with the minimum CE recorded so far.
    """
    prev = series.last
    if epoch is None:
        epoch = 0 if prev is None else prev.epoch + 1
    series.append(epoch, new_ce, checkpoint)
    if prev is not None and new_ce > prev.ce:
        return StopDecision(True, series.best())
    return StopDecision(False)


# ---- checkpoints -----------------------------------------------------------------

def save_checkpoint(path, model, optimizer=None, epoch: int = 0, stats: Optional[NormalizationStats] = None,
                    manner: str = "unsupervised", extra: Optional[dict] = None):
    payload = {
        "format": CHECKPOINT_FORMAT,
        "model_config": model.cfg.model_dump(mode="json"),
        "state_dict": model.state_dict(),
        "optimizer": None if optimizer is None else optimizer.state_dict(),
        "epoch": epoch,
        "stats": None if stats is None else stats.to_dict(),
        "stats_id": None if stats is None else stats.dataset_id,
        "manner": manner,
        "extra": extra or {},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)
    return path


def load_checkpoint(path) -> dict:
    try:
        ckpt = torch.load(path, map_location="cpu", weights_only=False)
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise ValueError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(ckpt, dict) or ckpt.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a model checkpoint")
    return ckpt


def model_from_checkpoint(path):
    ckpt = load_checkpoint(path)
    model = build_model(ModelConfig(**ckpt["model_config"]))
    model.load_state_dict(ckpt["state_dict"])
    model.eval()
    return model, ckpt


def pretrain_load(model, path):
    """Restore parameters from a checkpoint of the same family; optimizer state is not carried over."""
    ckpt = load_checkpoint(path)
    family = ckpt["model_config"]["family"]
    if family != model.cfg.family:
        raise ContractError(f"checkpoint family {family!r} does not match model family {model.cfg.family!r}")
    model.load_state_dict(ckpt["state_dict"])
    model.pretrained_stats_id = ckpt.get("stats_id")
    return model


# ---- training ----------------------------------------------------------------------

@dataclass
class TrainResult:
    run_dir: Path
    final_checkpoint: Path
    metrics: List[dict]
    series: ConsistencySeries
    stopped_early: bool = False
    restored_epoch: Optional[int] = None


def _flip_batch(batch: dict, flags: torch.Tensor) -> dict:
    if not flags.any():
        return batch
    out = dict(batch)
    f = flags.view(-1, 1, 1, 1)
    for key in ("left", "right", "valid"):
        if key in batch:
            out[key] = torch.where(f, mirror(batch[key]), batch[key])
    if "disparity" in batch:
        out["disparity"] = torch.where(f, -mirror(batch["disparity"]), batch["disparity"])
    return out


def compute_loss(model, batch: dict, cfg: TrainConfig):
    family = model.cfg.family
    w = cfg.loss_weights
    left, right = batch["left"], batch["right"]
    if family == "pam":
        return pam_total(left, right, model(left, right), w)
    if cfg.manner == "supervised":
        out = model(left, right)
        return supervised_loss(out.disparities, batch["disparity"], batch["valid"],
                               w.weights_for(family, len(out.disparities)))
    out_l, out_r = forward_both(model, left, right)
    return unsupervised_loss(left, right, out_l.disparities, out_r.disparities, w,
                             w.weights_for(family, len(out_l.disparities)))


@torch.no_grad()
def evaluate_samples(model, samples: Sequence[StereoSample], batch_size: int = 8) -> dict:
    """EPE and D1 over already-normalized labeled samples (pixels pooled across samples)."""
    from .evaluation import d1_counts

    was_training = model.training
    model.eval()
    abs_sum = bad = count = 0.0
    for i in range(0, len(samples), batch_size):
        b = to_batch(samples[i:i + batch_size])
        pred = model(b["left"], b["right"]).final
        err_sum, n_bad, n = d1_counts(pred, b["disparity"], b["valid"])
        abs_sum += err_sum
        bad += n_bad
        count += n
    model.train(was_training)
    if count == 0:
        raise ValueError("no valid ground-truth pixels")
    return {"epe": abs_sum / count, "d1": 100.0 * bad / count}


def train(model, samples: Sequence[StereoSample], cfg: TrainConfig, run_dir,
          stats: Optional[NormalizationStats] = None,
          eval_samples: Optional[Sequence[StereoSample]] = None,
          eval_stats: Optional[NormalizationStats] = None,
          run_config: Optional[dict] = None) -> TrainResult:
    """Train ``model`` on raw ``samples``; writes checkpoints and ``metrics.jsonl`` into ``run_dir``.

    A fraction ``cfg.val_fraction`` of the samples is held out without labels
    for the CE criterion. ``eval_samples`` (labeled) are only used for logging
    EPE/D1 and never influence training or stopping.
    """
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    family = model.cfg.family
    if family == "pam" and cfg.manner == "supervised":
        raise ConfigurationError("the attention family is trained unsupervised only")
    if cfg.manner == "supervised" and not all(s.has_gt for s in samples):
        raise ConfigurationError("supervised training needs ground-truth disparity for every sample")
    if len(samples) == 0:
        raise ConfigurationError("no training samples")

    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)

    if cfg.use_pretrained:
        pretrain_load(model, cfg.pretrained_checkpoint)
        log.info("loaded pretrained weights from %s", cfg.pretrained_checkpoint)

    domain_extra = {"train_domain": asdict(samples[0].domain)}
    train_raw, val_raw = split_holdout(list(samples), cfg.val_fraction, cfg.seed)
    if stats is None:
        stats = compute_stats(train_raw)
    stats.save(run_dir / "stats.json")
    train_set = [normalize(s, stats, override=True) for s in train_raw]
    val_set = [normalize(s, stats, override=True) for s in val_raw]
    eval_set = None
    if eval_samples:
        es = eval_stats or stats
        eval_set = [normalize(s, es, override=True) for s in eval_samples]

    snapshot = {"train": cfg.model_dump(mode="json"), "model": model.cfg.model_dump(mode="json")}
    if run_config is not None:
        snapshot = run_config
    (run_dir / "config.json").write_text(json.dumps(snapshot, indent=2))

    schedule = cfg.schedule(family)
    optimizer = torch.optim.Adam(model.parameters(), lr=schedule.lr_at(0), betas=tuple(cfg.betas))
    metrics_path = run_dir / "metrics.jsonl"
    metrics_file = metrics_path.open("w")
    ckpt_dir = run_dir / "checkpoints"
    series = ConsistencySeries()
    early = cfg.early_stop_active and len(val_set) > 0
    metrics: List[dict] = []
    stopped = False
    restored_epoch = None
    last_epoch = 0

    def emit(record):
        metrics.append(record)
        metrics_file.write(json.dumps(record) + "\n")
        metrics_file.flush()

    emit({"event": "start", "family": family, "manner": cfg.manner, "early_stop": early,
          "train_samples": len(train_set), "val_samples": len(val_set), "stats_id": stats.dataset_id})
    model.train()
    try:
        for epoch in range(cfg.max_epochs):
            lr = schedule.lr_at(epoch)
            for g in optimizer.param_groups:
                g["lr"] = lr
            crops = list(iterate_crops(train_set, cfg.crop_size, seed=cfg.seed * 100003 + epoch))
            n_steps = cfg.steps_per_epoch or max(1, len(crops) // cfg.batch_size)
            totals: dict = {}
            loss_sum = 0.0
            collapsed = 0
            for step in range(n_steps):
                idx = [(step * cfg.batch_size + k) % len(crops) for k in range(cfg.batch_size)]
                batch = to_batch([crops[i] for i in idx])
                if cfg.flip_augment:
                    batch = _flip_batch(batch, torch.from_numpy(rng.random(len(idx)) < 0.5))
                res = compute_loss(model, batch, cfg)
                optimizer.zero_grad()
                res.total.backward()
                optimizer.step()
                loss_sum += float(res.total.detach())
                collapsed += int(res.collapsed)
                for k, v in res.terms.items():
                    totals[k] = totals.get(k, 0.0) + v
            record = {"epoch": epoch + 1, "lr": lr, "steps": n_steps, "loss": loss_sum / n_steps,
                      "terms": {k: v / n_steps for k, v in totals.items()}, "mask_collapse": collapsed}
            ckpt = save_checkpoint(ckpt_dir / f"epoch_{epoch + 1:03d}.pt", model, optimizer, epoch + 1, stats,
                                   cfg.manner, extra=domain_extra)
            if (epoch + 1) % cfg.eval_every == 0 or epoch + 1 == cfg.max_epochs:
                if val_set:
                    record["ce"] = consistency_criterion(model, val_set)
                if eval_set and all(s.has_gt for s in eval_set):
                    record.update(evaluate_samples(model, eval_set))
            record["checkpoint"] = str(ckpt)
            last_epoch = epoch + 1
            emit(record)
            log.info("epoch %d loss %.4f ce %s", epoch + 1, record["loss"], record.get("ce"))
            if early and "ce" in record:
                decision = early_stop_step(series, record["ce"], ckpt, epoch + 1)
                if decision.stop:
                    best = decision.restore
                    model.load_state_dict(load_checkpoint(best.checkpoint)["state_dict"])
                    stopped, restored_epoch = True, best.epoch
                    emit({"event": "early_stop", "epoch": epoch + 1, "restored_epoch": best.epoch,
                          "restored_ce": best.ce, "restored_checkpoint": best.checkpoint})
                    break
            elif "ce" in record:
                series.append(epoch + 1, record["ce"], ckpt)
        final = save_checkpoint(run_dir / "final.pt", model, None, restored_epoch or last_epoch, stats, cfg.manner,
                                extra={**domain_extra, "restored_epoch": restored_epoch, "stopped_early": stopped})
        emit({"event": "end", "stopped_early": stopped, "restored_epoch": restored_epoch,
              "series": series.to_list()})
    finally:
        metrics_file.close()
    return TrainResult(run_dir, final, metrics, series, stopped, restored_epoch)
