"""Run configuration: model, loss weights, training schedules and presets.

Two presets exist. ``paper`` mirrors the published training settings; ``desk``
shrinks models, crops and epochs so that everything runs on a laptop CPU.
"""
from __future__ import annotations

from pathlib import Path
from typing import List, Literal, Optional, Tuple

import yaml
from pydantic import BaseModel, ConfigDict, Field, model_validator

Family = Literal["cascade", "pyramid", "pam"]
Manner = Literal["supervised", "unsupervised"]

# coarse -> fine
CASCADE_SCALE_WEIGHTS = [0.5, 1.0, 2.0]
PYRAMID_SCALE_WEIGHTS = [0.5, 0.7, 1.0, 0.6]
PAM_SCALE_WEIGHTS = [0.2, 0.3, 0.5]
# finest -> coarsest
FB_THRESHOLDS = [5.0, 2.0, 1.0]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class LRSchedule(_Strict):
    """Step schedule ``max(initial * factor ** (epoch // step_epochs), floor)``."""

    initial: float = Field(gt=0)
    factor: float = Field(1.0, gt=0, le=1)
    step_epochs: int = Field(0, ge=0)  # 0 = constant
    floor: float = Field(0.0, ge=0)

    def lr_at(self, epoch: int) -> float:
        if self.step_epochs == 0:
            return self.initial
        return max(self.initial * self.factor ** (epoch // self.step_epochs), self.floor)


def paper_lr_schedule(family: str, manner: str = "unsupervised", use_pretrained: bool = False) -> LRSchedule:
    if family == "cascade":
        if manner == "supervised":
            return LRSchedule(initial=1e-4)
        if use_pretrained:
            return LRSchedule(initial=1e-6)
        return LRSchedule(initial=1e-4, factor=0.5, step_epochs=5, floor=1e-7)
    if family == "pyramid":
        return LRSchedule(initial=1e-3, factor=0.5, step_epochs=10)
    if family == "pam":
        return LRSchedule(initial=1e-3, factor=0.1, step_epochs=10, floor=1e-7)
    raise ValueError(f"unknown family {family!r}")


# SceneFlow pretraining of the cascade: 20 epochs, lr 1e-3, batch 8
CASCADE_PRETRAIN = {"epochs": 20, "lr": 1e-3, "batch_size": 8}
ADAM_BETAS = (0.9, 0.999)


def default_scale_weights(family: str) -> List[float]:
    return {"cascade": CASCADE_SCALE_WEIGHTS, "pyramid": PYRAMID_SCALE_WEIGHTS,
            "pam": PAM_SCALE_WEIGHTS}[family][:]


class LossWeights(_Strict):
    scale_weights: Optional[List[float]] = None  # None -> family default
    pam_scale_weights: List[float] = Field(default_factory=lambda: PAM_SCALE_WEIGHTS[:])
    lambda_p: float = Field(1.0, ge=0)
    lambda_census: float = Field(1.0, ge=0)
    lambda_sm: float = Field(0.1, ge=0)
    lambda_pam: float = Field(1.0, ge=0)
    lambda_pam_s: float = Field(0.1, ge=0)
    lambda_pam_c: float = Field(0.1, ge=0)
    alpha: float = Field(0.85, ge=0, le=1)
    fb_thresholds: List[float] = Field(default_factory=lambda: FB_THRESHOLDS[:])
    census_patch: int = 7
    charbonnier_eps: float = Field(1e-3, gt=0)
    charbonnier_alpha: float = Field(0.45, gt=0)
    soft_census_c: float = Field(1e-2, gt=0)
    ssim_window: int = 3
    pam_occlusion_threshold: float = 0.1

    @model_validator(mode="after")
    def _check(self):
        if self.scale_weights is not None and any(w < 0 for w in self.scale_weights):
            raise ValueError("scale weights must be non-negative")
        if any(w < 0 for w in self.pam_scale_weights):
            raise ValueError("scale weights must be non-negative")
        if self.census_patch % 2 == 0:
            raise ValueError("census patch must be odd")
        return self

    def weights_for(self, family: str, n: int) -> List[float]:
        w = self.scale_weights if self.scale_weights is not None else default_scale_weights(family)
        if len(w) != n:
            raise ValueError(f"{len(w)} scale weights for {n} model outputs")
        return list(w)

    def threshold_for(self, level_from_finest: int) -> float:
        t = self.fb_thresholds
        return t[min(level_from_finest, len(t) - 1)]


class ModelConfig(_Strict):
    family: Family
    scales: int = Field(3, ge=1)
    in_channels: int = Field(1, ge=1)
    base_range: Optional[Tuple[float, float]] = (-8.0, 8.0)  # full-resolution pixels
    stage_candidates: Optional[List[int]] = None  # cascade: per stage, coarse -> fine
    groups: int = Field(4, ge=1)
    channel_widths: List[int] = Field(default_factory=lambda: [8, 16, 24])  # fine -> coarse
    concat_channels: int = Field(4, ge=1)
    reg_width: int = Field(8, ge=1)
    reg_depth: int = Field(4, ge=2)
    refinement: bool = True
    min_range_width: float = Field(2.0, ge=0)
    pam_blocks: int = Field(1, ge=1)
    pam_occlusion_threshold: float = 0.1

    @model_validator(mode="after")
    def _check(self):
        if self.family == "pam":
            # the attention matcher covers the whole row; no search range is needed
            self.base_range = None
        else:
            if self.base_range is None:
                raise ValueError(f"{self.family} needs base_range")
            if self.base_range[0] > self.base_range[1]:
                raise ValueError("base_range must be (d_min, d_max) with d_min <= d_max")
        if self.family == "cascade":
            if self.stage_candidates is None:
                self.stage_candidates = [9] + [12, 16][: self.scales - 1] + [16] * max(0, self.scales - 3)
            if len(self.stage_candidates) != self.scales:
                raise ValueError("cascade needs one candidate count per stage")
            if min(self.stage_candidates) < 2:
                raise ValueError("each stage needs at least 2 candidates")
            if len(self.channel_widths) < self.scales:
                raise ValueError("cascade needs a channel width per scale")
        if self.family == "pyramid" and self.scales != 3:
            raise ValueError("the pyramid family extracts exactly three scales")
        for c in self.channel_widths:
            if c % self.groups:
                raise ValueError(f"channel width {c} not divisible by {self.groups} groups")
        return self

    @property
    def divisor(self) -> int:
        """Input height and width must be multiples of this."""
        if self.family == "cascade":
            return 2 ** (self.scales - 1)
        return 16


class TrainConfig(_Strict):
    manner: Manner = "unsupervised"
    use_pretrained: bool = False
    pretrained_checkpoint: Optional[str] = None
    lr: Optional[LRSchedule] = None  # None -> paper schedule for the family
    betas: Tuple[float, float] = ADAM_BETAS
    batch_size: int = Field(4, ge=1)
    max_epochs: int = Field(10, ge=1)
    steps_per_epoch: Optional[int] = None  # None -> one pass over the training split
    eval_every: int = Field(1, ge=1)
    seed: int = 0
    crop_size: int = 512
    val_fraction: float = Field(0.1, ge=0, lt=1)
    early_stop: Optional[bool] = None  # None -> on for unsupervised fine-tuning
    flip_augment: bool = False
    loss_weights: LossWeights = Field(default_factory=LossWeights)

    @model_validator(mode="after")
    def _check(self):
        if self.use_pretrained and not self.pretrained_checkpoint:
            raise ValueError("use_pretrained requires pretrained_checkpoint")
        return self

    @property
    def early_stop_active(self) -> bool:
        if self.early_stop is not None:
            return self.early_stop
        return self.manner == "unsupervised" and self.use_pretrained

    def schedule(self, family: str) -> LRSchedule:
        return self.lr or paper_lr_schedule(family, self.manner, self.use_pretrained)


class DataPaths(_Strict):
    train: str
    eval: Optional[str] = None


class RunConfig(_Strict):
    model: ModelConfig
    train: TrainConfig = Field(default_factory=TrainConfig)
    data: DataPaths
    output_dir: str = "runs/default"

    @model_validator(mode="after")
    def _check(self):
        if self.model.family == "pam" and self.train.manner == "supervised":
            raise ValueError("the attention family is trained unsupervised only")
        return self


def desk_model(family: str, **overrides) -> ModelConfig:
    base = {
        "cascade": dict(family="cascade", scales=3, base_range=(-8.0, 8.0), stage_candidates=[9, 6, 4],
                        channel_widths=[8, 16, 24], concat_channels=4, reg_width=4, reg_depth=2, groups=4),
        "pyramid": dict(family="pyramid", scales=3, base_range=(-8.0, 8.0), channel_widths=[16, 16, 16],
                        reg_width=8, groups=4),
        "pam": dict(family="pam", scales=3, channel_widths=[16, 16, 16], groups=4),
    }.get(family)
    if base is None:
        raise ValueError(f"unknown model family {family!r}")
    base.update(overrides)
    return ModelConfig(**base)


def paper_model(family: str, dataset: str = "other") -> ModelConfig:
    if family == "cascade":
        return ModelConfig(family="cascade", scales=3, base_range=(-128.0, 128.0), stage_candidates=[48, 12, 16],
                           channel_widths=[32, 64, 128], concat_channels=12, reg_width=32, groups=8)
    if family == "pyramid":
        rng = (-96.0, 96.0) if dataset.lower().startswith("us3d") else (-128.0, 64.0)
        return ModelConfig(family="pyramid", scales=3, base_range=rng, channel_widths=[32, 32, 32],
                           reg_width=16, groups=8)
    if family == "pam":
        return ModelConfig(family="pam", scales=3, channel_widths=[64, 64, 64], pam_blocks=4, groups=8)
    raise ValueError(f"unknown model family {family!r}")


def desk_train(**overrides) -> TrainConfig:
    base = dict(batch_size=4, max_epochs=10, crop_size=64,
                lr=LRSchedule(initial=1e-3, factor=0.5, step_epochs=5, floor=1e-5),
                loss_weights=LossWeights(lambda_census=0.1))
    base.update(overrides)
    return TrainConfig(**base)


def paper_train(family: str, manner: str = "unsupervised", use_pretrained: bool = False,
                pretrained_checkpoint: Optional[str] = None) -> TrainConfig:
    batch = CASCADE_PRETRAIN["batch_size"] if family == "cascade" else 4
    return TrainConfig(manner=manner, use_pretrained=use_pretrained,
                       pretrained_checkpoint=pretrained_checkpoint,
                       lr=paper_lr_schedule(family, manner, use_pretrained),
                       batch_size=batch, max_epochs=100, crop_size=512)


def load_run_config(path, preset: Optional[str] = None) -> RunConfig:
    raw = yaml.safe_load(Path(path).read_text()) or {}
    return run_config_from_dict(raw, preset)


def run_config_from_dict(raw: dict, preset: Optional[str] = None) -> RunConfig:
    """Build a RunConfig, filling unspecified model/train fields from a preset."""
    raw = dict(raw)
    preset = preset or raw.pop("preset", None)
    raw.pop("preset", None)
    if preset:
        family = (raw.get("model") or {}).get("family")
        if family is None:
            raise ValueError("model.family is required")
        base_model = desk_model(family) if preset == "desk" else paper_model(family)
        model = base_model.model_dump()
        model.update(raw.get("model") or {})
        raw["model"] = model
        train_raw = raw.get("train") or {}
        if preset == "desk":
            base_train = desk_train().model_dump(exclude_none=True)
        else:
            base_train = paper_train(family, train_raw.get("manner", "unsupervised"),
                                     train_raw.get("use_pretrained", False),
                                     train_raw.get("pretrained_checkpoint")).model_dump(exclude_none=True)
        base_train.update(train_raw)
        raw["train"] = base_train
    return RunConfig(**raw)


def run_config_schema() -> dict:
    return RunConfig.model_json_schema()


def paper_constants() -> dict:
    """Snapshot of the defaults that reproduce published constants."""
    lw = LossWeights()
    return {
        "photometric_alpha": lw.alpha,
        "fb_thresholds": lw.fb_thresholds,
        "census_patch": lw.census_patch,
        "cascade_scale_weights": default_scale_weights("cascade"),
        "pyramid_scale_weights": default_scale_weights("pyramid"),
        "pam_scale_weights": lw.pam_scale_weights,
        "crop_size": TrainConfig().crop_size,
        "adam_betas": list(TrainConfig().betas),
        "lr": {
            "cascade_supervised": paper_lr_schedule("cascade", "supervised").model_dump(),
            "cascade_unsupervised_pretrained": paper_lr_schedule("cascade", "unsupervised", True).model_dump(),
            "cascade_unsupervised_scratch": paper_lr_schedule("cascade", "unsupervised", False).model_dump(),
            "pyramid": paper_lr_schedule("pyramid").model_dump(),
            "pam": paper_lr_schedule("pam").model_dump(),
        },
        "cascade_pretrain": dict(CASCADE_PRETRAIN),
        "cascade_base_range": list(paper_model("cascade").base_range),
        "pyramid_base_range_us3d": list(paper_model("pyramid", "us3d").base_range),
        "pyramid_base_range_other": list(paper_model("pyramid", "whu").base_range),
    }
