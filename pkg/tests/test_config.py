import json
from pathlib import Path

import pytest
import yaml
from pydantic import ValidationError

from rsstereo.config import (
    LossWeights,
    ModelConfig,
    TrainConfig,
    desk_model,
    load_run_config,
    paper_constants,
    paper_model,
    run_config_from_dict,
    run_config_schema,
)

GOLDEN = Path(__file__).parent / "golden" / "paper_constants.json"


def test_paper_constants_golden():
    assert paper_constants() == json.loads(GOLDEN.read_text())


def test_loss_weight_defaults():
    w = LossWeights()
    assert (w.lambda_p, w.lambda_census, w.lambda_sm) == (1.0, 1.0, 0.1)
    assert (w.lambda_pam, w.lambda_pam_s, w.lambda_pam_c) == (1.0, 0.1, 0.1)
    assert w.pam_occlusion_threshold == 0.1
    # thresholds map finest -> coarsest and extra scales reuse the coarsest value
    assert [w.threshold_for(i) for i in range(4)] == [5.0, 2.0, 1.0, 1.0]


def test_scale_weight_lengths_checked():
    assert LossWeights().weights_for("cascade", 3) == [0.5, 1.0, 2.0]
    with pytest.raises(ValueError):
        LossWeights().weights_for("cascade", 4)


def test_model_config_validation():
    with pytest.raises(ValidationError):
        ModelConfig(family="cascade", base_range=(8.0, -8.0))
    with pytest.raises(ValidationError):
        ModelConfig(family="cascade", channel_widths=[6, 16, 24], groups=4)
    assert ModelConfig(family="pam").base_range is None
    assert paper_model("pyramid", "US3D").base_range == (-96.0, 96.0)
    assert paper_model("cascade").base_range == (-128.0, 128.0)


def test_run_config_presets_and_overrides(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump({"model": {"family": "cascade", "reg_width": 6},
                                    "train": {"max_epochs": 3}, "data": {"train": "somewhere"}}))
    rc = load_run_config(path, preset="desk")
    assert rc.model.reg_width == 6 and rc.model.stage_candidates == desk_model("cascade").stage_candidates
    assert rc.train.max_epochs == 3 and rc.train.crop_size == 64
    paper = run_config_from_dict({"model": {"family": "cascade"}, "data": {"train": "x"}}, preset="paper")
    assert paper.train.crop_size == 512 and paper.model.base_range == (-128.0, 128.0)


def test_run_config_rejects_bad_input():
    with pytest.raises(ValidationError):
        run_config_from_dict({"model": {"family": "pam"}, "train": {"manner": "supervised"}, "data": {"train": "x"}})
    with pytest.raises(ValidationError):
        run_config_from_dict({"model": {"family": "cascade", "bogus": 1}, "data": {"train": "x"}})
    with pytest.raises(ValidationError):
        TrainConfig(use_pretrained=True)


def test_schema_published():
    schema = run_config_schema()
    assert "model" in schema["properties"] and "train" in schema["properties"]
