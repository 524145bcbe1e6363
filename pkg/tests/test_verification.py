import numpy as np

from rsstereo.verification.suite import (
    GRADIENTS,
    NON_DIFFERENTIABLE,
    REGISTRY,
    run_gradient_suite,
    run_oracle_suite,
)

# every mathematically defined operation must have an oracle
REQUIRED = {
    "warp_horizontal", "ssim_map", "census_transform", "soft_census_signature", "hamming_distance",
    "soft_hamming_distance", "charbonnier", "image_gradients", "build_concat_volume", "build_gwc_volume",
    "combine_volumes", "fuse_adjacent_volumes", "soft_argmax", "estimate_uncertainty", "next_stage_range",
    "sample_candidates", "pam_disparity", "occlusion_from_fb", "photometric_loss", "census_loss",
    "smoothness_loss", "supervised_loss", "unsupervised_scale_loss", "pam_photometric", "pam_occlusion",
    "pam_smoothness", "pam_cycle", "pam_total", "consistency_criterion", "epe", "d1",
}


def test_registry_complete():
    assert REQUIRED <= set(REGISTRY)


def test_report_per_registered_op():
    reports = run_oracle_suite(seed=1, instances=3)
    assert [r.operation for r in reports] == list(REGISTRY)
    assert all(r.passed for r in reports), [r for r in reports if not r.passed]


def test_corrupted_op_is_reported_alone():
    broken = lambda inst: np.asarray(REGISTRY["soft_argmax"].impl(inst)) + 1e-3
    reports = run_oracle_suite(seed=2, instances=5, overrides={"soft_argmax": broken})
    failed = [r.operation for r in reports if not r.passed]
    assert failed == ["soft_argmax"]


def test_crashing_op_fails_without_raising():
    def boom(inst):
        raise RuntimeError("broken")

    report = run_oracle_suite(seed=0, instances=2, overrides={"epe": boom}, names=["epe"])[0]
    assert not report.passed


def test_gradient_registry_excludes_hard_ops():
    assert "census_transform" in NON_DIFFERENTIABLE
    assert not set(NON_DIFFERENTIABLE) & set(GRADIENTS)
    assert {"photometric_loss", "pam_cycle", "unsupervised_scale_loss"} <= set(GRADIENTS)


def test_named_gradient_checks_pass():
    reports = run_gradient_suite(seed=3, names=["photometric_loss", "pam_cycle"])
    assert [r.operation for r in reports] == ["photometric_loss", "pam_cycle"]
    assert all(r.passed and r.max_rel_error < 1e-3 for r in reports)
