import numpy as np
import pytest

from sakdn.errors import AlignmentError, ShapeError
from sakdn.models import (POOL_MEAN, POOL_VAR, STUDENT_TAPS, TEACHER_TAPS, StudentConfig, TeacherConfig, count_parameters,
                          init_student, init_teachers, recalibrate_pool_stats, student_forward,
                          teacher_forward)
from sakdn.tensor import Tensor

TCFG = TeacherConfig(channels=(4, 4, 4, 4, 4), side=16, hidden=6, embed_dim=5, num_classes=3)
SCFG = StudentConfig(channels=(4, 4, 4, 4, 8), side=16, num_frames=3, hidden=6, embed_dim=5, num_classes=3)


def images(rng, b=4, mods=("acc", "gyro")):
    return {m: rng.uniform(-1, 1, (b, 3, 16, 16)) for m in mods}


def test_teacher_shapes_and_taps(rng):
    p = init_teachers(TCFG, 0)
    packs = teacher_forward(images(rng), p, TCFG)
    for pack in packs.values():
        assert list(pack.taps) == list(TEACHER_TAPS)
        assert pack.features.shape == (4, 5) and pack.logits.shape == (4, 3)
        assert pack.taps["t1"].shape == (4, 4, 16, 16) and pack.taps["t5"].shape == (4, 4, 4, 4)


def test_single_modality_joint_mode_is_finite(rng):
    cfg = TeacherConfig(modalities=("acc",), channels=(4, 4, 4, 4, 4), hidden=6, embed_dim=5, num_classes=3)
    pack = teacher_forward(images(rng, mods=("acc",)), init_teachers(cfg, 0), cfg)["acc"]
    assert np.isfinite(pack.logits.data).all()


def test_teacher_determinism_and_fusion_effect(rng):
    x = images(rng)
    p = init_teachers(TCFG, 0)
    # random excitation weights so the gate is not identically one
    p = {k: Tensor(np.random.default_rng(1).uniform(-0.5, 0.5, v.shape)) if k.endswith("2") and "/W_" in k else v
         for k, v in p.items()}
    a = teacher_forward(x, p, TCFG, mode="independent")
    b = teacher_forward(x, p, TCFG, mode="independent")
    j = teacher_forward(x, p, TCFG, mode="joint")
    for m in TCFG.modalities:
        assert np.array_equal(a[m].logits.data, b[m].logits.data)
    assert any(not np.array_equal(a[m].taps[t].data, j[m].taps[t].data) for m in TCFG.modalities for t in TEACHER_TAPS)


def test_teacher_rejects_misaligned_ids(rng):
    with pytest.raises(AlignmentError):
        teacher_forward(images(rng, b=2), init_teachers(TCFG, 0), TCFG,
                        sample_ids={"acc": ["a", "b"], "gyro": ["b", "a"]})
    with pytest.raises(AlignmentError):
        teacher_forward(images(rng, mods=("acc",)), init_teachers(TCFG, 0), TCFG)


def test_student_shapes(rng):
    p = init_student(SCFG, 0)
    pack = student_forward(rng.uniform(0, 1, (1, 3, 1, 16, 16)), p, SCFG)
    assert list(pack.taps) == list(STUDENT_TAPS)
    assert pack.taps["s1"].shape == (1, 4, 16, 16) and pack.logits.shape == (1, 3) and pack.features.shape == (1, 5)
    with pytest.raises(ShapeError):
        student_forward(rng.uniform(0, 1, (1, 2, 1, 16, 16)), p, SCFG)


def test_student_identical_frames_and_order_sensitivity(rng):
    p = init_student(SCFG, 0)
    frame = rng.uniform(0, 1, (2, 1, 1, 16, 16))
    same = np.repeat(frame, 3, axis=1)
    mean_taps = student_forward(same, p, StudentConfig(**{**SCFG.to_dict(), "tap_frames": "mean"})).taps["s2"].data
    mid_taps = student_forward(same, p, SCFG).taps["s2"].data
    np.testing.assert_allclose(mean_taps, mid_taps, rtol=0, atol=1e-14)
    video = rng.uniform(0, 1, (2, 3, 1, 16, 16))
    fwd = student_forward(video, p, SCFG).logits.data
    rev = student_forward(video[:, ::-1], p, SCFG).logits.data
    assert not np.array_equal(fwd, rev)


def test_dropout_only_in_training(rng):
    p = init_student(SCFG, 0)
    video = rng.uniform(0, 1, (4, 3, 1, 16, 16))
    a = student_forward(video, p, SCFG).logits.data
    assert np.array_equal(a, student_forward(video, p, SCFG).logits.data)
    t1 = student_forward(video, p, SCFG, train=True, rng=np.random.default_rng(0)).logits.data
    t2 = student_forward(video, p, SCFG, train=True, rng=np.random.default_rng(1)).logits.data
    assert not np.array_equal(t1, t2)
    with pytest.raises(ValueError):
        student_forward(video, p, SCFG, train=True)


def test_pool_statistics_use_the_original_rows(rng):
    p = init_student(SCFG, 0)
    video = rng.uniform(0, 1, (4, 3, 1, 16, 16))
    doubled = np.concatenate([video, np.zeros_like(video)])
    a = student_forward(doubled, p, SCFG, train=True, rng=np.random.default_rng(0), stat_rows=4).pool_stats
    b = student_forward(video, p, SCFG, train=True, rng=np.random.default_rng(0)).pool_stats
    np.testing.assert_allclose(a[0], b[0], rtol=0, atol=1e-15)
    assert POOL_MEAN in p and not p[POOL_MEAN].requires_grad


def test_recalibrated_statistics_match_the_batch_statistics(rng):
    p = init_student(SCFG, 0)
    video = rng.uniform(0, 1, (5, 3, 1, 16, 16))
    mean, var = student_forward(video, p, SCFG, train=True, rng=np.random.default_rng(0)).pool_stats
    whole = recalibrate_pool_stats(p, SCFG, list(video))
    chunked = recalibrate_pool_stats(p, SCFG, list(video), batch_size=2)
    for q in (whole, chunked):
        np.testing.assert_allclose(q[POOL_MEAN].data, mean, rtol=0, atol=1e-12)
        np.testing.assert_allclose(q[POOL_VAR].data, var, rtol=0, atol=1e-12)
    assert whole["student/cls/W"] is p["student/cls/W"]
    assert not np.array_equal(p[POOL_MEAN].data, whole[POOL_MEAN].data)


def test_desk_scale_parameter_budget():
    from sakdn.config import synthetic_default

    cfg = synthetic_default()
    assert count_parameters(init_teachers(cfg.teacher)) + count_parameters(init_student(cfg.student)) < 1_000_000
