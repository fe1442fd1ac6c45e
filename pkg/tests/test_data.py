import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from PIL import Image

from sakdn.data import (SyntheticTaskSpec, encode_samples, frame_indices, generate_synthetic, load_frame_stack, load_manifest,
                        load_sensor_csv, make_aligned_batches, window_starts, write_manifest)
from sakdn.errors import AlignmentError, ConfigError, DataFormatError


def write_csv(path, rows, header="t,x,y,z"):
    path.write_text(header + "\n" + "".join(",".join(str(v) for v in r) + "\n" for r in rows))
    return path


def ramp_rows(n):
    return [(i, i, 2 * i, (-1) ** i) for i in range(n)]


def test_window_examples(tmp_path):
    p = write_csv(tmp_path / "acc.csv", ramp_rows(10))
    ws = load_sensor_csv(p, 4, 2)
    assert [w.sample_id for w in ws] == ["acc:0", "acc:2", "acc:4", "acc:6"]
    assert len(load_sensor_csv(p, 4, 5)) == (10 - 4) // 5 + 1


@given(st.integers(1, 60), st.integers(1, 20), st.integers(1, 20))
def test_window_count_matches_enumeration(n, length, stride):
    brute = [s for s in range(n) if s + length <= n and s % stride == 0]
    assert window_starts(n, length, stride) == brute


def test_csv_errors(tmp_path):
    with pytest.raises(DataFormatError, match="'z'"):
        load_sensor_csv(write_csv(tmp_path / "a.csv", ramp_rows(5), header="t,x,y"), 2)
    bad = tmp_path / "b.csv"
    bad.write_text("t,x,y,z\n0,1,2,3\n1,oops,2,3\n")
    with pytest.raises(DataFormatError, match=":3"):
        load_sensor_csv(bad, 2)
    with pytest.raises(DataFormatError, match="fewer"):
        load_sensor_csv(write_csv(tmp_path / "c.csv", ramp_rows(3)), 4)


def test_frame_indices():
    assert frame_indices(24, 8).tolist() == [1, 4, 7, 10, 13, 16, 19, 22]
    assert frame_indices(5, 5).tolist() == [0, 1, 2, 3, 4]
    assert frame_indices(4, 3).tolist() == frame_indices(4, 3).tolist()
    draws = frame_indices(24, 8, np.random.default_rng(0))
    assert all(3 * i <= d < 3 * (i + 1) for i, d in enumerate(draws))
    with pytest.raises(DataFormatError):
        frame_indices(2, 3)


def test_frame_stack_loading(tmp_path):
    d = tmp_path / "s0"
    d.mkdir()
    for i in range(6):
        Image.fromarray(np.full((4, 5), i * 40, dtype=np.uint8)).save(d / f"f{i:02d}.pgm", format="PPM")
    stack = load_frame_stack(d, 3)
    assert stack.shape == (3, 1, 4, 5)
    np.testing.assert_allclose(stack[:, 0, 0, 0], np.array([1, 3, 5]) * 40 / 255)
    Image.fromarray(np.zeros((3, 3), dtype=np.uint8)).save(d / "f99.pgm", format="PPM")
    with pytest.raises(DataFormatError, match="size"):
        load_frame_stack(d, 7)


def test_synthetic_counts_and_determinism():
    spec = SyntheticTaskSpec(num_classes=2, samples_per_class=50, frame_side=8, seed=4)
    a, b = generate_synthetic(spec), generate_synthetic(spec)
    assert len(a.samples) == 100 and [s.label for s in a.samples].count(0) == 50
    for x, y in zip(a.samples, b.samples):
        assert np.array_equal(x.frames, y.frames)
        assert all(np.array_equal(x.windows[m].x, y.windows[m].x) for m in a.modalities)


def test_default_split_sizes():
    ds = generate_synthetic(SyntheticTaskSpec())
    assert len(ds.train) == 200 and len(ds.test) == 100 and len(ds.modalities) == 2


def test_noise_free_windows_are_identical_within_a_class():
    spec = SyntheticTaskSpec(num_classes=2, samples_per_class=3, sensor_noise=0.0, phase_jitter=0.0,
                             amplitude_jitter=0.0, frame_noise=0.0, frame_side=8)
    ds = generate_synthetic(spec)
    first = [s for s in ds.samples if s.label == 0]
    for s in first[1:]:
        assert np.array_equal(s.windows["acc"].y, first[0].windows["acc"].y)
        assert np.array_equal(s.frames, first[0].frames)


def test_spec_validation():
    with pytest.raises(ConfigError):
        generate_synthetic(SyntheticTaskSpec(num_classes=1))
    with pytest.raises(ConfigError):
        generate_synthetic(SyntheticTaskSpec(window=4))
    with pytest.raises(ConfigError):
        generate_synthetic(SyntheticTaskSpec(frame_noise=-1.0))


def small_dataset():
    ds = generate_synthetic(SyntheticTaskSpec(num_classes=2, samples_per_class=7, frame_side=8, window=8))
    encode_samples(ds.samples, 8)
    return ds


def test_batches_are_aligned_and_seeded():
    ds = small_dataset()
    a = [b.ids for b in make_aligned_batches(ds.samples, 4, seed=3)]
    assert a == [b.ids for b in make_aligned_batches(ds.samples, 4, seed=3)]
    assert len(a) == 3
    evals = list(make_aligned_batches(ds.samples, 4, train=False))
    assert [b.size for b in evals] == [4, 4, 4, 2]
    (whole,) = list(make_aligned_batches(ds.samples, 14, seed=1))
    assert sorted(whole.ids) == sorted(s.sample_id for s in ds.samples)
    for b in make_aligned_batches(ds.samples, 3, seed=9):
        assert all(ids == b.ids for ids in b.modality_ids.values())


def test_batches_require_every_modality():
    ds = small_dataset()
    del ds.samples[2].windows["gyro"]
    with pytest.raises(AlignmentError):
        list(make_aligned_batches(ds.samples, 4, modalities=["acc", "gyro"]))


def test_manifest_round_trip(tmp_path):
    ds = small_dataset()
    path = write_manifest(ds, tmp_path)
    back = load_manifest(path, ds.samples[0].frames.shape[0])
    assert [s.sample_id for s in back.samples] == [s.sample_id for s in ds.samples]
    assert [s.split for s in back.samples] == [s.split for s in ds.samples]
    s0, b0 = ds.samples[0], back.samples[0]
    assert np.array_equal(s0.windows["acc"].x, b0.windows["acc"].x)
    assert np.abs(s0.frames - b0.frames).max() <= 0.5 / 255 + 1e-12
