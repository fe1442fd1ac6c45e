import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sakdn.errors import ConstantSignalError, DomainError, NonFiniteError
from sakdn.gaf import GafImage, SensorWindow, encode_gaf, encode_triaxial, normalize_signal, resize_image, to_uint8
from sakdn import reference

signals = arrays(np.float64, st.integers(2, 40), elements=st.floats(-1e3, 1e3, allow_nan=False)).filter(
    lambda x: np.ptp(x) > 1e-6)


def test_normalize_examples():
    np.testing.assert_array_equal(normalize_signal([0.0, 0.5, 1.0]), [-1.0, 0.0, 1.0])
    np.testing.assert_array_equal(normalize_signal([-3.0, 1.0]), [-1.0, 1.0])
    with pytest.raises(ConstantSignalError):
        normalize_signal([5.0, 5.0, 5.0])
    np.testing.assert_array_equal(normalize_signal([5.0, 5.0], on_constant="zeros"), [0.0, 0.0])
    with pytest.raises(NonFiniteError):
        normalize_signal([0.0, np.inf])


def test_encode_examples():
    np.testing.assert_allclose(encode_gaf([-1.0, 0.0, 1.0]), [[1, 0, -1], [0, -1, 0], [-1, 0, 1]], atol=1e-15)
    np.testing.assert_array_equal(encode_gaf(np.ones(5)), np.ones((5, 5)))


def test_domain_slack():
    encode_gaf([1.0 + 5e-13, 0.0])
    with pytest.raises(DomainError):
        encode_gaf([1.0 + 1e-9, 0.0])


@given(signals)
def test_closed_form_symmetry_and_diagonal(x):
    xn = normalize_signal(x)
    g = encode_gaf(xn)
    s = np.sqrt(1 - xn**2)
    assert np.abs(g - (np.outer(xn, xn) - np.outer(s, s))).max() <= 1e-12
    assert np.array_equal(g, g.T)
    assert np.abs(np.diag(g) - (2 * xn**2 - 1)).max() <= 1e-12
    assert g.min() >= -1 and g.max() <= 1


@given(signals)
def test_matches_loop_reference(x):
    assert np.abs(encode_gaf(normalize_signal(x)) - reference.gaf(x)).max() <= 1e-12


@given(signals)
def test_diagonal_recovers_magnitude(x):
    xn = normalize_signal(x)
    rec = np.sqrt((np.diag(encode_gaf(xn)) + 1) / 2)
    assert np.abs(rec - np.abs(xn)).max() <= 1e-10


def test_triaxial_shapes_and_identical_axes(rng):
    a = rng.standard_normal(64)
    img = encode_triaxial(SensorWindow(a, a, a, label=1, modality="acc", sample_id="w0"))
    assert img.data.shape == (64, 64, 3)
    assert np.array_equal(img.data[..., 0], img.data[..., 1]) and np.array_equal(img.data[..., 0], img.data[..., 2])
    assert img.data.min() >= -1 and img.data.max() <= 1


def test_palindrome_axis_is_flip_invariant(rng):
    half = rng.standard_normal(5)
    pal = np.concatenate([half, half[::-1]])
    g = encode_triaxial(SensorWindow(pal, pal, pal)).data[..., 0]
    assert np.array_equal(g, g[::-1, ::-1])


def test_constant_axis_policy():
    w = SensorWindow(np.ones(4), np.arange(4.0), np.arange(4.0), sample_id="f:0")
    with pytest.raises(ConstantSignalError, match="f:0"):
        encode_triaxial(w)
    img = encode_triaxial(w, on_constant="zeros")
    assert img.constant_axes == ("x",)
    np.testing.assert_allclose(img.data[..., 0], -np.ones((4, 4)), atol=1e-15)


def test_resize_examples():
    ch = np.array([[0.0, 1.0], [1.0, 0.0]])
    img = GafImage(np.stack([ch] * 3, axis=-1), "acc", 0, "s")
    assert resize_image(img, 3).data[1, 1, 0] == pytest.approx(0.5, abs=1e-15)
    same = resize_image(img, 2)
    assert np.array_equal(same.data, img.data)
    const = GafImage(np.full((4, 4, 3), 0.3), "acc", 0, "s")
    np.testing.assert_allclose(resize_image(const, 7).data, 0.3, atol=1e-15)


def test_to_uint8_range():
    assert to_uint8(np.array([-1.0, 0.0, 1.0])).tolist() == [0, 128, 255]
