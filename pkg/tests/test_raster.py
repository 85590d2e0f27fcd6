import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from gradfuse.raster import MultiBandImage, RasterError, normalize, read_image, write_image


def _pair(tmp_path, name="img"):
    return tmp_path / f"{name}.json", tmp_path / f"{name}.bsq"


def test_decode_row_major(tmp_path):
    h, d = _pair(tmp_path)
    h.write_text(json.dumps({"width": 2, "height": 2, "bands": 1, "dtype": "f32", "layout": "bsq", "byte_order": "little"}))
    d.write_bytes(np.array([0.0, 0.25, 0.5, 1.0], dtype="<f4").tobytes())
    img = read_image(h, d)
    assert img.shape == (1, 2, 2)
    np.testing.assert_array_equal(img.data[0], [[0.0, 0.25], [0.5, 1.0]])


def test_length_mismatch(tmp_path):
    h, d = _pair(tmp_path)
    h.write_text(json.dumps({"width": 4, "height": 4, "bands": 4, "dtype": "f32", "layout": "bsq", "byte_order": "little"}))
    d.write_bytes(b"\0" * (4 * 4 * 4 * 4 - 4))
    with pytest.raises(RasterError, match="length mismatch"):
        read_image(h, d)


@pytest.mark.parametrize("bad", [
    "not json",
    json.dumps({"width": 1, "height": 1, "bands": 1, "dtype": "f64", "layout": "bsq", "byte_order": "little"}),
    json.dumps({"width": 0, "height": 1, "bands": 1, "dtype": "f32", "layout": "bsq", "byte_order": "little"}),
    json.dumps({"width": 1, "height": 1, "bands": 1, "dtype": "f32", "layout": "bil", "byte_order": "little"}),
    json.dumps({"width": 1, "height": 1, "bands": 1, "dtype": "f32", "layout": "bsq", "byte_order": "big"}),
])
def test_malformed_header(tmp_path, bad):
    h, d = _pair(tmp_path)
    h.write_text(bad)
    d.write_bytes(b"\0" * 4)
    with pytest.raises(RasterError, match="malformed header"):
        read_image(h, d)


def test_non_finite_sample_rejected(tmp_path):
    h, d = _pair(tmp_path)
    h.write_text(json.dumps({"width": 2, "height": 1, "bands": 1, "dtype": "f32", "layout": "bsq", "byte_order": "little"}))
    d.write_bytes(np.array([0.0, np.nan], dtype="<f4").tobytes())
    with pytest.raises(RasterError, match="row 0, column 1"):
        read_image(h, d)


def test_half_encodes_as_ieee(tmp_path):
    h, d = _pair(tmp_path)
    write_image(MultiBandImage(np.full((1, 1, 1), 0.5)), h, d)
    assert d.read_bytes() == bytes([0x00, 0x00, 0x00, 0x3F])


def test_band_plane_first(tmp_path):
    h, d = _pair(tmp_path)
    data = np.arange(8, dtype=np.float32).reshape(2, 2, 2)
    write_image(MultiBandImage(data), h, d)
    raw = d.read_bytes()
    assert len(raw) == 32
    np.testing.assert_array_equal(np.frombuffer(raw[:16], "<f4"), [0, 1, 2, 3])


@pytest.mark.parametrize("shape,seed", [((8, 16, 16), 7), ((4, 250, 250), 1)])
def test_round_trip_bit_exact(tmp_path, shape, seed):
    data = np.random.default_rng(seed).random(shape).astype(np.float32)
    h, d = _pair(tmp_path)
    write_image(MultiBandImage(data, tuple(f"b{i}" for i in range(shape[0]))), h, d)
    back = read_image(h, d)
    assert back.data.tobytes() == data.tobytes()
    assert back.band_names[0] == "b0"


@settings(max_examples=30, deadline=None)
@given(hnp.arrays(np.float32, hnp.array_shapes(min_dims=3, max_dims=3, max_side=6),
                  elements=st.floats(-1e6, 1e6, width=32)))
def test_round_trip_property(tmp_path_factory, data):
    h, d = _pair(tmp_path_factory.mktemp("rt"))
    write_image(MultiBandImage(data), h, d)
    assert read_image(h, d).data.tobytes() == data.tobytes()


def test_image_is_read_only():
    img = MultiBandImage(np.zeros((1, 2, 2)))
    with pytest.raises(ValueError):
        img.data[0, 0, 0] = 1.0


def test_normalize_arithmetic():
    out = normalize(np.array([[[0.0, 511.0, 1023.0]]]))
    np.testing.assert_array_equal(out.data[0, 0], [0.0, 511 / 1023, 1.0])


def test_normalize_constant_is_zero():
    assert np.all(normalize(np.full((2, 3, 3), 0.7)).data == 0)


def test_normalize_identity_on_unit_range(rng):
    x = rng.random((3, 5, 5))
    x[:, 0, 0], x[:, 0, 1] = 0.0, 1.0
    np.testing.assert_array_equal(normalize(x).data, x)
    np.testing.assert_array_equal(normalize(x, per_band=False).data, x)


def test_normalize_global_vs_per_band():
    x = np.stack([np.full((2, 2), 0.0), np.full((2, 2), 2.0)])
    x[0, 0, 0] = 1.0
    assert normalize(x, per_band=True).data[1].max() == 0.0  # constant band
    assert normalize(x, per_band=False).data[1].max() == 1.0


@settings(max_examples=40, deadline=None)
@given(hnp.arrays(np.float64, (2, 4, 4), elements=st.floats(-1e3, 1e3)), st.booleans())
def test_normalize_range_and_idempotence(x, per_band):
    once = normalize(x, per_band)
    assert once.data.min() >= 0.0 and once.data.max() <= 1.0
    twice = normalize(once, per_band)
    np.testing.assert_allclose(twice.data, once.data, atol=1e-12)
