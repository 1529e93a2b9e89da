import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from twinfuse.errors import DataError
from twinfuse.hog import (HogConfig, descriptor_length, gradient_maps, hog_descriptor,
                          load_image_gray, read_pgm, resize_nearest, write_pgm)


def _pgm(path, header: bytes, payload: bytes):
    path.write_bytes(header + payload)
    return path


@pytest.fixture
def texture():
    rng = np.random.default_rng(7)
    return rng.uniform(0.2, 0.7, size=(128, 64))


class TestPgm:
    def test_scaling(self, tmp_path):
        p = _pgm(tmp_path / "a.pgm", b"P5\n2 2\n255\n", bytes([0, 255, 128, 64]))
        np.testing.assert_array_equal(read_pgm(p), [[0, 255], [128, 64]])
        img = read_pgm(p) / 255.0
        np.testing.assert_allclose(img, [[0, 1.0], [0.50196078, 0.25098039]], atol=1e-8)

    def test_comments_in_header(self, tmp_path):
        p = _pgm(tmp_path / "c.pgm", b"P5 # made by hand\n3 3\n# note\n255\n", bytes(range(9)))
        assert read_pgm(p).shape == (3, 3)

    def test_maxval(self, tmp_path):
        p = _pgm(tmp_path / "m.pgm", b"P5\n3 3\n65535\n", bytes(18))
        with pytest.raises(DataError, match="unsupported-maxval"):
            read_pgm(p)

    def test_magic(self, tmp_path):
        p = _pgm(tmp_path / "m.pgm", b"P2\n3 3\n255\n", bytes(9))
        with pytest.raises(DataError, match="magic"):
            read_pgm(p)

    def test_truncated(self, tmp_path):
        p = _pgm(tmp_path / "t.pgm", b"P5\n3 3\n255\n", bytes(5))
        with pytest.raises(DataError, match="truncated"):
            read_pgm(p)

    def test_too_small(self, tmp_path):
        p = _pgm(tmp_path / "s.pgm", b"P5\n2 5\n255\n", bytes(10))
        with pytest.raises(DataError, match="too-small"):
            load_image_gray(p)

    def test_round_trip_and_resize(self, tmp_path, texture):
        write_pgm(tmp_path / "r.pgm", texture)
        img = load_image_gray(tmp_path / "r.pgm")
        np.testing.assert_allclose(img, texture, atol=0.5 / 255 + 1e-12)
        assert load_image_gray(tmp_path / "r.pgm", (32, 48)).shape == (48, 32)

    def test_resize_nearest(self):
        img = np.arange(16.0).reshape(4, 4)
        np.testing.assert_array_equal(resize_nearest(img, 2, 2), [[5, 7], [13, 15]])


class TestGradients:
    def test_constant(self):
        mag, _ = gradient_maps(np.full((10, 10), 0.3))
        assert not mag.any()

    def test_vertical_step_edge(self):
        img = np.zeros((10, 10))
        img[:, 5:] = 1.0
        mag, ang = gradient_maps(img)
        np.testing.assert_array_equal(mag[1:-1, 4:6], 1.0)
        np.testing.assert_array_equal(ang[1:-1, 4:6], 0.0)

    def test_unsigned_range(self, texture):
        _, ang = gradient_maps(texture)
        assert ang.min() >= 0 and ang.max() < 180
        _, signed = gradient_maps(texture, signed=True)
        assert signed.max() < 360

    def test_shift(self, texture):
        a = gradient_maps(texture)
        b = gradient_maps(texture + 0.1)
        np.testing.assert_allclose(a[0], b[0], atol=1e-12)
        np.testing.assert_allclose(a[1], b[1], atol=1e-9)


class TestDescriptor:
    def test_default_length(self, texture):
        assert hog_descriptor(texture).shape == (3780,)

    def test_constant_image(self):
        assert not hog_descriptor(np.full((128, 64), 0.5)).any()

    def test_block_norms_below_one(self, texture):
        blocks = hog_descriptor(texture).reshape(-1, 36)
        norms = np.linalg.norm(blocks, axis=1)
        assert (norms < 1).all()
        assert norms.min() > 0.99

    def test_nonnegative(self, texture):
        assert (hog_descriptor(texture) >= 0).all()

    def test_additive_shift(self, texture):
        np.testing.assert_allclose(hog_descriptor(texture + 0.25), hog_descriptor(texture),
                                   atol=1e-12)

    def test_contrast_scaling(self, texture):
        np.testing.assert_allclose(hog_descriptor(1.3 * texture), hog_descriptor(texture),
                                   atol=1e-6)

    def test_single_orientation_votes(self):
        # horizontal ramp: every gradient points along 0 degrees, split evenly
        # between the bins centred at 10 and 170 degrees
        img = np.tile(np.arange(16.0) / 16, (16, 1))
        d = hog_descriptor(img, HogConfig(block_cells=2))
        block = d.reshape(4, 9)
        assert np.count_nonzero(block[:, 1:8]) == 0
        np.testing.assert_allclose(block[:, 0], block[:, 8])

    def test_smaller_than_block(self):
        with pytest.raises(DataError):
            hog_descriptor(np.zeros((10, 10)))

    def test_stride_must_align(self, texture):
        with pytest.raises(DataError):
            hog_descriptor(texture, HogConfig(block_stride_px=12))

    @settings(max_examples=40, deadline=None)
    @given(w=st.integers(16, 80), h=st.integers(16, 80), cell=st.sampled_from([4, 8]),
           block=st.integers(1, 3), step=st.integers(1, 2), bins=st.integers(2, 12))
    def test_length_formula(self, w, h, cell, block, step, bins):
        cfg = HogConfig(cell_px=cell, block_cells=block, block_stride_px=cell * step, n_bins=bins)
        block_px = cell * block
        if w < block_px or h < block_px:
            return
        bx = (w - block_px) // (cell * step) + 1
        by = (h - block_px) // (cell * step) + 1
        img = np.random.default_rng(w * h).uniform(size=(h, w))
        d = hog_descriptor(img, cfg)
        assert len(d) == descriptor_length(w, h, cfg) == bx * by * block * block * bins
        assert (d >= 0).all()

    @pytest.mark.parametrize("kw", [dict(cell_px=1), dict(n_bins=1), dict(epsilon=0.0)])
    def test_config_invariants(self, kw):
        with pytest.raises(DataError):
            HogConfig(**kw).validate()
