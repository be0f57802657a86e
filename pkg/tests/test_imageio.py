"""PPM codec and the preprocess/postprocess bridge."""

import numpy as np
import pytest

from gramtex.errors import DimensionError, ParseError, ValidationError
from gramtex.imageio import (
    VGG19_PREPROCESS,
    Image8,
    PreprocessSpec,
    load_ppm,
    postprocess,
    preprocess,
    save_ppm,
)

IDENTITY = PreprocessSpec()


class TestPpm:
    def test_one_red_pixel(self, tmp_path):
        path = tmp_path / "red.ppm"
        path.write_bytes(b"P6\n1 1\n255\n\xff\x00\x00")
        img = load_ppm(path)
        assert (img.height, img.width) == (1, 1)
        assert np.array_equal(img.pixels, [[[255, 0, 0]]])

    def test_round_trip_bitwise(self, tmp_path, rng):
        pixels = rng.integers(0, 256, size=(5, 7, 3), dtype=np.uint8)
        img = Image8(5, 7, pixels)
        path = tmp_path / "x.ppm"
        save_ppm(img, path)
        back = load_ppm(path)
        assert np.array_equal(back.pixels, pixels)
        path2 = tmp_path / "y.ppm"
        save_ppm(back, path2)
        assert path.read_bytes() == path2.read_bytes()

    def test_unsupported_maxval(self, tmp_path):
        path = tmp_path / "deep.ppm"
        path.write_bytes(b"P6\n1 1\n65535\n\x00\x00\x00\x00\x00\x00")
        with pytest.raises(ParseError, match="unsupported maxval"):
            load_ppm(path)

    def test_wrong_magic(self, tmp_path):
        path = tmp_path / "p5.ppm"
        path.write_bytes(b"P5\n1 1\n255\n\x00")
        with pytest.raises(ParseError, match="P6"):
            load_ppm(path)

    def test_comments_in_header(self, tmp_path):
        path = tmp_path / "c.ppm"
        path.write_bytes(b"P6\n# a comment\n2 1 # another\n255\n" + b"\x01" * 6)
        img = load_ppm(path)
        assert (img.height, img.width) == (1, 2)

    def test_truncated_payload_reports_offset(self, tmp_path):
        path = tmp_path / "t.ppm"
        path.write_bytes(b"P6\n2 2\n255\n\x00\x00\x00")
        with pytest.raises(ParseError, match="byte"):
            load_ppm(path)

    @pytest.mark.parametrize("header", [
        b"P6",
        b"P6\n",
        b"P6\nabc 1\n255\n",
        b"P6\n1\n",
        b"P6\n1 1\n",
        b"P6\n1 1\n255",
        b"P6\n0 1\n255\n",
        b"P6\n1 -1\n255\n\x00\x00\x00",
        b"P6\n# only a comment",
        b"",
    ])
    def test_malformed_headers_raise_cleanly(self, tmp_path, header):
        path = tmp_path / "bad.ppm"
        path.write_bytes(header)
        with pytest.raises(ParseError):
            load_ppm(path)

    def test_fuzz_corpus_never_crashes(self, tmp_path):
        # Seeded byte-level mutations of a valid file: every outcome is either
        # a parse (possibly of different but valid dims) or a ParseError.
        rng = np.random.Generator(np.random.PCG64(123))
        base = b"P6\n4 4\n255\n" + bytes(rng.integers(0, 256, 48, dtype=np.uint8))
        path = tmp_path / "fuzz.ppm"
        for _ in range(200):
            blob = bytearray(base)
            for _ in range(rng.integers(1, 5)):
                blob[rng.integers(0, len(blob))] = rng.integers(0, 256)
            path.write_bytes(bytes(blob))
            try:
                load_ppm(path)
            except ParseError:
                pass


class TestPreprocess:
    def test_identity_spec_keeps_raw_values(self, rng):
        pixels = rng.integers(0, 256, size=(3, 4, 3), dtype=np.uint8)
        t = preprocess(Image8(3, 4, pixels), IDENTITY)
        assert np.array_equal(t, pixels.astype(float).transpose(2, 0, 1))

    def test_value_at_channel_mean_maps_to_zero(self):
        spec = PreprocessSpec(channel_means=(10.0, 20.0, 30.0))
        pixels = np.zeros((1, 1, 3), dtype=np.uint8)
        pixels[0, 0] = (10, 20, 30)
        t = preprocess(Image8(1, 1, pixels), spec)
        assert np.array_equal(t, np.zeros((3, 1, 1)))

    def test_bgr_reorders_channels(self):
        pixels = np.zeros((1, 1, 3), dtype=np.uint8)
        pixels[0, 0] = (1, 2, 3)
        t = preprocess(Image8(1, 1, pixels), PreprocessSpec(channel_order="bgr"))
        assert np.array_equal(t[:, 0, 0], [3.0, 2.0, 1.0])

    @pytest.mark.parametrize("spec", [
        IDENTITY,
        VGG19_PREPROCESS,
        PreprocessSpec(channel_means=(5.0, -3.0, 100.0), channel_order="bgr", scale=2.0),
    ])
    def test_postprocess_inverts_preprocess(self, spec, rng):
        pixels = rng.integers(0, 256, size=(6, 5, 3), dtype=np.uint8)
        img = Image8(6, 5, pixels)
        assert np.array_equal(postprocess(preprocess(img, spec), spec).pixels, pixels)

    def test_clamps_low(self):
        spec = IDENTITY
        t = np.full((3, 1, 1), -10.0)
        assert np.array_equal(postprocess(t, spec).pixels, np.zeros((1, 1, 3)))

    def test_clamps_high(self):
        t = np.full((3, 1, 1), 300.0)
        assert np.array_equal(postprocess(t, IDENTITY).pixels,
                              np.full((1, 1, 3), 255))

    def test_rounds_half_away_from_zero(self):
        t = np.zeros((3, 2, 1))
        t[:, 0, 0] = 100.5
        t[:, 1, 0] = 99.5
        out = postprocess(t, IDENTITY).pixels
        assert out[0, 0, 0] == 101 and out[1, 0, 0] == 100

    def test_scale_validated(self):
        with pytest.raises(ValidationError):
            PreprocessSpec(scale=0.0)

    def test_channel_order_validated(self):
        with pytest.raises(ValidationError):
            PreprocessSpec(channel_order="gbr")

    def test_postprocess_needs_three_channels(self):
        with pytest.raises(DimensionError):
            postprocess(np.zeros((4, 2, 2)), IDENTITY)

    def test_image8_sample_count_invariant(self):
        with pytest.raises(DimensionError):
            Image8(2, 2, np.zeros((2, 3, 3), dtype=np.uint8))
