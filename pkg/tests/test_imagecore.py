import colorsys

import numpy as np
import pytest

from chanomaly.imagecore import (
    DecodeError,
    Image,
    ImageError,
    JitterSpec,
    ValueRange,
    colour_jitter,
    decode,
    decode_ppm,
    denormalise,
    encode_ppm,
    flip,
    jitter_with_factors,
    normalise,
    resize,
)


def random_image(rng, h=None, w=None):
    h = h or int(rng.integers(1, 16))
    w = w or int(rng.integers(1, 16))
    return Image(rng.integers(0, 256, (h, w, 3), dtype=np.uint8))


class TestDecode:
    def test_p6_header_and_payload(self):
        payload = bytes(range(12))
        img = decode_ppm(b"P6 2 2 255 " + payload)
        assert img.width == 2 and img.height == 2
        assert img.data.tobytes() == payload

    def test_comments_in_header(self):
        img = decode_ppm(b"P6 # a comment\n2 1 # another\n255\n" + bytes(6))
        assert (img.width, img.height) == (2, 1)

    def test_truncated_payload(self):
        with pytest.raises(DecodeError):
            decode_ppm(b"P6 2 2 255 " + bytes(11))

    def test_bad_magic(self):
        with pytest.raises(DecodeError):
            decode_ppm(b"P5 2 2 255 " + bytes(12))

    def test_roundtrip_random_images(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            img = random_image(rng)
            assert decode_ppm(encode_ppm(img)) == img

    def test_decode_sniffs_format(self):
        rng = np.random.default_rng(1)
        img = random_image(rng)
        assert decode(encode_ppm(img)) == img

    def test_png_roundtrip_and_alpha_rejection(self):
        import io

        from PIL import Image as PILImage

        from chanomaly.imagecore import decode_png, encode_png

        rng = np.random.default_rng(2)
        img = random_image(rng, 5, 7)
        assert decode_png(encode_png(img)) == img
        buf = io.BytesIO()
        PILImage.new("RGBA", (4, 4)).save(buf, format="PNG")
        with pytest.raises(ImageError, match="RGBA"):
            decode_png(buf.getvalue())


class TestResize:
    def test_constant_image_stays_constant(self):
        img = Image(np.full((10, 10, 3), 77, dtype=np.uint8))
        out = resize(img, 64)
        assert out.data.shape == (64, 64, 3)
        assert (out.data == 77).all()

    def test_identity_size(self):
        rng = np.random.default_rng(3)
        img = random_image(rng, 32, 32)
        assert resize(img, 32) == img

    def test_zero_target_rejected(self):
        with pytest.raises(ImageError):
            resize(Image(np.zeros((2, 2, 3), np.uint8)), 0)

    def test_checkerboard_matches_reference_bilinear(self):
        # Independent scalar bilinear interpolator with half-pixel centres.
        rng = np.random.default_rng(4)
        src = rng.integers(0, 256, (2, 2, 3), dtype=np.uint8)
        out = resize(Image(src), 4)

        def ref(y, x, c):
            sy = (y + 0.5) * 2 / 4 - 0.5
            sx = (x + 0.5) * 2 / 4 - 0.5
            sy = min(max(sy, 0.0), 1.0)
            sx = min(max(sx, 0.0), 1.0)
            y0, x0 = int(np.floor(sy)), int(np.floor(sx))
            y1, x1 = min(y0 + 1, 1), min(x0 + 1, 1)
            fy, fx = sy - y0, sx - x0
            v = (
                src[y0, x0, c] * (1 - fy) * (1 - fx)
                + src[y0, x1, c] * (1 - fy) * fx
                + src[y1, x0, c] * fy * (1 - fx)
                + src[y1, x1, c] * fy * fx
            )
            return v

        for y in range(4):
            for x in range(4):
                for c in range(3):
                    assert abs(float(out.data[y, x, c]) - ref(y, x, c)) <= 1.0


class TestFlip:
    def test_horizontal_pair(self):
        img = Image(np.array([[[1, 1, 1], [2, 2, 2]]], dtype=np.uint8))
        out = flip(img, "horizontal")
        assert (out.data[0, 0] == 2).all() and (out.data[0, 1] == 1).all()

    def test_vertical_swaps_rows(self):
        top_red = np.zeros((2, 1, 3), np.uint8)
        top_red[0, 0] = (255, 0, 0)
        top_red[1, 0] = (0, 255, 0)
        out = flip(Image(top_red), "vertical")
        assert tuple(out.data[0, 0]) == (0, 255, 0)
        assert tuple(out.data[1, 0]) == (255, 0, 0)

    def test_involution_and_commutation(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            img = random_image(rng)
            for axis in ("horizontal", "vertical"):
                assert flip(flip(img, axis), axis) == img
            hv = flip(flip(img, "horizontal"), "vertical")
            vh = flip(flip(img, "vertical"), "horizontal")
            assert hv == vh


class TestColourJitter:
    def test_identity_factors(self):
        rng = np.random.default_rng(6)
        img = random_image(rng)
        spec = JitterSpec((1.0, 1.0), (1.0, 1.0), (1.0, 1.0), (0.0, 0.0))
        assert colour_jitter(img, spec, rng) == img

    def test_zero_brightness_blacks_out(self):
        rng = np.random.default_rng(7)
        img = random_image(rng)
        out = jitter_with_factors(img, 0.0, 1.0, 1.0, 0.0)
        assert (out.data == 0).all()

    def test_negative_interval_rejected(self):
        with pytest.raises(ImageError):
            JitterSpec(brightness=(-0.1, 1.0))

    def test_matches_scalar_reference(self):
        # colorsys-based per-pixel reference for the fixed jitter order.
        rng = np.random.default_rng(8)
        luma = np.array([0.299, 0.587, 0.114])
        for _ in range(5):
            img = random_image(rng, 6, 5)
            b, c, s = rng.uniform(0.7, 1.3, 3)
            hshift = rng.uniform(-0.08, 0.08)
            out = jitter_with_factors(img, b, c, s, hshift)
            x = img.data.astype(np.float64) * b
            gray = float((x @ luma).mean())
            x = (x - gray) * c + gray
            lum = (x @ luma)[..., None]
            x = np.clip(lum + (x - lum) * s, 0, 255)
            for y in range(img.height):
                for xx in range(img.width):
                    r, g, bb = x[y, xx] / 255.0
                    hh, ll, ss = colorsys.rgb_to_hsv(r, g, bb)
                    rr, gg, bbb = colorsys.hsv_to_rgb((hh + hshift) % 1.0, ll, ss)
                    ref = np.floor(np.array([rr, gg, bbb]) * 255.0 + 0.5)
                    got = out.data[y, xx].astype(float)
                    assert np.abs(got - ref).max() <= 1.0


class TestNormalise:
    def test_endpoints(self):
        img = Image(np.array([[[0, 128, 255]]], dtype=np.uint8))
        out = normalise(img)
        assert out.range is ValueRange.UNIT
        assert out.data[0, 0, 0] == -1.0
        assert out.data[0, 0, 2] == 1.0
        assert abs(out.data[0, 0, 1] - (128 / 127.5 - 1)) < 1e-6
        assert abs(out.data[0, 0, 1] - 0.0039) < 1e-4

    def test_double_normalise_rejected(self):
        img = normalise(Image(np.zeros((1, 1, 3), np.uint8)))
        with pytest.raises(ImageError):
            normalise(img)

    def test_roundtrip_recovers_bytes(self):
        rng = np.random.default_rng(9)
        for _ in range(100):
            img = random_image(rng)
            assert denormalise(normalise(img)) == img

    def test_monotone_with_endpoints(self):
        ramp = Image(np.arange(256, dtype=np.uint8).reshape(16, 16, 1).repeat(3, axis=2))
        out = normalise(ramp).data[..., 0].ravel()
        assert out[0] == -1.0 and out[-1] == 1.0
        assert (np.diff(out) > 0).all()
