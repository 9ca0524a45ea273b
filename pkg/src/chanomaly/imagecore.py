"""Image representation and the preprocessing operations applied around
channel randomisation: decoding/encoding, bilinear resize, flips, colour
jitter and [-1, 1] normalisation.

Images are held as H x W x 3 numpy arrays together with a value-range tag.
Byte-range images use uint8; normalised images use float32 in [-1, 1].
Pipeline order is fixed as resize -> flips -> jitter -> channel ops ->
normalise so that runs are reproducible.
"""

from __future__ import annotations

import enum
import io
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ValueRange",
    "Image",
    "JitterSpec",
    "ImageError",
    "DecodeError",
    "decode",
    "decode_ppm",
    "decode_png",
    "encode_ppm",
    "encode_png",
    "resize",
    "flip",
    "rotate90",
    "colour_jitter",
    "normalise",
    "denormalise",
]


class ImageError(ValueError):
    """Invalid image content or an operation applied in the wrong state."""


class DecodeError(ImageError):
    """Malformed image file; carries the byte offset where parsing failed."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ValueRange(enum.Enum):
    BYTE255 = "byte255"
    UNIT = "unit"  # float values bounded by [-1, 1]


@dataclass(frozen=True)
class Image:
    """An H x W x 3 raster with an explicit value-range tag."""

    data: np.ndarray
    range: ValueRange = ValueRange.BYTE255

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ImageError(f"expected H x W x 3 data, got shape {arr.shape}")
        if self.range is ValueRange.BYTE255:
            if arr.dtype != np.uint8:
                raise ImageError(f"byte-range image must be uint8, got {arr.dtype}")
        else:
            arr = arr.astype(np.float32, copy=False)
            if arr.size and (arr.min() < -1.0 or arr.max() > 1.0):
                raise ImageError("normalised image has values outside [-1, 1]")
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Image)
            and self.range is other.range
            and self.data.shape == other.data.shape
            and bool(np.array_equal(self.data, other.data))
        )


# ---------------------------------------------------------------------------
# Decoding / encoding
# ---------------------------------------------------------------------------


def _ppm_next_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    # Netpbm allows '#' comments running to end of line anywhere in the header.
    n = len(buf)
    while pos < n:
        c = buf[pos : pos + 1]
        if c.isspace():
            pos += 1
        elif c == b"#":
            while pos < n and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        else:
            break
    if pos >= n:
        raise DecodeError("unexpected end of header", pos)
    start = pos
    while pos < n and not buf[pos : pos + 1].isspace() and buf[pos : pos + 1] != b"#":
        pos += 1
    return buf[start:pos], pos


def decode_ppm(content: bytes) -> Image:
    """Decode a binary PPM (P6) file, bit-exactly per the Netpbm format."""
    if content[:2] != b"P6":
        raise DecodeError("not a P6 PPM file", 0)
    pos = 2
    fields = []
    for _ in range(3):
        tok, pos = _ppm_next_token(content, pos)
        if not tok.isdigit():
            raise DecodeError(f"expected integer header field, got {tok!r}", pos)
        fields.append(int(tok))
    width, height, maxval = fields
    if width <= 0 or height <= 0:
        raise DecodeError("non-positive image dimensions", pos)
    if maxval != 255:
        raise DecodeError(f"unsupported maxval {maxval}; only 255 is handled", pos)
    # Exactly one whitespace byte separates the header from the payload.
    if pos >= len(content) or not content[pos : pos + 1].isspace():
        raise DecodeError("missing whitespace before pixel payload", pos)
    pos += 1
    expected = width * height * 3
    payload = content[pos : pos + expected]
    if len(payload) < expected:
        raise DecodeError(
            f"truncated payload: expected {expected} bytes, got {len(payload)}",
            pos + len(payload),
        )
    data = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)
    return Image(data.copy(), ValueRange.BYTE255)


def encode_ppm(img: Image) -> bytes:
    if img.range is not ValueRange.BYTE255:
        raise ImageError("only byte-range images can be PPM-encoded")
    header = f"P6 {img.width} {img.height} 255\n".encode("ascii")
    return header + img.data.tobytes()


def decode_png(content: bytes) -> Image:
    from PIL import Image as PILImage

    try:
        with PILImage.open(io.BytesIO(content)) as im:
            if im.mode != "RGB":
                raise ImageError(
                    f"unsupported PNG mode {im.mode!r}: only 8-bit RGB is accepted "
                    "(alpha channels are rejected, not dropped)"
                )
            data = np.asarray(im, dtype=np.uint8)
    except ImageError:
        raise
    except Exception as exc:
        raise DecodeError(f"malformed PNG: {exc}") from exc
    return Image(data, ValueRange.BYTE255)


def encode_png(img: Image) -> bytes:
    from PIL import Image as PILImage

    if img.range is not ValueRange.BYTE255:
        raise ImageError("only byte-range images can be PNG-encoded")
    buf = io.BytesIO()
    PILImage.fromarray(img.data, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def decode(content: bytes, fmt: str | None = None) -> Image:
    """Decode PPM-P6 or PNG content. The format is sniffed when not given."""
    if fmt is None:
        fmt = "ppm" if content[:2] == b"P6" else "png"
    fmt = fmt.lower()
    if fmt in ("ppm", "p6", "ppm-p6"):
        return decode_ppm(content)
    if fmt == "png":
        return decode_png(content)
    raise ImageError(f"unknown image format {fmt!r}")


# ---------------------------------------------------------------------------
# Geometry
# ---------------------------------------------------------------------------


def resize(img: Image, target: int) -> Image:
    """Bilinear resize to target x target with half-pixel-centre alignment."""
    if target <= 0:
        raise ImageError(f"invalid resize target {target}")
    h, w = img.height, img.width
    if h == target and w == target:
        return Image(img.data.copy(), img.range)

    def src_coords(n_dst, n_src):
        scale = n_src / n_dst
        x = (np.arange(n_dst) + 0.5) * scale - 0.5
        x = np.clip(x, 0.0, n_src - 1.0)
        lo = np.floor(x).astype(np.int64)
        hi = np.minimum(lo + 1, n_src - 1)
        return lo, hi, (x - lo)

    y0, y1, fy = src_coords(target, h)
    x0, x1, fx = src_coords(target, w)
    src = img.data.astype(np.float64)
    fy = fy[:, None, None]
    fx = fx[None, :, None]
    top = src[y0][:, x0] * (1 - fx) + src[y0][:, x1] * fx
    bot = src[y1][:, x0] * (1 - fx) + src[y1][:, x1] * fx
    out = top * (1 - fy) + bot * fy
    if img.range is ValueRange.BYTE255:
        out = np.floor(out + 0.5)  # round half away from zero, values are >= 0
        return Image(out.astype(np.uint8), ValueRange.BYTE255)
    return Image(np.clip(out, -1.0, 1.0).astype(np.float32), ValueRange.UNIT)


def flip(img: Image, axis: str) -> Image:
    """Mirror along 'horizontal' (left-right) or 'vertical' (top-bottom)."""
    if axis == "horizontal":
        return Image(img.data[:, ::-1].copy(), img.range)
    if axis == "vertical":
        return Image(img.data[::-1].copy(), img.range)
    raise ImageError(f"unknown flip axis {axis!r}")


def rotate90(img: Image, quarter_turns: int) -> Image:
    """Rotate counter-clockwise by quarter_turns * 90 degrees."""
    k = quarter_turns % 4
    return Image(np.rot90(img.data, k).copy(), img.range)


# ---------------------------------------------------------------------------
# Colour jitter
# ---------------------------------------------------------------------------

_LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class JitterSpec:
    """Uniform sampling intervals for the four jitter factors.

    Brightness/contrast/saturation are multiplicative factors; hue is an
    additive shift in turns (fractions of a full rotation of the HSV hue
    circle). Defaults are mild so the colour signal the pretext task relies
    on is not destroyed.
    """

    brightness: tuple[float, float] = (0.8, 1.2)
    contrast: tuple[float, float] = (0.8, 1.2)
    saturation: tuple[float, float] = (0.8, 1.2)
    hue: tuple[float, float] = (-0.05, 0.05)

    def __post_init__(self):
        for name in ("brightness", "contrast", "saturation"):
            lo, hi = getattr(self, name)
            if lo < 0 or hi < lo:
                raise ImageError(f"invalid {name} interval ({lo}, {hi})")
        lo, hi = self.hue
        if hi < lo or lo < -0.5 or hi > 0.5:
            raise ImageError(f"invalid hue interval ({lo}, {hi})")


def rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    """Vectorised RGB -> HSV on float arrays in [0, 1]; hue in turns."""
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    maxc = rgb.max(axis=-1)
    minc = rgb.min(axis=-1)
    delta = maxc - minc
    s = np.where(maxc > 0, delta / np.where(maxc > 0, maxc, 1.0), 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        dd = np.where(delta > 0, delta, 1.0)
        h = np.select(
            [maxc == r, maxc == g],
            [(g - b) / dd, 2.0 + (b - r) / dd],
            default=4.0 + (r - g) / dd,
        )
    h = np.where(delta > 0, (h / 6.0) % 1.0, 0.0)
    return np.stack([h, s, maxc], axis=-1)


def hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    i = i.astype(np.int64) % 6
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    choices = [
        np.stack([v, t, p], axis=-1),
        np.stack([q, v, p], axis=-1),
        np.stack([p, v, t], axis=-1),
        np.stack([p, q, v], axis=-1),
        np.stack([t, p, v], axis=-1),
        np.stack([v, p, q], axis=-1),
    ]
    out = np.choose(i[..., None], choices)
    return out


def jitter_with_factors(
    img: Image,
    brightness: float,
    contrast: float,
    saturation: float,
    hue_shift: float,
) -> Image:
    """Apply jitter with explicit factors, in the fixed order
    brightness -> contrast -> saturation -> hue."""
    if img.range is not ValueRange.BYTE255:
        raise ImageError("colour jitter operates on byte-range images")
    x = img.data.astype(np.float64)
    x = x * brightness
    gray_mean = float((x @ _LUMA).mean())
    x = (x - gray_mean) * contrast + gray_mean
    luma = (x @ _LUMA)[..., None]
    x = luma + (x - luma) * saturation
    x = np.clip(x, 0.0, 255.0)
    if hue_shift != 0.0:
        hsv = rgb_to_hsv(x / 255.0)
        hsv[..., 0] = (hsv[..., 0] + hue_shift) % 1.0
        x = hsv_to_rgb(hsv) * 255.0
    x = np.clip(np.floor(x + 0.5), 0.0, 255.0)
    return Image(x.astype(np.uint8), ValueRange.BYTE255)


def colour_jitter(img: Image, params: JitterSpec, rng: np.random.Generator) -> Image:
    """Jitter with factors drawn uniformly from the intervals in params."""
    b = rng.uniform(*params.brightness)
    c = rng.uniform(*params.contrast)
    s = rng.uniform(*params.saturation)
    h = rng.uniform(*params.hue)
    return jitter_with_factors(img, b, c, s, h)


# ---------------------------------------------------------------------------
# Normalisation
# ---------------------------------------------------------------------------


def normalise(img: Image) -> Image:
    """Map byte values into [-1, 1] via v / 127.5 - 1."""
    if img.range is not ValueRange.BYTE255:
        raise ImageError("image is already normalised")
    out = img.data.astype(np.float32) / 127.5 - 1.0
    return Image(out, ValueRange.UNIT)


def denormalise(img: Image) -> Image:
    """Inverse of normalise, rounding back to bytes."""
    if img.range is not ValueRange.UNIT:
        raise ImageError("image is not normalised")
    out = np.clip(np.floor((img.data.astype(np.float64) + 1.0) * 127.5 + 0.5), 0, 255)
    return Image(out.astype(np.uint8), ValueRange.BYTE255)
