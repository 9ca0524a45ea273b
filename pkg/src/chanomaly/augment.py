"""Channel-randomisation augmentations and pixel-selection variants.

A channel map assigns each output channel a source channel. Three draw
modes exist for RGB input:

* ``rand``  -- any of the 26 non-identity assignments (repetition allowed),
* ``perm``  -- the 5 non-identity permutations,
* ``split`` -- the 3 constant maps copying one channel into all three.

Randomisation may be restricted to a pixel subset: all pixels, a random
rectangular patch, a grayscale-rank window, a sparse random sample, or the
strongest Sobel-delimited region.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .imagecore import Image, ImageError, ValueRange, _LUMA

__all__ = [
    "ChannelMap",
    "PixelSelection",
    "enumerate_maps",
    "draw_channel_map",
    "apply_channel_map",
    "select_pixels",
    "sobel_region",
    "randomise_channels",
]

_CHANNEL_NAMES = "RGB"


@dataclass(frozen=True)
class ChannelMap:
    """Fixed assignment from output channel index to source channel index."""

    mapping: tuple[int, int, int]

    def __post_init__(self):
        if len(self.mapping) != 3:
            raise ValueError("channel maps are defined for 3-channel images")
        if any(not (0 <= m <= 2) for m in self.mapping):
            raise ValueError(f"channel indices out of range: {self.mapping}")
        if tuple(self.mapping) == (0, 1, 2):
            raise ValueError("identity channel map is not a valid augmentation")
        object.__setattr__(self, "mapping", tuple(int(m) for m in self.mapping))

    @property
    def name(self) -> str:
        """Letter form, e.g. (2, 2, 0) -> 'BBR'."""
        return "".join(_CHANNEL_NAMES[m] for m in self.mapping)

    @classmethod
    def from_name(cls, name: str) -> "ChannelMap":
        return cls(tuple(_CHANNEL_NAMES.index(c) for c in name.upper()))


@dataclass(frozen=True)
class PixelSelection:
    """Which pixels channel randomisation applies to.

    kind is one of 'all', 'patch', 'sobel', 'th', 'sp'; fraction is the
    window/sample size for the rank ('th') and sparse ('sp') kinds.
    """

    kind: str = "all"
    fraction: float | None = None

    def __post_init__(self):
        if self.kind not in ("all", "patch", "sobel", "th", "sp"):
            raise ValueError(f"unknown pixel-selection kind {self.kind!r}")
        needs_fraction = self.kind in ("th", "sp")
        if needs_fraction:
            if self.fraction is None or not (0.0 < self.fraction <= 1.0):
                raise ValueError(f"{self.kind} selection needs a fraction in (0, 1]")
        elif self.fraction is not None:
            raise ValueError(f"{self.kind} selection takes no fraction")

    @classmethod
    def parse(cls, text: str) -> "PixelSelection":
        """Parse 'all', 'patch', 'sobel', 'th0.5', 'sp0.75' style names."""
        t = text.strip().lower()
        for kind in ("th", "sp"):
            if t.startswith(kind) and t != kind:
                return cls(kind, float(t[len(kind) :]))
        return cls(t)

    def __str__(self) -> str:
        if self.fraction is not None:
            return f"{self.kind}{self.fraction:g}"
        return self.kind


# ---------------------------------------------------------------------------
# Channel maps
# ---------------------------------------------------------------------------


def enumerate_maps(mode: str) -> list[ChannelMap]:
    """All channel maps in a draw mode's support, in lexicographic order."""
    if mode == "rand":
        tuples = [t for t in itertools.product(range(3), repeat=3) if t != (0, 1, 2)]
    elif mode == "perm":
        tuples = [t for t in itertools.permutations(range(3)) if t != (0, 1, 2)]
    elif mode == "split":
        tuples = [(c, c, c) for c in range(3)]
    else:
        raise ValueError(f"unknown draw mode {mode!r}")
    return [ChannelMap(t) for t in sorted(tuples)]


def draw_channel_map(mode: str, rng: np.random.Generator) -> ChannelMap:
    """Draw uniformly from the mode's support.

    'rand' uses rejection sampling: assignments are drawn uniformly over all
    27 and redrawn while the identity comes up, which is uniform over the
    remaining 26.
    """
    if mode == "rand":
        # One base-3 digit triple per draw; index 5 encodes the identity.
        while True:
            code = int(rng.integers(27))
            if code != 5:
                return ChannelMap((code // 9, (code // 3) % 3, code % 3))
    support = enumerate_maps(mode)
    return support[rng.integers(len(support))]


def apply_channel_map(img: Image, cmap: ChannelMap, mask: np.ndarray | None = None) -> Image:
    """Rewrite masked pixels so output channel c takes input channel map[c]."""
    if mask is None:
        mask = np.ones((img.height, img.width), dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (img.height, img.width):
        raise ImageError(
            f"mask shape {mask.shape} does not match image {(img.height, img.width)}"
        )
    out = img.data.copy()
    remapped = img.data[:, :, list(cmap.mapping)]
    out[mask] = remapped[mask]
    return Image(out, img.range)


# ---------------------------------------------------------------------------
# Pixel selection
# ---------------------------------------------------------------------------


def _grayscale(img: Image) -> np.ndarray:
    return img.data.astype(np.float64) @ _LUMA


def select_pixels(img: Image, sel: PixelSelection, rng: np.random.Generator) -> np.ndarray:
    """Boolean H x W mask of the pixels the augmentation applies to."""
    h, w = img.height, img.width
    n = h * w
    if n == 0:
        raise ImageError("empty image")
    if sel.kind == "all":
        return np.ones((h, w), dtype=bool)
    if sel.kind == "patch":
        return _patch_mask(h, w, rng)
    if sel.kind == "sobel":
        return sobel_region(img)
    count = math.ceil(n * sel.fraction)
    if sel.kind == "sp":
        flat = rng.choice(n, size=count, replace=False)
        mask = np.zeros(n, dtype=bool)
        mask[flat] = True
        return mask.reshape(h, w)
    # 'th': contiguous window of grayscale ranks starting at a random rank.
    if count >= n:
        raise ImageError(f"rank-window fraction {sel.fraction} selects the whole image")
    gray = _grayscale(img).ravel()
    order = np.argsort(gray, kind="stable")  # rank ties broken by pixel index
    start = int(rng.integers(0, n - count)) + 1  # ranks are 1-based
    chosen = order[start - 1 : start - 1 + count]
    mask = np.zeros(n, dtype=bool)
    mask[chosen] = True
    return mask.reshape(h, w)


def _patch_mask(h: int, w: int, rng: np.random.Generator) -> np.ndarray:
    # Area fraction and aspect ratio follow the cut-and-paste convention.
    area = rng.uniform(0.05, 0.5) * h * w
    aspect = rng.uniform(0.5, 2.0)
    ph = min(h, max(1, int(round(math.sqrt(area * aspect)))))
    pw = min(w, max(1, int(round(math.sqrt(area / aspect)))))
    top = int(rng.integers(0, h - ph + 1))
    left = int(rng.integers(0, w - pw + 1))
    mask = np.zeros((h, w), dtype=bool)
    mask[top : top + ph, left : left + pw] = True
    return mask


_SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64)
_SOBEL_Y = _SOBEL_X.T


def _otsu_threshold(gray: np.ndarray) -> float:
    hist, edges = np.histogram(gray, bins=256, range=(0.0, 255.0))
    total = gray.size
    probs = hist / total
    centres = (edges[:-1] + edges[1:]) / 2
    w0 = np.cumsum(probs)
    w1 = 1.0 - w0
    mu = np.cumsum(probs * centres)
    mu_t = mu[-1]
    with np.errstate(invalid="ignore", divide="ignore"):
        between = (mu_t * w0 - mu) ** 2 / (w0 * w1)
    between[~np.isfinite(between)] = -1.0
    return float(centres[int(np.argmax(between))])


def sobel_region(img: Image) -> np.ndarray:
    """Mask of the binarised region whose boundary carries the strongest
    summed Sobel gradient magnitude.

    Grayscale conversion, 3x3 Sobel magnitude, Otsu binarisation of the
    grayscale image, then 4-connected components of both binary phases; the
    component whose boundary pixels (4-adjacent to the other phase) sum to
    the largest gradient magnitude wins. A constant image has zero gradient
    everywhere and falls back to the full mask.
    """
    gray = _grayscale(img)
    gx = ndimage.convolve(gray, _SOBEL_X, mode="nearest")
    gy = ndimage.convolve(gray, _SOBEL_Y, mode="nearest")
    magnitude = np.hypot(gx, gy)
    if not magnitude.any():
        return np.ones_like(gray, dtype=bool)
    binary = gray > _otsu_threshold(gray)
    structure = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])
    best_mask = None
    best_score = -1.0
    for phase in (binary, ~binary):
        labels, k = ndimage.label(phase, structure=structure)
        for comp in range(1, k + 1):
            comp_mask = labels == comp
            interior = ndimage.binary_erosion(comp_mask, structure=structure, border_value=1)
            boundary = comp_mask & ~interior
            score = float(magnitude[boundary].sum())
            if score > best_score:
                best_score = score
                best_mask = comp_mask
    return best_mask


# ---------------------------------------------------------------------------
# Composition
# ---------------------------------------------------------------------------


def randomise_channels(
    img: Image,
    sel: PixelSelection,
    mode: str,
    rng: np.random.Generator,
) -> tuple[Image, ChannelMap, np.ndarray]:
    """Draw one channel map and one pixel mask, then apply the map.

    Operates on byte-range images (before normalisation) so channel values
    stay directly comparable with the original's. Returns the augmented
    image together with the drawn map and mask.
    """
    if img.range is not ValueRange.BYTE255:
        raise ImageError("channel randomisation applies to byte-range images")
    cmap = draw_channel_map(mode, rng)
    mask = select_pixels(img, sel, rng)
    return apply_channel_map(img, cmap, mask), cmap, mask
