"""Dataset ingestion, deterministic seeding and a synthetic colour-anomaly
generator for desk-scale verification.

Directory convention: ``root/<Category>/<image files>`` with an anomalous
category that only ever appears in the test split, plus an optional
``splits/{train,val,test}.txt`` of relative paths for the normal images.
When split files are absent, a seeded hash of each file path assigns it to
train/val/test (default 70/10/20), so adding files never reshuffles
existing assignments.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .imagecore import DecodeError, Image, ImageError, ValueRange, decode, encode_ppm
from .imagecore import hsv_to_rgb

__all__ = [
    "SeedPlan",
    "derive_seed",
    "DatasetManifest",
    "ManifestError",
    "load_manifest",
    "load_images",
    "SynthConfig",
    "synth_generate",
]

_MASK64 = (1 << 64) - 1
_IMAGE_SUFFIXES = (".ppm", ".png")


# ---------------------------------------------------------------------------
# Seeding
# ---------------------------------------------------------------------------


def _splitmix64(z: int) -> int:
    z = (z + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def _fnv1a64(text: str) -> int:
    h = 0xCBF29CE484222325
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * 0x100000001B3) & _MASK64
    return h


def derive_seed(master: int, *ids) -> int:
    """Collision-resistant 64-bit mix of a master seed with stream ids.

    Ids may be ints or strings; identical inputs always yield identical
    outputs, and distinct id tuples yield independent streams.
    """
    z = master & _MASK64
    for i in ids:
        v = _fnv1a64(i) if isinstance(i, str) else int(i) & _MASK64
        z = _splitmix64(z ^ v)
    return _splitmix64(z)


@dataclass(frozen=True)
class SeedPlan:
    """Derives per-(run, epoch, batch, worker) RNG streams from one master seed."""

    master: int

    def derive(self, *ids) -> int:
        return derive_seed(self.master, *ids)

    def rng(self, *ids) -> np.random.Generator:
        return np.random.default_rng(self.derive(*ids))


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------


class ManifestError(RuntimeError):
    pass


@dataclass(frozen=True)
class DatasetManifest:
    root: Path
    normal_categories: tuple[str, ...]
    anomalous_category: str
    train: tuple[str, ...]
    val: tuple[str, ...]
    test_normal: tuple[str, ...]
    test_anomalous: tuple[str, ...]

    def counts(self) -> dict[str, int]:
        return {
            "train": len(self.train),
            "val": len(self.val),
            "test_normal": len(self.test_normal),
            "test_anomalous": len(self.test_anomalous),
        }


def _list_category(root: Path, category: str) -> list[str]:
    cat_dir = root / category
    if not cat_dir.is_dir():
        raise ManifestError(f"category directory missing: {cat_dir}")
    files = sorted(
        str(p.relative_to(root))
        for p in cat_dir.iterdir()
        if p.suffix.lower() in _IMAGE_SUFFIXES
    )
    if not files:
        raise ManifestError(f"category {category!r} contains no images")
    return files


def load_manifest(
    root,
    normal_categories: tuple[str, ...] | None = None,
    anomalous_category: str = "Anomalous",
    fractions: tuple[float, float, float] = (0.7, 0.1, 0.2),
    seed: int = 0,
) -> DatasetManifest:
    """Build a manifest from the directory convention described above."""
    root = Path(root)
    if not root.is_dir():
        raise ManifestError(f"dataset root missing: {root}")
    if normal_categories is None:
        normal_categories = tuple(
            sorted(
                d.name
                for d in root.iterdir()
                if d.is_dir() and d.name != anomalous_category and d.name != "splits"
            )
        )
    if not normal_categories:
        raise ManifestError("no normal categories found")
    normal_files = []
    for cat in normal_categories:
        normal_files.extend(_list_category(root, cat))
    anomalous_files = tuple(_list_category(root, anomalous_category))

    splits_dir = root / "splits"
    if (splits_dir / "train.txt").exists():
        listed = {}
        for split in ("train", "val", "test"):
            path = splits_dir / f"{split}.txt"
            entries = [ln.strip() for ln in path.read_text().splitlines() if ln.strip()]
            listed[split] = sorted(entries)
        for split in ("train", "val"):
            bad = [p for p in listed[split] if p.split("/")[0] == anomalous_category]
            if bad:
                raise ManifestError(
                    f"anomalous images listed in {split} split: {bad[:3]}"
                )
        normal_set = set(normal_files)
        train = tuple(p for p in listed["train"] if p in normal_set)
        val = tuple(p for p in listed["val"] if p in normal_set)
        test_normal = tuple(
            p for p in listed["test"] if p in normal_set
        )
    else:
        # Hash-based assignment: stable under file additions by construction.
        if not math.isclose(sum(fractions), 1.0, abs_tol=1e-9):
            raise ManifestError(f"split fractions must sum to 1, got {fractions}")
        train, val, test_normal = [], [], []
        for p in sorted(normal_files):
            u = derive_seed(seed, "split", p) / 2.0**64
            if u < fractions[0]:
                train.append(p)
            elif u < fractions[0] + fractions[1]:
                val.append(p)
            else:
                test_normal.append(p)
        train, val, test_normal = tuple(train), tuple(val), tuple(test_normal)

    sets = [set(train), set(val), set(test_normal)]
    for i in range(3):
        for j in range(i + 1, 3):
            overlap = sets[i] & sets[j]
            if overlap:
                raise ManifestError(f"splits overlap: {sorted(overlap)[:3]}")
    return DatasetManifest(
        root=root,
        normal_categories=tuple(normal_categories),
        anomalous_category=anomalous_category,
        train=train,
        val=val,
        test_normal=test_normal,
        test_anomalous=anomalous_files,
    )


def load_images(manifest: DatasetManifest, paths) -> list[tuple[str, Image]]:
    """Decode the listed images; unreadable files are skipped with a warning."""
    out = []
    for rel in paths:
        full = manifest.root / rel
        try:
            out.append((rel, decode(full.read_bytes())))
        except (OSError, DecodeError, ImageError) as exc:
            warnings.warn(f"skipping unreadable image {full}: {exc}")
    return out


# ---------------------------------------------------------------------------
# Synthetic colour-anomaly generator
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SynthConfig:
    """Desk-scale fruit-proxy dataset: smooth elliptical blobs whose hue sits
    in one of two narrow class bands; anomalies reuse normal shapes but carry
    mottled off-band patches. Colour-anomalous, shape-typical by design."""

    out_dir: str = "synth-data"
    side: int = 32
    n_train: int = 400
    n_val: int = 100
    n_test_normal: int = 100
    n_anomalous: int = 100
    seed: int = 0
    # Hue band centres/half-widths in turns: red-ish "ripe", green-ish "unripe".
    ripe_hue: tuple[float, float] = (0.99, 0.025)
    unripe_hue: tuple[float, float] = (0.30, 0.035)

    def hue_band(self, category: str) -> tuple[float, float]:
        return {"Ripe": self.ripe_hue, "Unripe": self.unripe_hue}[category]


def _in_band(hue: np.ndarray, band: tuple[float, float]) -> np.ndarray:
    centre, width = band
    d = np.abs((hue - centre + 0.5) % 1.0 - 0.5)
    return d <= width + 1e-9


def _blob_mask(side: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64)
    cy = side * rng.uniform(0.4, 0.6)
    cx = side * rng.uniform(0.4, 0.6)
    ry = side * rng.uniform(0.26, 0.4)
    rx = side * rng.uniform(0.26, 0.4)
    theta = rng.uniform(0, np.pi)
    dy, dx = yy - cy, xx - cx
    u = dy * np.cos(theta) + dx * np.sin(theta)
    v = -dy * np.sin(theta) + dx * np.cos(theta)
    wobble = 1.0 + 0.12 * np.sin(3 * np.arctan2(v, u) + rng.uniform(0, 2 * np.pi))
    return (u / ry) ** 2 + (v / rx) ** 2 <= wobble


def _background(side: int, rng: np.random.Generator) -> np.ndarray:
    # Textured earthy background with strong per-image brightness variation.
    hue = rng.uniform(0.07, 0.16) + rng.normal(0, 0.012, (side, side))
    sat = np.clip(rng.uniform(0.15, 0.5) + rng.normal(0, 0.06, (side, side)), 0, 1)
    val = np.clip(rng.uniform(0.25, 0.75) + rng.normal(0, 0.08, (side, side)), 0.05, 1)
    return np.stack([hue % 1.0, sat, val], axis=-1)


def _shade(side: int, rng: np.random.Generator) -> np.ndarray:
    # Smooth illumination ramp across the blob.
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64) / side
    gx, gy = rng.uniform(-0.35, 0.35, size=2)
    return np.clip(rng.uniform(0.45, 0.85) + gx * (xx - 0.5) + gy * (yy - 0.5), 0.15, 1.0)


def synth_image(
    category: str, cfg: SynthConfig, rng: np.random.Generator
) -> tuple[Image, np.ndarray]:
    """Render one image; returns it with the blob mask for verification.

    ``category`` is 'Ripe', 'Unripe' or 'Anomalous'; anomalies borrow a
    normal class's shape and base hue, then overwrite a mottled patch of the
    blob with hues outside both normal bands.
    """
    side = cfg.side
    base_class = category if category != "Anomalous" else ("Ripe", "Unripe")[rng.integers(2)]
    centre, width = cfg.hue_band(base_class)
    blob = _blob_mask(side, rng)
    hsv = _background(side, rng)
    hue = (centre + rng.uniform(-width, width, (side, side)) * 0.95) % 1.0
    sat = np.clip(rng.uniform(0.65, 0.95) + rng.normal(0, 0.05, (side, side)), 0.3, 1)
    val = np.clip(_shade(side, rng) + rng.normal(0, 0.05, (side, side)), 0.1, 1)
    hsv[blob] = np.stack([hue, sat, val], axis=-1)[blob]
    if category == "Anomalous":
        patch = _anomalous_patch(blob, rng)
        bands = (cfg.ripe_hue, cfg.unripe_hue)
        odd_hues = _off_band_hues(patch.sum(), bands, rng)
        hsv[..., 0][patch] = odd_hues
        # Mottle: desaturate/darken a speckled subset for a two-tone look.
        speckle = patch & (rng.random((side, side)) < 0.4)
        hsv[..., 1][speckle] *= rng.uniform(0.4, 0.8)
        hsv[..., 2][speckle] *= rng.uniform(0.5, 0.9)
    rgb = hsv_to_rgb(hsv)
    data = np.clip(np.floor(rgb * 255.0 + 0.5), 0, 255).astype(np.uint8)
    return Image(data, ValueRange.BYTE255), blob


def _anomalous_patch(blob: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    # A blotch covering roughly a quarter to a half of the blob.
    side = blob.shape[0]
    ys, xs = np.nonzero(blob)
    idx = rng.integers(len(ys))
    cy, cx = ys[idx], xs[idx]
    yy, xx = np.mgrid[0:side, 0:side]
    target = rng.uniform(0.25, 0.55) * blob.sum()
    radius = math.sqrt(target / math.pi) * rng.uniform(0.9, 1.2)
    stretch = rng.uniform(0.6, 1.6)
    dist = np.sqrt(((yy - cy) * stretch) ** 2 + ((xx - cx) / stretch) ** 2)
    patch = blob & (dist <= radius)
    if patch.sum() < 0.18 * blob.sum():  # blotch fell on the blob's edge; grow it
        patch = blob & (dist <= radius * 1.8)
    return patch


def _off_band_hues(n, bands, rng: np.random.Generator) -> np.ndarray:
    # Two-tone mottling from hues safely outside both normal bands.
    candidates = []
    for _ in range(2):
        while True:
            h = rng.uniform(0, 1)
            if not any(_in_band(np.array([h]), (c, w + 0.06))[0] for c, w in bands):
                candidates.append(h)
                break
    pick = rng.random(n) < 0.5
    jitter = rng.normal(0, 0.01, n)
    return (np.where(pick, candidates[0], candidates[1]) + jitter) % 1.0


def synth_generate(cfg: SynthConfig, out_dir=None) -> DatasetManifest:
    """Render the dataset to disk (PPM files plus split listings)."""
    root = Path(out_dir if out_dir is not None else cfg.out_dir)
    plan = SeedPlan(cfg.seed)
    for cat in ("Ripe", "Unripe", "Anomalous"):
        (root / cat).mkdir(parents=True, exist_ok=True)
    (root / "splits").mkdir(exist_ok=True)

    splits = {"train": [], "val": [], "test": []}
    counters = {"Ripe": 0, "Unripe": 0}

    def emit_normal(split: str, count: int):
        for i in range(count):
            cat = ("Ripe", "Unripe")[i % 2]
            idx = counters[cat]
            counters[cat] += 1
            img, _ = synth_image(cat, cfg, plan.rng(cat, idx))
            rel = f"{cat}/{cat.lower()}_{idx:04d}.ppm"
            (root / rel).write_bytes(encode_ppm(img))
            splits[split].append(rel)

    emit_normal("train", cfg.n_train)
    emit_normal("val", cfg.n_val)
    emit_normal("test", cfg.n_test_normal)
    for i in range(cfg.n_anomalous):
        img, _ = synth_image("Anomalous", cfg, plan.rng("Anomalous", i))
        rel = f"Anomalous/anomalous_{i:04d}.ppm"
        (root / rel).write_bytes(encode_ppm(img))
    for split, entries in splits.items():
        (root / "splits" / f"{split}.txt").write_text("\n".join(sorted(entries)) + "\n")
    return load_manifest(root)


def synth_config_from_toml(path) -> SynthConfig:
    try:
        import tomllib
    except ModuleNotFoundError:  # Python 3.10
        import tomli as tomllib

    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    known = SynthConfig.__dataclass_fields__
    unknown = set(raw) - set(known)
    if unknown:
        raise ManifestError(f"unknown synthetic-config keys: {sorted(unknown)}")
    for key in ("ripe_hue", "unripe_hue"):
        if key in raw:
            raw[key] = tuple(raw[key])
    return SynthConfig(**raw)
