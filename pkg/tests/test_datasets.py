import numpy as np
import pytest

from chanomaly.datasets import (
    DatasetManifest,
    ManifestError,
    SeedPlan,
    SynthConfig,
    derive_seed,
    load_images,
    load_manifest,
    synth_config_from_toml,
    synth_generate,
    synth_image,
    _in_band,
)
from chanomaly.imagecore import decode, encode_ppm, rgb_to_hsv


def write_pixels(path, value=128):
    from chanomaly.imagecore import Image

    data = np.full((4, 4, 3), value, np.uint8)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_ppm(Image(data)))


def make_tree(root, ripe=10, unripe=10, anomalous=5):
    for i in range(ripe):
        write_pixels(root / "Ripe" / f"r{i:03d}.ppm", 200)
    for i in range(unripe):
        write_pixels(root / "Unripe" / f"u{i:03d}.ppm", 80)
    for i in range(anomalous):
        write_pixels(root / "Anomalous" / f"a{i:03d}.ppm", 10)


class TestSeeding:
    def test_deterministic(self):
        assert derive_seed(7, "epoch", 3) == derive_seed(7, "epoch", 3)

    def test_distinct_streams(self):
        seen = {derive_seed(0, "a"), derive_seed(0, "b"), derive_seed(0, 0),
                derive_seed(1, "a"), derive_seed(0, "a", 0)}
        assert len(seen) == 5

    def test_order_matters(self):
        assert derive_seed(0, "x", "y") != derive_seed(0, "y", "x")

    def test_streams_look_independent(self):
        plan = SeedPlan(42)
        a = plan.rng("epoch", 1).random(2000)
        b = plan.rng("epoch", 2).random(2000)
        assert abs(np.corrcoef(a, b)[0, 1]) < 0.08

    def test_plan_reproducible(self):
        assert SeedPlan(5).rng("init").random() == SeedPlan(5).rng("init").random()


class TestManifest:
    def test_hash_split_partitions_everything(self, tmp_path):
        make_tree(tmp_path, ripe=30, unripe=30)
        m = load_manifest(tmp_path)
        all_normal = set(m.train) | set(m.val) | set(m.test_normal)
        assert len(all_normal) == 60
        assert len(m.train) + len(m.val) + len(m.test_normal) == 60
        assert len(m.test_anomalous) == 5
        assert m.normal_categories == ("Ripe", "Unripe")

    def test_hash_split_stable_under_additions(self, tmp_path):
        make_tree(tmp_path, ripe=20, unripe=20)
        before = load_manifest(tmp_path)
        assignment = {}
        for split in ("train", "val", "test_normal"):
            for p in getattr(before, split):
                assignment[p] = split
        for i in range(20, 30):
            write_pixels(tmp_path / "Ripe" / f"r{i:03d}.ppm")
        after = load_manifest(tmp_path)
        for split in ("train", "val", "test_normal"):
            for p in getattr(after, split):
                if p in assignment:
                    assert assignment[p] == split, p

    def test_split_files_respected(self, tmp_path):
        make_tree(tmp_path, ripe=4, unripe=4)
        splits = tmp_path / "splits"
        splits.mkdir()
        (splits / "train.txt").write_text("Ripe/r000.ppm\nUnripe/u000.ppm\n")
        (splits / "val.txt").write_text("Ripe/r001.ppm\n")
        (splits / "test.txt").write_text("Unripe/u001.ppm\n")
        m = load_manifest(tmp_path)
        assert m.train == ("Ripe/r000.ppm", "Unripe/u000.ppm")
        assert m.val == ("Ripe/r001.ppm",)
        assert m.test_normal == ("Unripe/u001.ppm",)

    def test_anomalous_in_train_split_rejected(self, tmp_path):
        make_tree(tmp_path, ripe=2, unripe=2)
        splits = tmp_path / "splits"
        splits.mkdir()
        (splits / "train.txt").write_text("Anomalous/a000.ppm\n")
        (splits / "val.txt").write_text("")
        (splits / "test.txt").write_text("")
        with pytest.raises(ManifestError, match="anomalous"):
            load_manifest(tmp_path)

    def test_empty_category_rejected(self, tmp_path):
        make_tree(tmp_path, ripe=2, unripe=2)
        (tmp_path / "Empty").mkdir()
        with pytest.raises(ManifestError, match="no images"):
            load_manifest(tmp_path)

    def test_missing_root_rejected(self, tmp_path):
        with pytest.raises(ManifestError):
            load_manifest(tmp_path / "nope")

    def test_load_images_skips_unreadable(self, tmp_path):
        make_tree(tmp_path, ripe=3, unripe=2)
        (tmp_path / "Ripe" / "r000.ppm").write_bytes(b"P6 garbage")
        m = load_manifest(tmp_path)
        with pytest.warns(UserWarning, match="skipping"):
            loaded = load_images(m, ["Ripe/r000.ppm", "Ripe/r001.ppm"])
        assert [rel for rel, _ in loaded] == ["Ripe/r001.ppm"]


class TestSynth:
    CFG = SynthConfig(side=32)

    def test_normal_blob_hue_stays_in_band(self):
        for cat in ("Ripe", "Unripe"):
            band = self.CFG.hue_band(cat)
            for i in range(10):
                rng = np.random.default_rng(derive_seed(0, cat, i))
                img, blob = synth_image(cat, self.CFG, rng)
                hue = rgb_to_hsv(img.data.astype(np.float64) / 255.0)[..., 0]
                frac = _in_band(hue[blob], (band[0], band[1] + 0.02)).mean()
                assert frac >= 0.9, (cat, i, frac)

    def test_anomalous_blob_leaves_both_bands(self):
        bands = (self.CFG.ripe_hue, self.CFG.unripe_hue)
        for i in range(10):
            rng = np.random.default_rng(derive_seed(1, "Anomalous", i))
            img, blob = synth_image("Anomalous", self.CFG, rng)
            hue = rgb_to_hsv(img.data.astype(np.float64) / 255.0)[..., 0]
            off = np.ones(blob.sum(), bool)
            for band in bands:
                off &= ~_in_band(hue[blob], band)
            assert off.mean() >= 0.15, (i, off.mean())

    def test_generate_is_byte_identical_under_fixed_seed(self, tmp_path):
        cfg = SynthConfig(side=16, n_train=6, n_val=2, n_test_normal=2, n_anomalous=2, seed=3)
        a = synth_generate(cfg, tmp_path / "a")
        b = synth_generate(cfg, tmp_path / "b")
        assert a.counts() == b.counts()
        for rel in a.train + a.val + a.test_normal + a.test_anomalous:
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()

    def test_generate_counts_and_decodability(self, tmp_path):
        cfg = SynthConfig(side=16, n_train=8, n_val=4, n_test_normal=4, n_anomalous=3, seed=1)
        m = synth_generate(cfg, tmp_path / "d")
        assert m.counts() == {
            "train": 8, "val": 4, "test_normal": 4, "test_anomalous": 3,
        }
        for rel, img in load_images(m, m.train[:2] + m.test_anomalous[:1]):
            assert img.data.shape == (16, 16, 3)

    def test_config_from_toml(self, tmp_path):
        path = tmp_path / "synth.toml"
        path.write_text('side = 16\nn_train = 10\nripe_hue = [0.98, 0.02]\n')
        cfg = synth_config_from_toml(path)
        assert cfg.side == 16 and cfg.n_train == 10
        assert cfg.ripe_hue == (0.98, 0.02)

    def test_config_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "synth.toml"
        path.write_text("sides = 16\n")
        with pytest.raises(ManifestError, match="unknown"):
            synth_config_from_toml(path)
