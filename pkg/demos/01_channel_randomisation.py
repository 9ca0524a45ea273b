"""Walk through the channel-randomisation augmentations.

Renders one synthetic fruit image, then applies every draw mode and every
pixel-selection variant to it, writing the results as PPM files next to
this script so they can be opened in any viewer.
"""

from pathlib import Path

import numpy as np

from chanomaly.augment import (
    PixelSelection,
    enumerate_maps,
    randomise_channels,
)
from chanomaly.datasets import SynthConfig, synth_image
from chanomaly.imagecore import encode_ppm, resize

OUT = Path(__file__).parent / "out" / "augment"


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(0)
    img, _ = synth_image("Ripe", SynthConfig(side=32), rng)
    img = resize(img, 128)  # easier to inspect by eye
    (OUT / "original.ppm").write_bytes(encode_ppm(img))

    print("Support sizes per draw mode:")
    for mode in ("rand", "perm", "split"):
        maps = enumerate_maps(mode)
        print(f"  {mode:5s}: {len(maps):2d} maps, e.g. {[m.name for m in maps[:5]]}")

    print("\nOne draw per mode, applied to every pixel:")
    for mode in ("rand", "perm", "split"):
        out, cmap, mask = randomise_channels(img, PixelSelection("all"), mode, rng)
        path = OUT / f"mode_{mode}_{cmap.name}.ppm"
        path.write_bytes(encode_ppm(out))
        print(f"  {mode:5s}: map {cmap.name} -> {path.name}")

    print("\nPixel-selection variants (mode 'rand'):")
    for text in ("all", "patch", "sobel", "th0.5", "sp0.5"):
        sel = PixelSelection.parse(text)
        out, cmap, mask = randomise_channels(img, sel, "rand", rng)
        frac = mask.mean()
        path = OUT / f"selection_{text.replace('.', '_')}.ppm"
        path.write_bytes(encode_ppm(out))
        print(f"  {text:6s}: map {cmap.name}, {frac:5.1%} of pixels -> {path.name}")

    print(f"\nWrote previews under {OUT}")


if __name__ == "__main__":
    main()
