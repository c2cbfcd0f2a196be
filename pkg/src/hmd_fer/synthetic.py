"""Procedural cartoon faces for demos and tests when FER2013 is not at hand.

Each emotion gets its own brow slant/height, eye opening and mouth curve, so
a classifier can learn them and masking the eye band removes part of the
signal (as it does on real faces). These images are not a substitute for the
real corpus when measuring accuracy.
"""

from __future__ import annotations

import numpy as np

from .dataset import IMAGE_SIDE, NUM_CLASSES, LabeledExample

# brow tilt, brow lift, eye height, mouth curve, mouth opening
_STYLE = {
    0: (0.35, 0.0, 1.0, -0.6, 0.3),   # angry
    1: (0.2, -0.5, 0.6, -0.9, 0.1),   # disgust
    2: (-0.3, 1.5, 2.0, -0.2, 1.2),   # fear
    3: (0.0, 0.5, 1.0, 1.0, 0.6),     # happy
    4: (-0.35, 0.3, 0.8, -1.0, 0.0),  # sad
    5: (0.0, 2.0, 2.2, 0.0, 2.5),     # surprise
    6: (0.0, 0.5, 1.2, 0.0, 0.0),     # neutral
}


def render_face(label: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:IMAGE_SIDE, 0:IMAGE_SIDE].astype(np.float64)
    cx = 23.5 + rng.normal(0, 1.0)
    cy = 24.0 + rng.normal(0, 1.0)
    tilt, lift, eye_h, curve, opening = _STYLE[int(label)]
    s = 1.0 + rng.normal(0, 0.05)

    img = np.full((IMAGE_SIDE, IMAGE_SIDE), 40.0 + rng.uniform(0, 30))
    face = ((xx - cx) / (17 * s)) ** 2 + ((yy - cy) / (21 * s)) ** 2 <= 1
    img[face] = 150 + rng.uniform(-20, 30)

    dark = 30.0
    for side in (-1, 1):
        ex = cx + side * 8 * s
        ey = cy - 4 * s
        eye = ((xx - ex) / 3.2) ** 2 + ((yy - ey) / max(eye_h, 0.3)) ** 2 <= 1
        img[eye] = dark
        # brow: short line whose inner end drops when tilt > 0
        for t in np.linspace(-4, 4, 17):
            bx = ex + t
            by = ey - 5 - lift + tilt * t * side
            r, c = int(round(by)), int(round(bx))
            if 0 <= r < IMAGE_SIDE and 0 <= c < IMAGE_SIDE:
                img[r, c] = dark
                if r + 1 < IMAGE_SIDE:
                    img[r + 1, c] = dark

    my = cy + 10 * s
    for t in np.linspace(-7, 7, 57):
        x = cx + t * s
        y = my - curve * (1 - (t / 7) ** 2) * 3
        for dy in np.arange(0, opening + 1.0, 0.5):
            r, c = int(round(y + dy)), int(round(x))
            if 0 <= r < IMAGE_SIDE and 0 <= c < IMAGE_SIDE:
                img[r, c] = dark

    img += rng.normal(0, 12, img.shape)
    return np.clip(np.round(img), 0, 255).astype(np.uint8)


def synthetic_corpus(per_class: int, seed: int = 0, split: str = "train") -> list[LabeledExample]:
    """``per_class`` faces of each of the 7 emotions, label-interleaved."""
    rng = np.random.default_rng(seed)
    return [LabeledExample(render_face(k, rng), k, split)
            for _ in range(per_class) for k in range(NUM_CLASSES)]


def synthetic_fer_corpus(seed: int = 0, sizes=(28709, 3589, 3589)) -> list[LabeledExample]:
    """Noise images in FER2013's shape and split sizes (35,887 rows by default).

    Cheap enough for throughput checks on the full corpus size; the labels are
    drawn at random and carry no visual signal.
    """
    rng = np.random.default_rng(seed)
    out = []
    for split, n in zip(("train", "val", "test"), sizes):
        imgs = rng.integers(0, 256, size=(n, IMAGE_SIDE, IMAGE_SIDE), dtype=np.uint8)
        labels = rng.integers(0, NUM_CLASSES, size=n)
        out.extend(LabeledExample(im, int(k), split) for im, k in zip(imgs, labels))
    return out
