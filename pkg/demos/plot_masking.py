"""
Blacking out the eyes and eyebrows
==================================

A headset hides the upper half of the face. We imitate that on 48x48 face
crops by painting a black band over rows 12-27, then check that nothing
outside the band moved.
"""

import numpy as np

from hmd_fer.occlusion import MaskSpec, apply_mask, default_band_mask, mask_dataset
from hmd_fer.synthetic import synthetic_corpus

# a handful of cartoon faces, one per emotion
faces = synthetic_corpus(1, seed=0)


def show(img, step=2):
    # coarse ASCII rendering, dark pixels drawn heavy
    ramp = " .:-=+*#%@"[::-1]
    for row in img[::step]:
        print("".join(ramp[int(v) * (len(ramp) - 1) // 255] for v in row[::step]))


print("happy face, unmasked")
show(faces[3].image)

###############################################################################
# The default band covers a third of the image.

band = default_band_mask()
print("band", band.rectangles, "area", band.area(), "of", 48 * 48)

masked = apply_mask(faces[3].image, band)
print("\nhappy face, masked")
show(masked)

###############################################################################
# Pixels inside the band are 0, everything else is bit-identical, and masking
# twice changes nothing.

inside = band.boolean()
print("inside all zero:", not masked[inside].any())
print("outside untouched:", np.array_equal(masked[~inside], faces[3].image[~inside]))
print("idempotent:", np.array_equal(apply_mask(masked, band), masked))

###############################################################################
# Per-image rectangles from an external detector are also supported. Images
# the detector missed can fall back to the band or be dropped.

detector = {0: MaskSpec(((14, 22, 6, 42),)), 3: MaskSpec(((13, 21, 8, 40),))}
kept, report = mask_dataset(faces, detector, policy="skip")
print(report, "->", [int(e.label) for e in kept])
kept, report = mask_dataset(faces, detector, policy="default")
print(report)
