"""
Two-stage training: plain faces, then masked faces
==================================================

Stage 1 trains the mini VGG on unmasked faces. Stage 2 fine-tunes that
checkpoint on masked faces. Both are evaluated on held-out faces with and
without the band. Synthetic faces stand in for FER2013 so this runs in a few
minutes on one CPU; pass the real corpus to the ``hmd-fer`` CLI for the
actual experiment.
"""

import logging
import tempfile
from pathlib import Path

from hmd_fer.checkpoint import save_checkpoint
from hmd_fer.occlusion import default_band_mask, mask_dataset
from hmd_fer.synthetic import synthetic_corpus
from hmd_fer.training import TrainConfig, evaluate, train

logging.basicConfig(level=logging.INFO, format="%(message)s")

train_set = synthetic_corpus(12, seed=1)
held_out = synthetic_corpus(6, seed=9, split="test")
band = default_band_mask()

###############################################################################
# Stage 1. The history has one row per epoch.

stage1, hist1 = train(TrainConfig(epochs=25, batch_size=16, seed=0), train_set, held_out)
print("stage 1 best epoch", stage1.epoch)
for cond, mask in (("unmasked", None), ("masked", band)):
    print(f"  stage-1 model on {cond} held-out faces: {evaluate(stage1, held_out, mask).accuracy:.3f}")

###############################################################################
# Stage 2 starts from the stage-1 weights. Its epoch-0 row is the stage-1
# checkpoint's accuracy on masked data before any fine-tuning.

tmp = Path(tempfile.mkdtemp())
save_checkpoint(stage1, tmp / "stage1.ferc")
masked_train, _ = mask_dataset(train_set)
masked_held, _ = mask_dataset(held_out)
stage2, hist2 = train(TrainConfig(epochs=10, batch_size=16, seed=0,
                                  init_from=str(tmp / "stage1.ferc")),
                      masked_train, masked_held)
print("stage 2 epoch-0 val accuracy", hist2[0].val_accuracy)
print("stage 2 on masked held-out faces:", evaluate(stage2, held_out, band).accuracy)

###############################################################################
# Confusion matrix of the masked model (rows true, columns predicted).

rep = evaluate(stage2, held_out, band)
print(rep.confusion)
print(rep.summary())
