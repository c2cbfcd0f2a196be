"""
Checking hand-written gradients
===============================

Every layer in ``hmd_fer.nn`` has an explicit backward pass. Here we compare
each one against central finite differences in float64, then show that a
deliberately wrong backward pass is caught.
"""

import numpy as np

from hmd_fer.nn import gradcheck as gc

rng = np.random.default_rng(0)

###############################################################################
# One instance per op, with its tolerance.

for name, (check, tol) in gc.OP_CHECKS.items():
    print(check(rng, tol))

###############################################################################
# A conv -> batchnorm -> relu -> pool block checked end to end.

print(gc.check_mini_block(rng))

###############################################################################
# The whole network on a tiny 16x16 preset. Coordinates whose +/-eps nudge
# crosses a relu kink or flips a pooling winner are skipped and counted.

rep = gc.check_network(rng)
print(rep, "| kinks skipped:", rep.per_input["kinks_skipped"])

###############################################################################
# Negative control: flipping the sign of d(input) must fail.

print(gc.check_conv(rng, flip=True))
