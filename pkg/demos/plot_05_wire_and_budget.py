"""
================================
Wire frames and a byte budget
================================

Every message is serialized into a compact binary frame and the frame
lengths are what gets counted. Given a per-round budget, the thresholds are
calibrated so that the frames of that round fit.
"""

# %%
# Encode and decode a detection message
# -------------------------------------

import numpy as np

from collabcam import wire
from collabcam.cofl import pack_detection_message

rng = np.random.default_rng(0)
bev = rng.normal(size=(25, 25, 4))
conf = rng.random((25, 25))
msg = pack_detection_message(bev, conf, 0.95, sender=1, receiver=2)
frame = wire.encode_frame(msg)
print(len(msg), "cells ->", len(frame), "bytes; log2 volume", round(wire.comm_volume_log2(len(frame)), 3))
assert wire.decode_frame(frame) == msg

# %%
# Calibrate against budgets
# -------------------------

from collabcam.harness import RunConfig, sweep_bandwidth

config = RunConfig(n_agents=4, repetitions=3)
sweep = sweep_bandwidth(config, [0, 2**10, 2**14, float("inf")])
for entry in sweep.summary(("ap50", "log2_volume")):
    # a zero budget sends nothing, so its log volume is undefined (nan)
    print(f"budget {entry['budget']:>8}  AP50 {entry['ap50_mean']:.3f}  "
          f"log2 bytes {entry['log2_volume_mean']:.2f}")
