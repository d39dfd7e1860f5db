"""
=========================
Metrics and the sweeps
=========================

Rotated BEV IoU and all-point interpolated AP score the detections; the
sweeps vary one knob at a time and write one CSV row per agent.
"""

# %%
# IoU and AP by hand
# ------------------

import math

from collabcam.metrics import average_precision, rotated_iou

square = (0.0, 0.0, 1.0, 1.0, 0.0)
print("square vs 45 degrees:", round(rotated_iou(square, (0.0, 0.0, 1.0, 1.0, math.pi / 4)), 4))
dets = [(square, 0.9), ((5.0, 5.0, 1.0, 1.0, 0.0), 0.8)]
print("AP with one hit and one false alarm:", average_precision(dets, [square], 0.5).ap)

# %%
# A small agent-count sweep
# -------------------------

from collabcam.harness import RunConfig, rows_to_csv, sweep_agents

sweep = sweep_agents(RunConfig(repetitions=3), [1, 2, 4])
for entry in sweep.summary(("ap50",)):
    print(entry["agents"], "agents: AP50", round(entry["ap50_mean"], 3))
print(rows_to_csv(sweep.rows).splitlines()[0])
