"""
=====================================
One agent: from pixels to detections
=====================================

Without any communication, an agent encodes its image, predicts a depth
distribution for every pixel, lifts both into voxels, collapses the height
axis into a bird's-eye-view map, and decodes boxes from it.
"""

# %%
# Run a single agent
# ------------------

from collabcam.harness import RunConfig, run_pipeline, scene_for
from collabcam.metrics import rotated_iou

config = RunConfig(n_agents=1, co_depth=False, co_fl=False)
scene = scene_for(config, rep=3)
result = run_pipeline(scene, config)
agent = result.agents[0]
print("depth distribution", agent.dist.shape, "voxel tensor", agent.voxels.features.shape)
print("BEV map", agent.bev.shape)

# %%
# Detections and their best match
# -------------------------------

for det in agent.detections[:5]:
    best = max(rotated_iou(det.box, gt) for gt in scene.boxes)
    print(f"score {det.score:.2f} at ({det.box.x:6.1f}, {det.box.y:6.1f}) best IoU {best:.2f}")

row = result.rows[0]
print("AP50", round(row.ap[0.5], 3), "depth accuracy", round(row.depth_acc_full, 3))
