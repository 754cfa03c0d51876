"""Task-adaptive virtual views for keyframe manipulation policies.

Fixed RGB-D cameras are fused into a point cloud, a chat model picks one
virtual viewpoint per task, and an attention policy predicts the next
keyframe action as a heatmap in that view plus depth, rotation and gripper
bits, optionally refined in a zoomed second pass.
"""

__version__ = "0.1.0"
