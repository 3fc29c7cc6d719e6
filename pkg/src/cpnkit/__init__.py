"""Desk-scale cascaded pyramid network toolkit: differentiable compute,
crop geometry, heatmap codec, CPN architecture, OHKM losses, box
suppression, OKS evaluation and an end-to-end synthetic pipeline."""

__version__ = "0.1.0"

from cpnkit.keypoints import PersonInstance, KEYPOINT_NAMES, NUM_KEYPOINTS

__all__ = ["PersonInstance", "KEYPOINT_NAMES", "NUM_KEYPOINTS", "__version__"]
