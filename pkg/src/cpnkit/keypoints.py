"""Keypoint conventions shared across the toolkit.

Seventeen named joints in the standard COCO order, their left/right
pairing under horizontal flips, the per-joint falloff constants used by
the OKS similarity kernel, and the annotated person instance record.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

KEYPOINT_NAMES = [
    "nose",
    "left_eye", "right_eye",
    "left_ear", "right_ear",
    "left_shoulder", "right_shoulder",
    "left_elbow", "right_elbow",
    "left_wrist", "right_wrist",
    "left_hip", "right_hip",
    "left_knee", "right_knee",
    "left_ankle", "right_ankle",
]

NUM_KEYPOINTS = len(KEYPOINT_NAMES)

LEFT_RIGHT_PAIRS = [(1, 2), (3, 4), (5, 6), (7, 8), (9, 10), (11, 12), (13, 14), (15, 16)]

# channel permutation applied when an image is mirrored horizontally
FLIP_ORDER = np.arange(NUM_KEYPOINTS)
for _l, _r in LEFT_RIGHT_PAIRS:
    FLIP_ORDER[_l], FLIP_ORDER[_r] = _r, _l
FLIP_ORDER.setflags(write=False)

# published per-joint OKS sigmas (nose 0.026 ... ankles 0.089); the
# similarity kernel uses kappa_i = 2 * sigma_i
OKS_SIGMAS = np.array([
    0.026, 0.025, 0.025, 0.035, 0.035,
    0.079, 0.079, 0.072, 0.072, 0.062, 0.062,
    0.107, 0.107, 0.087, 0.087, 0.089, 0.089,
])
OKS_SIGMAS.setflags(write=False)
OKS_KAPPAS = 2.0 * OKS_SIGMAS
OKS_KAPPAS.setflags(write=False)

# limb segments between joint indices, used for rendering and synthesis
SKELETON_EDGES = [
    (5, 7), (7, 9),       # left arm
    (6, 8), (8, 10),      # right arm
    (11, 13), (13, 15),   # left leg
    (12, 14), (14, 16),   # right leg
    (5, 6), (11, 12),     # shoulder and hip bars
    (5, 11), (6, 12),     # torso sides
]

# visibility flags
V_UNLABELED = 0
V_OCCLUDED = 1
V_VISIBLE = 2


@dataclass
class PersonInstance:
    """One annotated or predicted person: 17 keypoints with visibility flags.

    ``keypoints`` is (17, 2) float64 in image pixels; ``vis`` is (17,) int
    with 0 = unlabeled (no position semantics), 1 = occluded, 2 = visible.
    """

    keypoints: np.ndarray
    vis: np.ndarray
    bbox: np.ndarray = field(default_factory=lambda: np.zeros(4))  # x, y, w, h
    area: float = 0.0
    image_id: int = 0
    instance_id: int | None = None

    def __post_init__(self):
        self.keypoints = np.asarray(self.keypoints, dtype=np.float64).reshape(NUM_KEYPOINTS, 2)
        self.vis = np.asarray(self.vis, dtype=np.int64).reshape(NUM_KEYPOINTS)
        self.bbox = np.asarray(self.bbox, dtype=np.float64).reshape(4)

    def labeled_mask(self) -> np.ndarray:
        return self.vis > 0

    def num_labeled(self) -> int:
        return int(np.count_nonzero(self.vis > 0))

    def copy(self) -> "PersonInstance":
        return PersonInstance(
            keypoints=self.keypoints.copy(),
            vis=self.vis.copy(),
            bbox=self.bbox.copy(),
            area=self.area,
            image_id=self.image_id,
            instance_id=self.instance_id,
        )

    def to_coco_keypoints(self) -> list[float]:
        """Flatten to the [x1, y1, v1, ..., x17, y17, v17] wire order."""
        flat = []
        for i in range(NUM_KEYPOINTS):
            flat.extend([float(self.keypoints[i, 0]), float(self.keypoints[i, 1]), int(self.vis[i])])
        return flat

    @classmethod
    def from_coco_keypoints(cls, flat, **kw) -> "PersonInstance":
        arr = np.asarray(flat, dtype=np.float64).reshape(NUM_KEYPOINTS, 3)
        return cls(keypoints=arr[:, :2], vis=arr[:, 2].astype(np.int64), **kw)
