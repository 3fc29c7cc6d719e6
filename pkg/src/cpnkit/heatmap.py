"""Heatmap ground-truth encoding and the test-time decoding chain.

Targets are truncated Gaussians rendered at the sub-pixel crop location
of each keypoint and rescaled so the hottest cell is exactly 1.0.
Decoding finds the two highest cells per channel, steps a quarter cell
from the top cell toward the runner-up, and maps the result back
through the crop transform.

Heatmap cell (u, v) corresponds to crop pixel ((u + 0.5) * stride - 0.5,
(v + 0.5) * stride - 0.5). With this half-pixel alignment a horizontal
index reversal of the heatmap is exactly the index reversal of the
crop, so flip averaging introduces no coordinate bias.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from cpnkit.geometry import AffineMap
from cpnkit.keypoints import FLIP_ORDER, NUM_KEYPOINTS, PersonInstance

DEFAULT_TARGET_SIGMA = 2.0
DEFAULT_SMOOTH_SIGMA = 1.0


@dataclass
class HeatmapStack:
    """K score maps at 1/output_stride of the crop resolution."""

    maps: np.ndarray  # (K, H_o, W_o) float32
    output_stride: int

    def __post_init__(self):
        self.maps = np.asarray(self.maps, dtype=np.float32)
        if self.maps.ndim != 3:
            raise ValueError(f"heatmap stack must be (K, H, W), got {self.maps.shape}")

    @property
    def num_keypoints(self) -> int:
        return self.maps.shape[0]

    @classmethod
    def empty(cls, num_keypoints, crop_h, crop_w, output_stride):
        if crop_h % output_stride or crop_w % output_stride:
            raise ValueError(f"crop {crop_h}x{crop_w} is not divisible by stride {output_stride}")
        return cls(np.zeros((num_keypoints, crop_h // output_stride, crop_w // output_stride), np.float32),
                   output_stride)


@dataclass
class PoseResult:
    """Decoded instance: keypoints in original-image pixels with scores."""

    keypoints: np.ndarray        # (17, 2)
    keypoint_scores: np.ndarray  # (17,)
    instance_score: float
    image_id: int = 0

    def to_result_record(self, category_id: int = 1) -> dict:
        flat = []
        for i in range(len(self.keypoints)):
            flat.extend([float(self.keypoints[i, 0]), float(self.keypoints[i, 1]), 1])
        return {"image_id": int(self.image_id), "category_id": category_id,
                "keypoints": flat, "score": float(self.instance_score)}


def crop_to_heatmap(xy: np.ndarray, stride: int) -> np.ndarray:
    return (np.asarray(xy, dtype=np.float64) + 0.5) / stride - 0.5


def heatmap_to_crop(uv: np.ndarray, stride: int) -> np.ndarray:
    return (np.asarray(uv, dtype=np.float64) + 0.5) * stride - 0.5


def encode_target(instance: PersonInstance, crop_map: AffineMap, num_keypoints: int,
                  crop_h: int, crop_w: int, output_stride: int = 4,
                  sigma: float = DEFAULT_TARGET_SIGMA):
    """Render ground-truth score maps for one instance.

    Each labeled keypoint is warped into heatmap coordinates and drawn
    as a Gaussian bump (std ``sigma`` heatmap px, truncated at 3 sigma)
    rescaled so its hottest cell equals 1.0. Returns (stack, annotated)
    where ``annotated[k]`` is False for unlabeled keypoints and for
    keypoints whose bump center leaves the heatmap.
    """
    stack = HeatmapStack.empty(num_keypoints, crop_h, crop_w, output_stride)
    h_o, w_o = stack.maps.shape[1:]
    annotated = np.zeros(num_keypoints, dtype=bool)

    uv = crop_to_heatmap(crop_map.apply(instance.keypoints), output_stride)
    radius = 3.0 * sigma
    for k in range(num_keypoints):
        if instance.vis[k] <= 0:
            continue
        cx, cy = uv[k]
        if not (-0.5 <= cx <= w_o - 0.5 and -0.5 <= cy <= h_o - 0.5):
            continue
        x0 = max(0, int(np.ceil(cx - radius)))
        x1 = min(w_o - 1, int(np.floor(cx + radius)))
        y0 = max(0, int(np.ceil(cy - radius)))
        y1 = min(h_o - 1, int(np.floor(cy + radius)))
        if x1 < x0 or y1 < y0:
            continue
        xs = np.arange(x0, x1 + 1, dtype=np.float64)
        ys = np.arange(y0, y1 + 1, dtype=np.float64)
        d2 = (xs[None, :] - cx) ** 2 + (ys[:, None] - cy) ** 2
        bump = np.exp(-d2 / (2.0 * sigma * sigma))
        bump[d2 > radius * radius] = 0.0
        peak = bump.max()
        if peak <= 0:
            continue
        stack.maps[k, y0:y1 + 1, x0:x1 + 1] = (bump / peak).astype(np.float32)
        annotated[k] = True
    return stack, annotated


def gaussian_kernel_1d(sigma: float) -> np.ndarray:
    """Normalized truncated Gaussian taps with radius ceil(2 sigma)."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    radius = int(np.ceil(2.0 * sigma))
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(xs ** 2) / (2.0 * sigma * sigma))
    return k / k.sum()


def smooth(stack: HeatmapStack, sigma: float = DEFAULT_SMOOTH_SIGMA) -> HeatmapStack:
    """Per-channel convolution with a normalized truncated Gaussian
    (separable, zero padding outside); preserves total mass for signals
    supported away from the border."""
    k1 = gaussian_kernel_1d(sigma)
    radius = (len(k1) - 1) // 2
    maps = stack.maps.astype(np.float64)
    n, h, w = maps.shape

    padded = np.zeros((n, h + 2 * radius, w), dtype=np.float64)
    padded[:, radius:radius + h] = maps
    out_y = np.zeros_like(maps)
    for i, tap in enumerate(k1):
        out_y += tap * padded[:, i:i + h]

    padded = np.zeros((n, h, w + 2 * radius), dtype=np.float64)
    padded[:, :, radius:radius + w] = out_y
    out = np.zeros_like(maps)
    for i, tap in enumerate(k1):
        out += tap * padded[:, :, i:i + w]
    return HeatmapStack(out.astype(np.float32), stack.output_stride)


def flip_average(stack: HeatmapStack, flipped_stack: HeatmapStack) -> HeatmapStack:
    """Merge predictions from a crop and its horizontal mirror: reverse
    the mirrored stack's x axis, swap left/right channels, average."""
    if stack.maps.shape != flipped_stack.maps.shape:
        raise ValueError(f"stack shapes differ: {stack.maps.shape} vs {flipped_stack.maps.shape}")
    restored = flipped_stack.maps[FLIP_ORDER, :, ::-1]
    return HeatmapStack(0.5 * (stack.maps + restored), stack.output_stride)


def _top_two(channel: np.ndarray):
    flat = channel.reshape(-1)
    i1 = int(flat.argmax())
    v1 = float(flat[i1])
    work = flat.copy()
    work[i1] = -np.inf
    i2 = int(work.argmax())
    v2 = float(flat[i2])
    w = channel.shape[1]
    return np.array(divmod(i1, w)), v1, np.array(divmod(i2, w)), v2


def decode(stack: HeatmapStack, crop_map: AffineMap, box_score: float = 1.0,
           image_id: int = 0, quarter_offset: bool = True) -> PoseResult:
    """Locate each keypoint from its channel: argmax cell plus a quarter
    cell toward the second-highest cell, mapped back to original-image
    pixels through the inverse crop transform.

    The offset is suppressed when the top two cells tie (no unique max)
    or the runner-up is non-positive; argmax ties break toward the
    lowest row, then column. Per-keypoint score is the top cell value;
    the instance score is box_score times the mean keypoint score.
    """
    inv = crop_map.invert()
    k = stack.num_keypoints
    kpts = np.zeros((k, 2))
    scores = np.zeros(k)
    for c in range(k):
        p1, v1, p2, v2 = _top_two(stack.maps[c])
        pos = p1.astype(np.float64)
        if quarter_offset and 0.0 < v2 < v1:
            d = (p2 - p1).astype(np.float64)
            pos = pos + 0.25 * d / np.linalg.norm(d)
        crop_xy = heatmap_to_crop(pos[::-1], stack.output_stride)  # (row, col) -> (x, y)
        kpts[c] = inv.apply(crop_xy)
        scores[c] = v1
    return PoseResult(
        keypoints=kpts,
        keypoint_scores=scores,
        instance_score=float(box_score) * float(scores.mean()),
        image_id=image_id,
    )
