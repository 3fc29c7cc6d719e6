"""Coordinate transforms between original image space and network crop space.

A crop transform is a 2x3 affine map M with crop = M @ [x, y, 1]^T. Boxes
are first extended to the target aspect ratio about their center, then
mapped corner-to-corner onto the crop rectangle, optionally composed
with augmentation (scale and rotation about the box center, horizontal
flip). Horizontal mirrors use x -> width - 1 - x, matching pixel index
reversal.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from cpnkit.keypoints import FLIP_ORDER, PersonInstance
from cpnkit.tensorcore import kernels

ROTATION_RANGE_DEG = (-45.0, 45.0)
SCALE_RANGE = (0.7, 1.35)

_MIN_DET = 1e-9


@dataclass(frozen=True)
class CropSpec:
    """Crop rectangle the network consumes (height:width defaults 256:192)."""

    target_height: int = 256
    target_width: int = 192

    def __post_init__(self):
        if self.target_height <= 0 or self.target_width <= 0:
            raise ValueError(f"crop size must be positive, got {self.target_height}x{self.target_width}")

    @property
    def aspect(self) -> float:
        """height / width ratio."""
        return self.target_height / self.target_width


@dataclass(frozen=True)
class AugmentParams:
    """Sampled augmentation values; the sampler owns the randomness."""

    flip: bool = False
    rotation_deg: float = 0.0
    scale: float = 1.0

    @staticmethod
    def identity() -> "AugmentParams":
        return AugmentParams()


class AffineMap:
    """2x3 affine map from source-image coordinates to crop coordinates."""

    __slots__ = ("m",)

    def __init__(self, m):
        m = np.asarray(m, dtype=np.float64)
        if m.shape != (2, 3):
            raise ValueError(f"affine map must be 2x3, got {m.shape}")
        det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
        if abs(det) <= _MIN_DET:
            raise ValueError(f"affine map is singular (|det| = {abs(det):.3e})")
        self.m = m

    @staticmethod
    def identity() -> "AffineMap":
        return AffineMap(np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]))

    def apply(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        squeeze = pts.ndim == 1
        pts = np.atleast_2d(pts)
        out = pts @ self.m[:, :2].T + self.m[:, 2]
        return out[0] if squeeze else out

    def invert(self) -> "AffineMap":
        a = self.m[:, :2]
        t = self.m[:, 2]
        ainv = np.linalg.inv(a)
        return AffineMap(np.hstack([ainv, (-ainv @ t)[:, None]]))

    def compose(self, other: "AffineMap") -> "AffineMap":
        """self after other: returns the map x -> self(other(x))."""
        a = self.m[:, :2] @ other.m[:, :2]
        t = self.m[:, :2] @ other.m[:, 2] + self.m[:, 2]
        return AffineMap(np.hstack([a, t[:, None]]))

    def __repr__(self):
        return f"AffineMap({self.m.tolist()})"


def extend_box(box, spec: CropSpec):
    """Grow one axis of a detection box about its center so the box
    reaches the crop aspect ratio; the input box is always contained."""
    if box.w <= 0 or box.h <= 0:
        raise ValueError(f"degenerate box w={box.w} h={box.h}")
    cx = box.x + box.w / 2.0
    cy = box.y + box.h / 2.0
    target = spec.aspect
    if box.h / box.w < target:
        new_h, new_w = box.w * target, box.w
    else:
        new_h, new_w = box.h, box.h / target
    return box.replace(x=cx - new_w / 2.0, y=cy - new_h / 2.0, w=new_w, h=new_h)


def build_crop_transform(box, spec: CropSpec, aug: AugmentParams = AugmentParams()) -> AffineMap:
    """Affine map sending the (aspect-extended) box onto the crop rectangle.

    Composition order on a source point: scale about box center,
    rotation about box center, box-to-crop corner mapping, optional
    horizontal flip of the crop.
    """
    if not (ROTATION_RANGE_DEG[0] <= aug.rotation_deg <= ROTATION_RANGE_DEG[1]):
        raise ValueError(f"rotation {aug.rotation_deg} deg outside {ROTATION_RANGE_DEG}")
    if not (SCALE_RANGE[0] <= aug.scale <= SCALE_RANGE[1]):
        raise ValueError(f"scale {aug.scale} outside {SCALE_RANGE}")

    cx = box.x + box.w / 2.0
    cy = box.y + box.h / 2.0

    s = aug.scale  # person magnification: source points spread outward from the box center
    scale = AffineMap(np.array([[s, 0.0, cx * (1 - s)], [0.0, s, cy * (1 - s)]]))

    th = math.radians(aug.rotation_deg)
    c, sn = math.cos(th), math.sin(th)
    rot = AffineMap(np.array([
        [c, -sn, cx - c * cx + sn * cy],
        [sn, c, cy - sn * cx - c * cy],
    ]))

    fx = spec.target_width / box.w
    fy = spec.target_height / box.h
    to_crop = AffineMap(np.array([[fx, 0.0, -box.x * fx], [0.0, fy, -box.y * fy]]))

    m = to_crop.compose(rot).compose(scale)
    if aug.flip:
        flip = AffineMap(np.array([[-1.0, 0.0, spec.target_width - 1.0], [0.0, 1.0, 0.0]]))
        m = flip.compose(m)
    return m


def warp_points(m: AffineMap, points) -> np.ndarray:
    return m.apply(points)


def warp_image(image: np.ndarray, m: AffineMap, out_h: int, out_w: int) -> np.ndarray:
    """Resample a (C, H, W) image under the map with bilinear
    interpolation; samples outside the source read as zero."""
    inv = m.invert().m
    return kernels.bilinear_warp(image, inv, out_h, out_w)


def invert(m: AffineMap) -> AffineMap:
    return m.invert()


def flip_keypoints(instance: PersonInstance, width: float) -> PersonInstance:
    """Mirror an instance horizontally: x -> width - 1 - x with
    left/right channel swap; visibility flags travel with the joints."""
    if width <= 0:
        raise ValueError(f"width must be positive, got {width}")
    out = instance.copy()
    out.keypoints = instance.keypoints[FLIP_ORDER].copy()
    out.keypoints[:, 0] = width - 1.0 - out.keypoints[:, 0]
    out.vis = instance.vis[FLIP_ORDER].copy()
    return out
