"""Detector output ingestion and box suppression.

Hard NMS and Gaussian Soft-NMS over scored class-labeled boxes, plus the
two-step person selection rule that gates which boxes enter pose
estimation: keep the top-scoring boxes across all classes first, then
filter to the person class. Detections load from the standard COCO
results JSON shape.
"""
from __future__ import annotations

import dataclasses
import json
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

PERSON_CLASS_ID = 1


@dataclass(frozen=True)
class DetectionBox:
    """Scored rectangle from an external detector; x, y, w, h in image px."""

    image_id: int
    class_id: int
    x: float
    y: float
    w: float
    h: float
    score: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box must have positive extent, got w={self.w} h={self.h}")
        if not (self.score == self.score and abs(self.score) != float("inf")):
            raise ValueError(f"box score must be finite, got {self.score}")

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def area(self) -> float:
        return self.w * self.h

    def replace(self, **kw) -> "DetectionBox":
        return dataclasses.replace(self, **kw)


def iou(a: DetectionBox, b: DetectionBox) -> float:
    ix = min(a.x2, b.x2) - max(a.x, b.x)
    iy = min(a.y2, b.y2) - max(a.y, b.y)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def _by_score(boxes):
    # stable: score descending, input order breaks ties
    return sorted(range(len(boxes)), key=lambda i: -boxes[i].score)


def hard_nms(boxes, iou_threshold: float):
    """Greedy score-descending suppression: keep a box iff its IoU with
    every higher-scored kept box is <= the threshold. Scores pass
    through unmodified."""
    if not (0.0 < iou_threshold < 1.0):
        raise ValueError(f"iou threshold must lie in (0, 1), got {iou_threshold}")
    kept = []
    for i in _by_score(boxes):
        cand = boxes[i]
        if all(iou(cand, k) <= iou_threshold for k in kept):
            kept.append(cand)
    return kept


def soft_nms(boxes, sigma: float = 0.5, score_floor: float = 1e-3, decay=None):
    """Gaussian-decay Soft-NMS: pop the max-score box, keep it, rescale
    every remaining score by exp(-iou^2 / sigma), and drop boxes whose
    score falls below ``score_floor``. Kept boxes carry their rescored
    scores.

    ``decay`` overrides the rescale factor with a callable iou -> factor
    (used e.g. to reproduce hard suppression with a step function).
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if decay is None:
        def decay(v, _s=sigma):
            return math.exp(-(v * v) / _s)

    live = [(b, b.score) for b in boxes]
    kept = []
    while live:
        best = max(range(len(live)), key=lambda i: (live[i][1], -i))
        box, score = live.pop(best)
        kept.append(box.replace(score=score))
        nxt = []
        for other, s in live:
            s2 = s * decay(iou(box, other))
            if s2 >= score_floor:
                nxt.append((other, s2))
        live = nxt
    return kept


def select_for_pose(boxes, person_class_id: int = PERSON_CLASS_ID, cap: int = 100):
    """Per image: keep the top-``cap`` boxes of all classes by score,
    then filter to the person class, preserving score order."""
    per_image = defaultdict(list)
    for b in boxes:
        per_image[b.image_id].append(b)
    out = []
    for image_id in sorted(per_image):
        group = per_image[image_id]
        top = [group[i] for i in _by_score(group)[:cap]]
        out.extend(b for b in top if b.class_id == person_class_id)
    return out


def load_detections(path) -> list[DetectionBox]:
    """Read a COCO results JSON array of
    {image_id, category_id, bbox: [x, y, w, h], score}."""
    with open(Path(path)) as fh:
        raw = json.load(fh)
    boxes = []
    for rec in raw:
        x, y, w, h = rec["bbox"]
        boxes.append(DetectionBox(
            image_id=int(rec["image_id"]),
            class_id=int(rec.get("category_id", PERSON_CLASS_ID)),
            x=float(x), y=float(y), w=float(w), h=float(h),
            score=float(rec["score"]),
        ))
    return boxes


def save_detections(boxes, path):
    recs = [
        {"image_id": b.image_id, "category_id": b.class_id,
         "bbox": [b.x, b.y, b.w, b.h], "score": b.score}
        for b in boxes
    ]
    with open(Path(path), "w") as fh:
        json.dump(recs, fh)
