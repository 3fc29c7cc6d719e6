"""Heatmap regression losses with visibility masking and online hard
keypoints mining.

Per-keypoint loss is the spatial mean squared error of one channel.
The plain loss averages over annotated keypoints; the mining loss keeps
only the M hardest (largest) per-keypoint losses and back-propagates
through those channels alone. Placement is configurable per head so the
loss-design ablations are pure config.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

GLOBAL_LOSS_CHOICES = ("none", "plain", "ohkm")
REFINE_LOSS_CHOICES = ("plain", "ohkm")


@dataclass(frozen=True)
class LossConfig:
    hard_count: int = 8          # M: keypoints kept by the mining loss
    num_keypoints: int = 17      # N
    global_loss: str = "plain"   # none | plain | ohkm, applied to every pyramid level head
    refine_loss: str = "ohkm"    # plain | ohkm

    def __post_init__(self):
        if not (1 <= self.hard_count <= self.num_keypoints):
            raise ValueError(f"hard_count must lie in [1, {self.num_keypoints}], got {self.hard_count}")
        if self.global_loss not in GLOBAL_LOSS_CHOICES:
            raise ValueError(f"global_loss must be one of {GLOBAL_LOSS_CHOICES}, got {self.global_loss!r}")
        if self.refine_loss not in REFINE_LOSS_CHOICES:
            raise ValueError(f"refine_loss must be one of {REFINE_LOSS_CHOICES}, got {self.refine_loss!r}")


def per_keypoint_l2(pred: np.ndarray, target: np.ndarray, annotated: np.ndarray) -> np.ndarray:
    """Spatial mean of (pred - target)^2 per channel; unannotated
    channels report exactly 0."""
    if pred.shape != target.shape:
        raise ValueError(f"pred shape {pred.shape} does not match target shape {target.shape}")
    diff = pred.astype(np.float64) - target.astype(np.float64)
    losses = np.mean(diff * diff, axis=(-2, -1))
    return np.where(annotated, losses, 0.0)


def plain_loss(per_k: np.ndarray, annotated: np.ndarray) -> float:
    """Mean per-keypoint loss over annotated keypoints; 0 if none."""
    n = int(np.count_nonzero(annotated))
    if n == 0:
        return 0.0
    return float(per_k[annotated].sum() / n)


def select_hard(per_k: np.ndarray, annotated: np.ndarray, hard_count: int) -> np.ndarray:
    """Indices of the M largest annotated per-keypoint losses, ties
    broken toward the lower keypoint index. Fewer than M annotated
    selects all annotated."""
    ann_idx = np.flatnonzero(annotated)
    if len(ann_idx) <= hard_count:
        return ann_idx
    # stable sort on descending loss keeps lower indices first among ties
    order = np.argsort(-per_k[ann_idx], kind="stable")
    return np.sort(ann_idx[order[:hard_count]])


def ohkm_loss(per_k: np.ndarray, annotated: np.ndarray, hard_count: int):
    """Online hard keypoints mining: mean loss over the selected hard
    set. Returns (loss, selected indices); gradients must flow through
    selected channels only."""
    selected = select_hard(per_k, annotated, hard_count)
    if len(selected) == 0:
        return 0.0, selected
    return float(per_k[selected].mean()), selected


@dataclass
class LossBreakdown:
    total: float
    global_terms: list  # one mean value per pyramid level, None when omitted
    refine_term: float | None
    selected: list = field(default_factory=list)  # per-sample refine selections


def _term_grad(pred, target, chosen, scale):
    """Gradient of mean-over-chosen-channels spatial MSE w.r.t. pred."""
    g = np.zeros_like(pred)
    if len(chosen) == 0:
        return g
    hw = pred.shape[-1] * pred.shape[-2]
    coef = scale * 2.0 / (hw * len(chosen))
    g[chosen] = coef * (pred[chosen] - target[chosen])
    return g


def _head_loss_and_grad(pred, target, annotated, kind, hard_count, grad_scale):
    """One supervision head over a batch: per-sample loss (batch mean)
    plus gradient; returns (value, grad, per-sample selections)."""
    bsz = pred.shape[0]
    grad = np.zeros_like(pred) if grad_scale is not None else None
    vals = []
    sels = []
    for i in range(bsz):
        per_k = per_keypoint_l2(pred[i], target[i], annotated[i])
        if kind == "plain":
            chosen = np.flatnonzero(annotated[i])
            vals.append(plain_loss(per_k, annotated[i]))
        else:
            v, chosen = ohkm_loss(per_k, annotated[i], hard_count)
            vals.append(v)
        sels.append(chosen)
        if grad is not None:
            grad[i] = _term_grad(pred[i], target[i], chosen, grad_scale / bsz)
    return float(np.mean(vals)), grad, sels


def total_loss(global_heatmaps, refined, target, annotated, cfg: LossConfig,
               want_grads: bool = False):
    """Sum of per-level GlobalNet terms plus the RefineNet term.

    ``global_heatmaps`` is a list of (B, K, H, W) head outputs (already
    at the common stride), ``refined`` the refine head output or None,
    ``target``/(B, K, H, W) and ``annotated``/(B, K) are shared by all
    heads. Returns (breakdown, grads) where grads mirrors the head
    structure when requested and is None otherwise.
    """
    gscale = 1.0 if want_grads else None
    global_terms = []
    global_grads = []
    total = 0.0
    for level_pred in global_heatmaps:
        if cfg.global_loss == "none":
            global_terms.append(None)
            global_grads.append(np.zeros_like(level_pred) if want_grads else None)
            continue
        v, g, _ = _head_loss_and_grad(level_pred, target, annotated,
                                      cfg.global_loss, cfg.hard_count, gscale)
        total += v
        global_terms.append(v)
        global_grads.append(g)

    refine_term = None
    refine_grad = None
    selections = []
    if refined is not None:
        refine_term, refine_grad, selections = _head_loss_and_grad(
            refined, target, annotated, cfg.refine_loss, cfg.hard_count, gscale)
        total += refine_term

    breakdown = LossBreakdown(total=total, global_terms=global_terms,
                              refine_term=refine_term, selected=selections)
    grads = (global_grads, refine_grad) if want_grads else None
    return breakdown, grads
