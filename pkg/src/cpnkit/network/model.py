"""The cascaded pyramid network: small residual backbone producing
C2..C5, a U-shaped pyramid head with per-level score maps (GlobalNet),
and a refinement head that runs bottleneck stacks on each pyramid
level, upsamples everything to the common stride, concatenates and
emits the refined score maps (RefineNet).

The backward pass is chained by hand in reverse topological order:
refine head, per-level heads, pyramid top-down path, then backbone
stages. There is no general autodiff graph; the architecture is fixed
and every hop below mirrors one forward hop.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from cpnkit.network.config import ModelConfig
from cpnkit.network.layers import BasicBlock, Bottleneck, Conv2D, ConvBN, MaxPool
from cpnkit.tensorcore import ops
from cpnkit.tensorcore.grid import ParamStore

LEVELS = (2, 3, 4, 5)


@dataclass
class NetworkOutput:
    """Per-level score maps (all upsampled to the common stride) and the
    refined maps; every stack shares the K x (crop/4) x (crop/4) shape."""

    global_heatmaps: list
    refined: np.ndarray | None


class CPN:
    def __init__(self, config: ModelConfig, store: ParamStore | None = None, seed: int = 0):
        self.config = config
        self.store = store if store is not None else ParamStore()
        rng = np.random.default_rng(seed)
        cfg = config
        k = cfg.num_keypoints
        lat = cfg.lateral_channels

        self.stem = ConvBN(self.store, "stem", 3, cfg.stem_width, 3, stride=2, padding=1, rng=rng)
        self.pool = MaxPool(2, 2)

        self.stages = []
        c_in = cfg.stem_width
        for si, width in enumerate(cfg.backbone_widths):
            blocks = []
            for bi in range(cfg.blocks_per_stage):
                stride = 2 if (si > 0 and bi == 0) else 1
                blocks.append(BasicBlock(self.store, f"stage{si + 1}.block{bi + 1}", c_in, width,
                                         stride=stride, rng=rng))
                c_in = width
            self.stages.append(blocks)

        self.laterals = {}
        self.upconvs = {}
        self.heads = {}
        for level, width in zip(LEVELS, cfg.backbone_widths):
            self.laterals[level] = ConvBN(self.store, f"lateral{level}", width, lat, 1,
                                          relu=False, rng=rng)
            self.heads[level] = Conv2D(self.store, f"head{level}", lat, k, 3, padding=1,
                                       bias=True, rng=rng)
        for level in (2, 3, 4):
            self.upconvs[level] = ConvBN(self.store, f"upconv{level}", lat, lat, 1,
                                         relu=False, rng=rng)

        self.refine_blocks = {}
        self.final_bottleneck = None
        self.refine_head = None
        if cfg.refine_enabled:
            for level, count in zip(LEVELS, cfg.refine_block_counts):
                if level not in cfg.refine_levels:
                    continue
                self.refine_blocks[level] = [
                    Bottleneck(self.store, f"refine{level}.block{bi + 1}", lat, lat, rng=rng)
                    for bi in range(count)
                ]
            cat_channels = lat * len(cfg.refine_levels)
            self.final_bottleneck = Bottleneck(self.store, "refine.final", cat_channels, lat, rng=rng)
            self.refine_head = Conv2D(self.store, "refine.head", lat, k, 3, padding=1,
                                      bias=True, rng=rng)

        self._fwd = None

    # -- forward ------------------------------------------------------------

    def forward(self, x: np.ndarray, train: bool = False) -> NetworkOutput:
        cfg = self.config
        if x.ndim == 3:
            x = x[None]
        if x.shape[1] != 3 or x.shape[2] != cfg.crop_height or x.shape[3] != cfg.crop_width:
            raise ValueError(f"expected input (B, 3, {cfg.crop_height}, {cfg.crop_width}), got {x.shape}")

        y = self.pool.forward(self.stem.forward(x, train), train)
        feats = {}
        for level, blocks in zip(LEVELS, self.stages):
            for block in blocks:
                y = block.forward(y, train)
            feats[level] = y

        pyramid = {}
        pyramid[5] = self.laterals[5].forward(feats[5], train)
        for level in (4, 3, 2):
            up = ops.upsample_nearest_forward(
                self.upconvs[level].forward(pyramid[level + 1], train), 2)
            pyramid[level] = ops.add_forward(self.laterals[level].forward(feats[level], train), up)

        global_heatmaps = []
        for level in LEVELS:
            hm = self.heads[level].forward(pyramid[level], train)
            global_heatmaps.append(ops.upsample_nearest_forward(hm, 2 ** (level - 2)))

        refined = None
        cat_parts = None
        if cfg.refine_enabled:
            cat_parts = []
            for level in cfg.refine_levels:
                r = pyramid[level]
                for block in self.refine_blocks[level]:
                    r = block.forward(r, train)
                cat_parts.append(ops.upsample_nearest_forward(r, 2 ** (level - 2)))
            cat = ops.concat_channels_forward(cat_parts)
            refined = self.refine_head.forward(self.final_bottleneck.forward(cat, train), train)

        if train:
            self._fwd = {
                "cat_sizes": [p.shape[1] for p in cat_parts] if cat_parts is not None else None,
            }
        return NetworkOutput(global_heatmaps=global_heatmaps, refined=refined)

    # -- backward -------------------------------------------------------------

    def backward(self, g_globals, g_refined):
        """Chain gradients from the head outputs back to every parameter.

        ``g_globals`` lists one gradient array per pyramid level (same
        order and shape as the forward's global_heatmaps); ``g_refined``
        matches the refined output (None when refine is disabled).
        """
        cfg = self.config
        g_pyramid = {level: None for level in LEVELS}

        def stash(level, g):
            if g_pyramid[level] is None:
                g_pyramid[level] = g
            else:
                g_pyramid[level] = g_pyramid[level] + g

        if g_refined is not None:
            g = self.final_bottleneck.backward(self.refine_head.backward(g_refined))
            parts = ops.concat_channels_backward(g, self._fwd["cat_sizes"])
            for level, gp in zip(cfg.refine_levels, parts):
                gp = ops.upsample_nearest_backward(gp, 2 ** (level - 2))
                for block in reversed(self.refine_blocks[level]):
                    gp = block.backward(gp)
                stash(level, gp)

        for level, g in zip(LEVELS, g_globals):
            g = ops.upsample_nearest_backward(g, 2 ** (level - 2))
            stash(level, self.heads[level].backward(g))

        g_feats = {}
        for level in (2, 3, 4):
            g = g_pyramid[level]
            g_feats[level] = self.laterals[level].backward(g)
            g_up = ops.upsample_nearest_backward(g, 2)
            stash(level + 1, self.upconvs[level].backward(g_up))
        g_feats[5] = self.laterals[5].backward(g_pyramid[5])

        g = g_feats[5]
        for level, blocks in zip(reversed(LEVELS), reversed(self.stages)):
            for block in reversed(blocks):
                g = block.backward(g)
            if level > 2:
                g = g + g_feats[level - 1]
        self.stem.backward(self.pool.backward(g))
        self._fwd = None

    # -- accounting -----------------------------------------------------------

    def measured_flops_per_sample(self) -> int:
        """Conv FLOPs actually executed by the most recent forward,
        per batch item (2 ops per multiply-accumulate)."""
        return 2 * sum(conv.last_macs for conv in self._iter_convs())

    def _iter_convs(self):
        yield self.stem.conv
        for blocks in self.stages:
            for b in blocks:
                yield b.unit1.conv
                yield b.unit2.conv
                if b.proj is not None:
                    yield b.proj.conv
        for level in LEVELS:
            yield self.laterals[level].conv
            yield self.heads[level]
        for level in (2, 3, 4):
            yield self.upconvs[level].conv
        if self.config.refine_enabled:
            for level in self.config.refine_levels:
                for b in self.refine_blocks[level]:
                    yield b.unit1.conv
                    yield b.unit2.conv
                    yield b.unit3.conv
                    if b.proj is not None:
                        yield b.proj.conv
            fb = self.final_bottleneck
            yield fb.unit1.conv
            yield fb.unit2.conv
            yield fb.unit3.conv
            if fb.proj is not None:
                yield fb.proj.conv
            yield self.refine_head
