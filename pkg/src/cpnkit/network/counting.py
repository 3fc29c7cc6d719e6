"""Closed-form parameter and FLOP accounting for a model config.

FLOPs count convolution multiply-accumulates at 2 ops per MAC;
elementwise work (bias adds, normalization, relu, upsampling) is not
counted. Parameter counts cover trainable values only: conv kernels
and biases plus normalization scale/shift.
"""
from __future__ import annotations

from cpnkit.network.config import ModelConfig, LEVEL_STRIDES


def conv_params(c_in: int, c_out: int, k: int, bias: bool) -> int:
    return c_out * c_in * k * k + (c_out if bias else 0)


def conv_flops(c_in: int, c_out: int, k: int, out_h: int, out_w: int) -> int:
    return 2 * c_in * c_out * k * k * out_h * out_w


def iter_conv_descs(config: ModelConfig, input_hw=None):
    """Yield (name, c_in, c_out, k, bias, out_h, out_w, has_bn) for every
    convolution the architecture executes, mirroring construction order."""
    cfg = config
    h, w = input_hw if input_hw is not None else (cfg.crop_height, cfg.crop_width)
    lat = cfg.lateral_channels
    k = cfg.num_keypoints

    h, w = h // 2, w // 2
    yield ("stem", 3, cfg.stem_width, 3, False, h, w, True)
    h, w = h // 2, w // 2

    c_in = cfg.stem_width
    level_hw = {}
    for si, width in enumerate(cfg.backbone_widths):
        for bi in range(cfg.blocks_per_stage):
            stride = 2 if (si > 0 and bi == 0) else 1
            if stride == 2:
                h, w = h // 2, w // 2
            name = f"stage{si + 1}.block{bi + 1}"
            yield (f"{name}.conv1", c_in, width, 3, False, h, w, True)
            yield (f"{name}.conv2", width, width, 3, False, h, w, True)
            if stride != 1 or c_in != width:
                yield (f"{name}.proj", c_in, width, 1, False, h, w, True)
            c_in = width
        level_hw[si + 2] = (h, w)

    for level, width in zip((2, 3, 4, 5), cfg.backbone_widths):
        lh, lw = level_hw[level]
        yield (f"lateral{level}", width, lat, 1, False, lh, lw, True)
        yield (f"head{level}", lat, k, 3, True, lh, lw, False)
    for level in (2, 3, 4):
        lh, lw = level_hw[level + 1]
        yield (f"upconv{level}", lat, lat, 1, False, lh, lw, True)

    if cfg.refine_enabled:
        mid = max(1, lat // 2)
        for level, count in zip((2, 3, 4, 5), cfg.refine_block_counts):
            if level not in cfg.refine_levels:
                continue
            lh, lw = level_hw[level]
            for bi in range(count):
                name = f"refine{level}.block{bi + 1}"
                yield (f"{name}.reduce", lat, mid, 1, False, lh, lw, True)
                yield (f"{name}.mid", mid, mid, 3, False, lh, lw, True)
                yield (f"{name}.expand", mid, lat, 1, False, lh, lw, True)
        cat = lat * len(cfg.refine_levels)
        fh, fw = level_hw[2]
        yield ("refine.final.reduce", cat, mid, 1, False, fh, fw, True)
        yield ("refine.final.mid", mid, mid, 3, False, fh, fw, True)
        yield ("refine.final.expand", mid, lat, 1, False, fh, fw, True)
        yield ("refine.final.proj", cat, lat, 1, False, fh, fw, True)
        yield ("refine.head", lat, k, 3, True, fh, fw, False)


def count_params(config: ModelConfig) -> int:
    """Trainable parameter count from closed-form layer formulas."""
    total = 0
    for _, c_in, c_out, k, bias, _, _, has_bn in iter_conv_descs(config):
        total += conv_params(c_in, c_out, k, bias)
        if has_bn:
            total += 2 * c_out
    return total


def count_flops(config: ModelConfig, input_hw=None) -> int:
    """Exact conv FLOPs for one forward pass of one crop."""
    total = 0
    for _, c_in, c_out, k, _, out_h, out_w, _ in iter_conv_descs(config, input_hw):
        total += conv_flops(c_in, c_out, k, out_h, out_w)
    return total
