"""Architecture and training hyperparameters, serializable to a flat
``key = value`` text format. Unknown keys are rejected on load."""
from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

PYRAMID_STRIDES = (4, 8, 16, 32)


@dataclass(frozen=True)
class ModelConfig:
    """CPN hyperparameters; defaults are the desk-scale toy setting."""

    crop_height: int = 128
    crop_width: int = 96
    num_keypoints: int = 17
    output_stride: int = 4

    stem_width: int = 16
    backbone_widths: tuple = (16, 32, 48, 64)   # C2..C5 channels
    blocks_per_stage: int = 2
    lateral_channels: int = 32
    refine_block_counts: tuple = (0, 1, 2, 3)   # bottlenecks on P2..P5
    refine_levels: tuple = (2, 3, 4, 5)         # pyramid levels concatenated by RefineNet
    refine_enabled: bool = True

    # loss placement (see cpnkit.loss)
    hard_count: int = 8
    global_loss: str = "plain"
    refine_loss: str = "ohkm"

    def __post_init__(self):
        if len(self.backbone_widths) != 4:
            raise ValueError(f"backbone_widths must list 4 stage widths, got {self.backbone_widths}")
        if self.crop_height % 32 or self.crop_width % 32:
            raise ValueError(f"crop {self.crop_height}x{self.crop_width} must be divisible by 32")
        if self.output_stride != 4:
            raise ValueError("pyramid heads emit stride-4 maps; output_stride must be 4")
        if len(self.refine_block_counts) != 4:
            raise ValueError(f"refine_block_counts must list 4 levels, got {self.refine_block_counts}")
        if any(b > a for a, b in zip(self.refine_block_counts[1:], self.refine_block_counts[:-1])):
            raise ValueError(f"refine_block_counts must be non-decreasing toward deeper levels, "
                             f"got {self.refine_block_counts}")
        if not self.refine_levels or any(l not in (2, 3, 4, 5) for l in self.refine_levels):
            raise ValueError(f"refine_levels must be a non-empty subset of (2, 3, 4, 5), got {self.refine_levels}")
        if tuple(self.refine_levels) != tuple(sorted(set(self.refine_levels))):
            raise ValueError(f"refine_levels must be sorted and unique, got {self.refine_levels}")

    @property
    def heatmap_height(self) -> int:
        return self.crop_height // self.output_stride

    @property
    def heatmap_width(self) -> int:
        return self.crop_width // self.output_stride

    def replace(self, **kw) -> "ModelConfig":
        return replace(self, **kw)


_TUPLE_KEYS = {"backbone_widths", "refine_block_counts", "refine_levels"}
_BOOL_KEYS = {"refine_enabled"}
_STR_KEYS = {"global_loss", "refine_loss"}


def save_config_text(cfg: ModelConfig, path):
    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        lines.append(f"{f.name} = {v}")
    Path(path).write_text("\n".join(lines) + "\n")


def parse_config_items(text: str) -> dict:
    """Parse ``key = value`` lines (# comments and blanks skipped)."""
    items = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, val = (part.strip() for part in line.split("=", 1))
        items[key] = val
    return items


def load_config_text(path) -> ModelConfig:
    items = parse_config_items(Path(path).read_text())
    known = {f.name for f in fields(ModelConfig)}
    unknown = set(items) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    kw = {}
    for key, val in items.items():
        if key in _TUPLE_KEYS:
            kw[key] = tuple(int(x) for x in val.split(",") if x.strip())
        elif key in _BOOL_KEYS:
            kw[key] = val.lower() in ("1", "true", "yes")
        elif key in _STR_KEYS:
            kw[key] = val
        else:
            kw[key] = int(val)
    return ModelConfig(**kw)
