"""Predefined anchor sets, one dense grid per pyramid level."""
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Tuple

import numpy as np

from .exceptions import ConfigError

ANCHOR_FIELDS = ("levels", "strides", "base_sizes", "aspect_ratios", "scales_per_level")


@dataclass(frozen=True)
class AnchorConfig:
    levels: Tuple[int, ...] = (2, 3, 4, 5, 6)
    strides: Tuple[float, ...] = (4, 8, 16, 32, 64)
    base_sizes: Tuple[float, ...] = (8, 16, 32, 64, 128)
    aspect_ratios: Tuple[float, ...] = (0.5, 1.0, 2.0)
    scales_per_level: Tuple[float, ...] = (1.0,)

    def __post_init__(self):
        for name in ANCHOR_FIELDS:
            object.__setattr__(self, name, tuple(getattr(self, name)))
        self.validate()

    def validate(self):
        for name in ANCHOR_FIELDS:
            values = getattr(self, name)
            if not values:
                raise ConfigError(f"Anchor config field '{name}' must not be empty")
            for v in values:
                if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
                    raise ConfigError(f"Anchor config field '{name}' holds a non-numeric value: {v!r}")

        if not (len(self.levels) == len(self.strides) == len(self.base_sizes)):
            raise ConfigError(
                f"levels, strides and base_sizes must have equal lengths, got "
                f"{len(self.levels)}, {len(self.strides)}, {len(self.base_sizes)}"
            )
        if any(not isinstance(level, int) for level in self.levels):
            raise ConfigError("Anchor config field 'levels' must hold integers")
        if len(set(self.levels)) != len(self.levels):
            raise ConfigError("Anchor config field 'levels' must not repeat a level")

        for name in ("strides", "base_sizes", "aspect_ratios", "scales_per_level"):
            if any(v <= 0 for v in getattr(self, name)):
                raise ConfigError(f"Anchor config field '{name}' must be positive")
        for name in ("strides", "base_sizes"):
            values = getattr(self, name)
            if any(b <= a for a, b in zip(values, values[1:])):
                raise ConfigError(f"Anchor config field '{name}' must be strictly increasing")

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "AnchorConfig":
        if not isinstance(data, Mapping):
            raise ConfigError(f"Anchor config must be a table/object, got {type(data).__name__}")
        kwargs = {}
        for name in ANCHOR_FIELDS:
            if name not in data:
                continue
            value = data[name]
            if not isinstance(value, (list, tuple)):
                raise ConfigError(f"Anchor config field '{name}' must be a list")
            kwargs[name] = tuple(value)
        return cls(**kwargs)

    def to_dict(self) -> Dict[str, List[float]]:
        return {name: list(getattr(self, name)) for name in ANCHOR_FIELDS}

    def scaled(self, factor: float) -> "AnchorConfig":
        if factor <= 0:
            raise ConfigError(f"Scale factor must be positive, got {factor}")
        return AnchorConfig(
            levels=self.levels,
            strides=tuple(s * factor for s in self.strides),
            base_sizes=tuple(b * factor for b in self.base_sizes),
            aspect_ratios=self.aspect_ratios,
            scales_per_level=self.scales_per_level,
        )

    @property
    def anchors_per_cell(self) -> int:
        return len(self.aspect_ratios) * len(self.scales_per_level)


@dataclass(frozen=True)
class AnchorPyramid:
    """Anchors of every level, flattened level by level.

    ``boxes`` holds ``[x, y, w, h]`` rows ordered by level, then row-major grid
    cell (y outer, x inner), then aspect ratio, then scale. ``levels`` gives the
    pyramid level of each row.
    """
    config: AnchorConfig
    image_size: Tuple[float, float]
    boxes: np.ndarray
    levels: np.ndarray
    grid_shapes: Tuple[Tuple[int, int], ...] = field(default=())

    def __len__(self) -> int:
        return int(self.boxes.shape[0])

    def level_slice(self, level: int) -> slice:
        position = self.config.levels.index(level)
        counts = total_anchors(self)
        start = sum(counts[:position])
        return slice(start, start + counts[position])

    def level_of(self, anchor_index: int) -> int:
        return int(self.levels[anchor_index])


def _cell_shapes(cfg: AnchorConfig) -> Tuple[np.ndarray, np.ndarray]:
    """Width and height of every (ratio, scale) anchor at unit base size."""
    ratios = np.asarray(cfg.aspect_ratios, dtype=np.float64)
    scales = np.asarray(cfg.scales_per_level, dtype=np.float64)
    widths = (np.sqrt(1.0 / ratios)[:, None] * scales[None, :]).ravel()
    heights = (np.sqrt(ratios)[:, None] * scales[None, :]).ravel()
    return widths, heights


def build_pyramid(cfg: AnchorConfig, image_w: float, image_h: float) -> AnchorPyramid:
    if not (image_w > 0 and image_h > 0):
        raise ConfigError(f"Image size must be positive, got {image_w}x{image_h}")

    unit_w, unit_h = _cell_shapes(cfg)
    per_level_boxes = []
    per_level_ids = []
    grid_shapes = []

    for level, stride, base in zip(cfg.levels, cfg.strides, cfg.base_sizes):
        grid_w = math.ceil(image_w / stride)
        grid_h = math.ceil(image_h / stride)
        grid_shapes.append((grid_h, grid_w))

        cx = (np.arange(grid_w, dtype=np.float64) + 0.5) * stride
        cy = (np.arange(grid_h, dtype=np.float64) + 0.5) * stride
        cy_grid, cx_grid = np.meshgrid(cy, cx, indexing="ij")

        w = unit_w * base
        h = unit_h * base
        n_cells = grid_w * grid_h
        n_shapes = w.shape[0]

        boxes = np.empty((n_cells, n_shapes, 4), dtype=np.float64)
        boxes[:, :, 0] = cx_grid.reshape(-1, 1) - w[None, :] / 2.0
        boxes[:, :, 1] = cy_grid.reshape(-1, 1) - h[None, :] / 2.0
        boxes[:, :, 2] = w[None, :]
        boxes[:, :, 3] = h[None, :]

        per_level_boxes.append(boxes.reshape(-1, 4))
        per_level_ids.append(np.full(n_cells * n_shapes, level, dtype=np.int64))

    return AnchorPyramid(
        config=cfg,
        image_size=(float(image_w), float(image_h)),
        boxes=np.concatenate(per_level_boxes, axis=0),
        levels=np.concatenate(per_level_ids, axis=0),
        grid_shapes=tuple(grid_shapes),
    )


def total_anchors(p: AnchorPyramid) -> List[int]:
    per_cell = p.config.anchors_per_cell
    return [grid_h * grid_w * per_cell for grid_h, grid_w in p.grid_shapes]
