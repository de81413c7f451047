"""Max-IoU matching of ground truths to predefined anchors and per-level counting."""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from .anchor_pyramid import AnchorConfig, AnchorPyramid, build_pyramid, total_anchors
from .dataset_io import BBox, Dataset, ImageRecord, Annotation
from .exceptions import DomainError, InternalError

logger = logging.getLogger(__name__)

DEFAULT_CHUNK_SIZE = 4_000_000
PYRAMID_CACHE_SIZE = 8

BoxesLike = Union[Sequence[BBox], np.ndarray]


@dataclass(frozen=True)
class MatchResult:
    anchor_indices: np.ndarray
    ious: np.ndarray
    zero_overlap: np.ndarray
    levels: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return int(self.anchor_indices.shape[0])


@dataclass(frozen=True)
class LevelCounts:
    counts: Tuple[int, ...]
    levels: Tuple[int, ...] = (2, 3, 4, 5, 6)

    def __post_init__(self):
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))
        object.__setattr__(self, "levels", tuple(self.levels))
        if len(self.counts) != len(self.levels):
            raise ValueError(f"Expected {len(self.levels)} counts, got {len(self.counts)}")
        if any(c < 0 for c in self.counts):
            raise ValueError(f"Level counts must be non-negative: {self.counts}")

    @classmethod
    def zeros(cls, levels: Sequence[int] = (2, 3, 4, 5, 6)) -> "LevelCounts":
        return cls(counts=(0,) * len(levels), levels=tuple(levels))

    def __add__(self, other: "LevelCounts") -> "LevelCounts":
        if self.levels != other.levels:
            raise ValueError(f"Cannot add counts over levels {self.levels} and {other.levels}")
        return LevelCounts(tuple(a + b for a, b in zip(self.counts, other.counts)), self.levels)

    def __getitem__(self, level: int) -> int:
        return self.counts[self.levels.index(level)]

    @property
    def total(self) -> int:
        return sum(self.counts)

    def as_list(self) -> List[int]:
        return list(self.counts)


@dataclass
class DatasetStatistics:
    counts: LevelCounts
    num_images: int = 0
    num_objects: int = 0
    zero_overlap: int = 0
    anchor_totals: List[int] = field(default_factory=list)


def _as_xywh(boxes: BoxesLike, check: bool = False) -> np.ndarray:
    if isinstance(boxes, np.ndarray):
        xywh = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    else:
        xywh = np.array([b.as_list() for b in boxes], dtype=np.float64).reshape(-1, 4)
    if check:
        bad = ~((xywh[:, 2] > 0) & (xywh[:, 3] > 0))
        if np.any(bad):
            raise DomainError(f"Box {xywh[np.argmax(bad)].tolist()} has non-positive area")
    return xywh


def _as_corners(boxes: BoxesLike, check: bool = False) -> np.ndarray:
    xywh = _as_xywh(boxes, check)
    corners = np.empty_like(xywh)
    corners[:, 0] = xywh[:, 0]
    corners[:, 1] = xywh[:, 1]
    corners[:, 2] = xywh[:, 0] + xywh[:, 2]
    corners[:, 3] = xywh[:, 1] + xywh[:, 3]
    return corners


def iou(a: BBox, b: BBox) -> float:
    for box in (a, b):
        if not (box.w > 0 and box.h > 0):
            raise DomainError(f"Box {box.as_list()} has non-positive area")
    ax1, ay1, ax2, ay2 = a.x, a.y, a.x + a.w, a.y + a.h
    bx1, by1, bx2, by2 = b.x, b.y, b.x + b.w, b.y + b.h

    inter_w = max(0.0, min(ax2, bx2) - max(ax1, bx1))
    inter_h = max(0.0, min(ay2, by2) - max(ay1, by1))
    inter = inter_w * inter_h
    area_a = (ax2 - ax1) * (ay2 - ay1)
    area_b = (bx2 - bx1) * (by2 - by1)
    return inter / (area_a + area_b - inter)


def pairwise_iou(gt_corners: np.ndarray, anchor_corners: np.ndarray) -> np.ndarray:
    """IoU between every row of two ``[x1, y1, x2, y2]`` arrays, shape (G, A)."""
    gt_area = (gt_corners[:, 2] - gt_corners[:, 0]) * (gt_corners[:, 3] - gt_corners[:, 1])
    anchor_area = ((anchor_corners[:, 2] - anchor_corners[:, 0])
                   * (anchor_corners[:, 3] - anchor_corners[:, 1]))

    top_left = np.maximum(gt_corners[:, None, :2], anchor_corners[None, :, :2])
    bottom_right = np.minimum(gt_corners[:, None, 2:], anchor_corners[None, :, 2:])
    wh = np.maximum(bottom_right - top_left, 0.0)
    inter = wh[:, :, 0] * wh[:, :, 1]

    return inter / (gt_area[:, None] + anchor_area[None, :] - inter)


def iou_matrix(gts: BoxesLike, pyramid: AnchorPyramid) -> np.ndarray:
    return pairwise_iou(_as_corners(gts, check=True), _as_corners(pyramid.boxes))


def match_gt(m: np.ndarray, pyramid: Optional[AnchorPyramid] = None) -> MatchResult:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[1] == 0:
        raise DomainError(f"IoU matrix needs at least one anchor column, got shape {m.shape}")

    # argmax keeps the first maximum, i.e. the lowest flat anchor index wins ties
    indices = np.argmax(m, axis=1) if m.shape[0] else np.zeros(0, dtype=np.int64)
    best = m[np.arange(m.shape[0]), indices]
    levels = pyramid.levels[indices] if pyramid is not None else None
    return MatchResult(anchor_indices=indices.astype(np.int64), ious=best,
                       zero_overlap=best <= 0.0, levels=levels)


def count_per_level(r: MatchResult, pyramid: AnchorPyramid,
                    include_zero_overlap: bool = False) -> LevelCounts:
    levels = pyramid.config.levels
    if len(r) == 0:
        return LevelCounts.zeros(levels)

    n_anchors = len(pyramid)
    if np.any(r.anchor_indices < 0) or np.any(r.anchor_indices >= n_anchors):
        raise InternalError(f"Matched anchor index out of range for a pyramid of {n_anchors} anchors")

    selected = r.anchor_indices if include_zero_overlap else r.anchor_indices[~r.zero_overlap]
    matched_levels = pyramid.levels[selected]
    return LevelCounts(tuple(int(np.count_nonzero(matched_levels == level)) for level in levels),
                       levels)


def match_image(gts: BoxesLike, pyramid: AnchorPyramid,
                chunk_size: int = DEFAULT_CHUNK_SIZE) -> MatchResult:
    """``match_gt(iou_matrix(gts, pyramid))`` without materialising the whole matrix."""
    gt_corners = _as_corners(gts, check=True)
    if gt_corners.shape[0] == 0:
        return match_gt(np.zeros((0, len(pyramid))), pyramid)

    anchor_corners = _as_corners(pyramid.boxes)
    rows_per_chunk = max(1, chunk_size // max(1, len(pyramid)))
    parts = [
        match_gt(pairwise_iou(gt_corners[start:start + rows_per_chunk], anchor_corners), pyramid)
        for start in range(0, gt_corners.shape[0], rows_per_chunk)
    ]
    return MatchResult(
        anchor_indices=np.concatenate([p.anchor_indices for p in parts]),
        ious=np.concatenate([p.ious for p in parts]),
        zero_overlap=np.concatenate([p.zero_overlap for p in parts]),
        levels=np.concatenate([p.levels for p in parts]),
    )


class LevelCounter:
    """Streams images through max-IoU matching and accumulates level counts."""

    def __init__(self, cfg: AnchorConfig, include_zero_overlap: bool = False,
                 workers: int = 1, chunk_size: int = DEFAULT_CHUNK_SIZE,
                 cache_size: int = PYRAMID_CACHE_SIZE):
        self.cfg = cfg
        self.include_zero_overlap = include_zero_overlap
        self.workers = max(1, workers)
        self.chunk_size = chunk_size
        self.logger = logging.getLogger(__name__)
        # keyed by image size; least recently used pyramids are dropped
        self._pyramid = lru_cache(maxsize=max(1, cache_size))(self._build_pyramid)

    def _build_pyramid(self, width: float, height: float) -> AnchorPyramid:
        return build_pyramid(self.cfg, width, height)

    def pyramid_for(self, image: ImageRecord) -> AnchorPyramid:
        return self._pyramid(float(image.width), float(image.height))

    def cached_pyramids(self) -> int:
        return self._pyramid.cache_info().currsize

    def _count_image(self, image: ImageRecord, annotations: List[Annotation]) -> DatasetStatistics:
        pyramid = self.pyramid_for(image)
        gts = [ann.bbox for ann in annotations if not ann.ignore]
        result = match_image(gts, pyramid, self.chunk_size)
        counts = count_per_level(result, pyramid, self.include_zero_overlap)
        zero_overlap = int(np.count_nonzero(result.zero_overlap))
        self.logger.debug(f"Image {image.id}: {len(gts)} objects -> {counts.as_list()}"
                          f" ({zero_overlap} zero-overlap)")
        return DatasetStatistics(counts=counts, num_images=1, num_objects=len(gts),
                                 zero_overlap=zero_overlap, anchor_totals=total_anchors(pyramid))

    def run(self, d: Dataset) -> DatasetStatistics:
        total = DatasetStatistics(counts=LevelCounts.zeros(self.cfg.levels),
                                  anchor_totals=[0] * len(self.cfg.levels))

        if self.workers > 1 and len(d.images) > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                partials: Iterator[DatasetStatistics] = pool.map(
                    lambda item: self._count_image(*item), d.iter_images())
                for part in partials:
                    self._accumulate(total, part)
        else:
            for image, annotations in d.iter_images():
                self._accumulate(total, self._count_image(image, annotations))

        if total.zero_overlap and not self.include_zero_overlap:
            self.logger.warning(f"{total.zero_overlap} objects overlap no anchor and were not counted")
        self.logger.info(f"Counted {total.num_objects} objects over {total.num_images} images:"
                         f" {total.counts.as_list()}")
        return total

    @staticmethod
    def _accumulate(total: DatasetStatistics, part: DatasetStatistics):
        total.counts = total.counts + part.counts
        total.num_images += part.num_images
        total.num_objects += part.num_objects
        total.zero_overlap += part.zero_overlap
        total.anchor_totals = [a + b for a, b in zip(total.anchor_totals, part.anchor_totals)]


def dataset_level_counts(d: Dataset, cfg: AnchorConfig, include_zero_overlap: bool = False,
                         workers: int = 1, chunk_size: int = DEFAULT_CHUNK_SIZE) -> LevelCounts:
    return LevelCounter(cfg, include_zero_overlap, workers, chunk_size).run(d).counts
