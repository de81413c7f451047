"""Annotation files: parsing, serialisation, validation and filtering.

The on-disk format is a small COCO-style subset::

    {"images": [{"id": 1, "width": 640, "height": 512, "file_name": "a.jpg"}],
     "annotations": [{"id": 7, "image_id": 1, "bbox": [x, y, w, h], "ignore": false}]}

Boxes are kept in continuous pixel coordinates; nothing is rounded here.
"""
import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Any, Dict, Iterator, List, Mapping, Optional, Tuple

from .exceptions import AnnotationParseError, AnnotationSchemaError, DatasetValidationError

logger = logging.getLogger(__name__)

FRAME_PADDING = 0.1

# absolute-size intervals (sqrt of box area, pixels) used for tiny-object benchmarks
SIZE_BINS: Tuple[Tuple[str, float, float], ...] = (
    ("below_tiny", 0.0, 2.0),
    ("tiny1", 2.0, 8.0),
    ("tiny2", 8.0, 12.0),
    ("tiny3", 12.0, 20.0),
    ("small", 20.0, 32.0),
    ("large", 32.0, math.inf),
)


@dataclass(frozen=True)
class BBox:
    x: float
    y: float
    w: float
    h: float

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def absolute_size(self) -> float:
        return math.sqrt(self.area) if self.area > 0 else 0.0

    def as_list(self) -> List[float]:
        return [self.x, self.y, self.w, self.h]

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in (self.x, self.y, self.w, self.h))


@dataclass(frozen=True)
class ImageRecord:
    id: int
    width: float
    height: float
    file_name: Optional[str] = None


@dataclass(frozen=True)
class Annotation:
    id: int
    image_id: int
    bbox: BBox
    ignore: bool = False


@dataclass(frozen=True)
class Dataset:
    images: Tuple[ImageRecord, ...] = ()
    annotations: Tuple[Annotation, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "images", tuple(self.images))
        object.__setattr__(self, "annotations", tuple(self.annotations))

    def annotations_by_image(self) -> Dict[int, List[Annotation]]:
        grouped: Dict[int, List[Annotation]] = {image.id: [] for image in self.images}
        for ann in self.annotations:
            grouped.setdefault(ann.image_id, []).append(ann)
        return grouped

    def iter_images(self) -> Iterator[Tuple[ImageRecord, List[Annotation]]]:
        grouped = self.annotations_by_image()
        for image in self.images:
            yield image, grouped.get(image.id, [])

    @property
    def num_objects(self) -> int:
        return sum(1 for ann in self.annotations if not ann.ignore)


@dataclass(frozen=True)
class Finding:
    severity: str  # "hard" or "soft"
    record: str  # "image" or "annotation"
    record_id: int
    message: str

    def __str__(self) -> str:
        return f"[{self.severity}] {self.record} {self.record_id}: {self.message}"


@dataclass
class ValidationReport:
    findings: List[Finding] = field(default_factory=list)

    @property
    def hard(self) -> List[Finding]:
        return [f for f in self.findings if f.severity == "hard"]

    @property
    def soft(self) -> List[Finding]:
        return [f for f in self.findings if f.severity == "soft"]

    @property
    def valid(self) -> bool:
        return not self.hard


@dataclass(frozen=True)
class SizeDistribution:
    bins: Dict[str, int]
    mean_absolute_size: float
    total: int

    def to_dict(self) -> Dict[str, Any]:
        return {"bins": dict(self.bins), "mean_absolute_size": self.mean_absolute_size,
                "total": self.total}


def _byte_offset(text: str, char_pos: int) -> int:
    return len(text[:char_pos].encode("utf-8"))


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _require(record: Mapping[str, Any], key: str, where: str) -> Any:
    if key not in record:
        raise AnnotationSchemaError(f"{where} is missing required field '{key}'", field=key)
    return record[key]


def _require_int(record: Mapping[str, Any], key: str, where: str) -> int:
    value = _require(record, key, where)
    if isinstance(value, bool) or not isinstance(value, int):
        raise AnnotationSchemaError(f"{where}: field '{key}' must be an integer", field=key)
    return value


def _require_number(record: Mapping[str, Any], key: str, where: str) -> float:
    value = _require(record, key, where)
    if not _is_number(value):
        raise AnnotationSchemaError(f"{where}: field '{key}' must be a number", field=key)
    return value


def _parse_image(raw: Any, position: int) -> ImageRecord:
    where = f"images[{position}]"
    if not isinstance(raw, dict):
        raise AnnotationSchemaError(f"{where} must be an object", field="images")
    image_id = _require_int(raw, "id", where)
    width = _require_number(raw, "width", where)
    height = _require_number(raw, "height", where)
    file_name = raw.get("file_name")
    if file_name is not None and not isinstance(file_name, str):
        raise AnnotationSchemaError(f"{where}: field 'file_name' must be a string", field="file_name")

    if not (math.isfinite(width) and math.isfinite(height)) or width <= 0 or height <= 0:
        raise DatasetValidationError(
            f"Image {image_id} has non-positive size {width}x{height}", record_id=image_id)
    return ImageRecord(id=image_id, width=width, height=height, file_name=file_name)


def _parse_annotation(raw: Any, position: int) -> Annotation:
    where = f"annotations[{position}]"
    if not isinstance(raw, dict):
        raise AnnotationSchemaError(f"{where} must be an object", field="annotations")
    ann_id = _require_int(raw, "id", where)
    image_id = _require_int(raw, "image_id", where)
    bbox = _require(raw, "bbox", where)
    if not isinstance(bbox, list) or len(bbox) != 4 or not all(_is_number(v) for v in bbox):
        raise AnnotationSchemaError(f"{where}: field 'bbox' must be [x, y, w, h] numbers", field="bbox")
    ignore = raw.get("ignore", False)
    if not isinstance(ignore, bool):
        raise AnnotationSchemaError(f"{where}: field 'ignore' must be a boolean", field="ignore")

    box = BBox(*(float(v) for v in bbox))
    if not box.is_finite():
        raise DatasetValidationError(f"Annotation {ann_id} has a non-finite bbox", record_id=ann_id)
    if box.w <= 0 or box.h <= 0:
        raise DatasetValidationError(
            f"Annotation {ann_id} has non-positive bbox size {box.w}x{box.h}", record_id=ann_id)
    return Annotation(id=ann_id, image_id=image_id, bbox=box, ignore=ignore)


def parse_annotations(raw: bytes) -> Dataset:
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as e:
        raise AnnotationParseError(f"Annotation file is not UTF-8: {e.reason}", offset=e.start) from e

    try:
        document = json.loads(text)
    except json.JSONDecodeError as e:
        raise AnnotationParseError(f"Malformed JSON: {e.msg}", offset=_byte_offset(text, e.pos)) from e

    if not isinstance(document, dict):
        raise AnnotationSchemaError("Annotation file must hold a JSON object", field="<root>")
    for key in ("images", "annotations"):
        if key not in document:
            raise AnnotationSchemaError(f"Annotation file is missing required field '{key}'", field=key)
        if not isinstance(document[key], list):
            raise AnnotationSchemaError(f"Field '{key}' must be a list", field=key)

    images = [_parse_image(raw_image, i) for i, raw_image in enumerate(document["images"])]
    annotations = [_parse_annotation(raw_ann, i) for i, raw_ann in enumerate(document["annotations"])]

    dup_images = [i for i, n in Counter(image.id for image in images).items() if n > 1]
    if dup_images:
        raise DatasetValidationError(f"Duplicate image id {dup_images[0]}", record_id=dup_images[0])
    dup_anns = [i for i, n in Counter(ann.id for ann in annotations).items() if n > 1]
    if dup_anns:
        raise DatasetValidationError(f"Duplicate annotation id {dup_anns[0]}", record_id=dup_anns[0])

    image_ids = {image.id for image in images}
    for ann in annotations:
        if ann.image_id not in image_ids:
            raise DatasetValidationError(
                f"Annotation {ann.id} references missing image {ann.image_id}", record_id=ann.id)

    logger.debug(f"Parsed {len(images)} images, {len(annotations)} annotations")
    return Dataset(images=tuple(images), annotations=tuple(annotations))


def serialize_dataset(d: Dataset) -> bytes:
    images = []
    for image in d.images:
        record: Dict[str, Any] = {"id": image.id, "width": image.width, "height": image.height}
        if image.file_name is not None:
            record["file_name"] = image.file_name
        images.append(record)
    annotations = [
        {"id": ann.id, "image_id": ann.image_id, "bbox": ann.bbox.as_list(), "ignore": ann.ignore}
        for ann in d.annotations
    ]
    return json.dumps({"images": images, "annotations": annotations}, indent=2).encode("utf-8")


def filter_images(d: Dataset, max_objects: int) -> Dataset:
    if max_objects < 1:
        raise ValueError(f"max_objects must be >= 1, got {max_objects}")

    counts = Counter(ann.image_id for ann in d.annotations if not ann.ignore)
    kept_ids = {image.id for image in d.images if counts.get(image.id, 0) < max_objects}
    if len(kept_ids) < len(d.images):
        logger.info(f"Filtered out {len(d.images) - len(kept_ids)} images with >= {max_objects} objects")

    return Dataset(
        images=tuple(image for image in d.images if image.id in kept_ids),
        annotations=tuple(ann for ann in d.annotations if ann.image_id in kept_ids),
    )


def _positive_finite(value: Any) -> bool:
    return _is_number(value) and math.isfinite(value) and value > 0


def validate(d: Dataset) -> ValidationReport:
    report = ValidationReport()
    images: Dict[int, ImageRecord] = {}

    for image in d.images:
        if image.id in images:
            report.findings.append(Finding("hard", "image", image.id, "duplicate image id"))
        images[image.id] = image
        if not (_positive_finite(image.width) and _positive_finite(image.height)):
            report.findings.append(Finding(
                "hard", "image", image.id, f"non-positive size {image.width}x{image.height}"))

    seen_annotations = set()
    for ann in d.annotations:
        if ann.id in seen_annotations:
            report.findings.append(Finding("hard", "annotation", ann.id, "duplicate annotation id"))
        seen_annotations.add(ann.id)

        box = ann.bbox
        if not box.is_finite():
            report.findings.append(Finding("hard", "annotation", ann.id, "non-finite bbox"))
            continue
        if box.w <= 0 or box.h <= 0:
            report.findings.append(Finding(
                "hard", "annotation", ann.id, f"non-positive bbox size {box.w}x{box.h}"))
            continue

        image = images.get(ann.image_id)
        if image is None:
            report.findings.append(Finding(
                "hard", "annotation", ann.id, f"references missing image {ann.image_id}"))
            continue
        if not (_positive_finite(image.width) and _positive_finite(image.height)):
            continue

        pad_x = FRAME_PADDING * image.width
        pad_y = FRAME_PADDING * image.height
        if (box.x < -pad_x or box.y < -pad_y
                or box.x + box.w > image.width + pad_x or box.y + box.h > image.height + pad_y):
            report.findings.append(Finding(
                "soft", "annotation", ann.id, "bbox extends outside the padded image frame"))

        clamped_w = min(box.x + box.w, image.width) - max(box.x, 0.0)
        clamped_h = min(box.y + box.h, image.height) - max(box.y, 0.0)
        if clamped_w <= 0 or clamped_h <= 0:
            report.findings.append(Finding(
                "soft", "annotation", ann.id, "bbox has zero area after clamping to the image"))

    for finding in report.soft:
        logger.warning(str(finding))
    return report


def size_distribution(d: Dataset) -> SizeDistribution:
    bins = {name: 0 for name, _, _ in SIZE_BINS}
    sizes = [ann.bbox.absolute_size for ann in d.annotations if not ann.ignore]
    for size in sizes:
        for name, low, high in SIZE_BINS:
            if low <= size < high:
                bins[name] += 1
                break
    mean = sum(sizes) / len(sizes) if sizes else 0.0
    return SizeDistribution(bins=bins, mean_absolute_size=mean, total=len(sizes))


def scale_dataset(d: Dataset, factor: float) -> Dataset:
    """Resize every image and box by ``factor`` (0.25 gives a 4x downsampled copy)."""
    if not (math.isfinite(factor) and factor > 0):
        raise ValueError(f"Scale factor must be positive, got {factor}")
    images = tuple(
        replace(image, width=image.width * factor, height=image.height * factor)
        for image in d.images
    )
    annotations = tuple(
        replace(ann, bbox=BBox(ann.bbox.x * factor, ann.bbox.y * factor,
                               ann.bbox.w * factor, ann.bbox.h * factor))
        for ann in d.annotations
    )
    return Dataset(images=images, annotations=annotations)
