import json
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tinyfusion.dataset_io import (
    Annotation,
    BBox,
    Dataset,
    ImageRecord,
    filter_images,
    parse_annotations,
    scale_dataset,
    serialize_dataset,
    size_distribution,
    validate,
)
from tinyfusion.exceptions import AnnotationParseError, AnnotationSchemaError, DatasetValidationError

coordinates = st.floats(-100.0, 5000.0, allow_nan=False, allow_infinity=False)
extents = st.floats(0.01, 5000.0, allow_nan=False, allow_infinity=False)


@st.composite
def datasets(draw):
    image_ids = draw(st.lists(st.integers(0, 10**6), max_size=6, unique=True))
    images = tuple(
        ImageRecord(image_id, draw(extents | st.integers(1, 4096)), draw(extents | st.integers(1, 4096)),
                    draw(st.none() | st.text(max_size=12)))
        for image_id in image_ids)
    annotations = ()
    if images:
        ann_ids = draw(st.lists(st.integers(0, 10**6), max_size=20, unique=True))
        annotations = tuple(
            Annotation(ann_id, draw(st.sampled_from(image_ids)),
                       BBox(draw(coordinates), draw(coordinates), draw(extents), draw(extents)),
                       draw(st.booleans()))
            for ann_id in ann_ids)
    return Dataset(images, annotations)


def _doc(images, annotations) -> bytes:
    return json.dumps({"images": images, "annotations": annotations}).encode("utf-8")


def _crowded(n_boxes: int, image_id: int = 1, first_id: int = 1):
    return [Annotation(first_id + k, image_id, BBox(k % 50, k // 50, 4, 4)) for k in range(n_boxes)]


class TestParseAnnotations:
    def test_single_image(self):
        d = parse_annotations(_doc([{"id": 1, "width": 640, "height": 512}],
                                   [{"id": 7, "image_id": 1, "bbox": [10, 10, 16, 16]}]))
        assert d.images == (ImageRecord(1, 640, 512),)
        assert d.annotations == (Annotation(7, 1, BBox(10.0, 10.0, 16.0, 16.0), ignore=False),)

    def test_ignore_flag(self):
        d = parse_annotations(_doc([{"id": 1, "width": 64, "height": 64, "file_name": "a.png"}],
                                   [{"id": 1, "image_id": 1, "bbox": [1, 1, 2, 2], "ignore": True}]))
        assert d.annotations[0].ignore is True
        assert d.images[0].file_name == "a.png"

    def test_empty_lists(self):
        d = parse_annotations(b'{"images": [], "annotations": []}')
        assert d.images == () and d.annotations == ()

    def test_malformed_json_reports_byte_offset(self):
        raw = b'{"images": [], "annotations": [}'
        with pytest.raises(AnnotationParseError) as info:
            parse_annotations(raw)
        assert info.value.offset == raw.index(b"}")

    def test_offset_counts_bytes_not_characters(self):
        raw = '{"images": [], "x": "éé", "annotations": ]}'.encode("utf-8")
        with pytest.raises(AnnotationParseError) as info:
            parse_annotations(raw)
        assert info.value.offset == raw.index(b"]}")

    def test_invalid_utf8(self):
        with pytest.raises(AnnotationParseError) as info:
            parse_annotations(b'{"images": "\xff"}')
        assert info.value.offset == 12

    def test_missing_bbox_names_field(self):
        with pytest.raises(AnnotationSchemaError) as info:
            parse_annotations(_doc([{"id": 1, "width": 10, "height": 10}], [{"id": 1, "image_id": 1}]))
        assert info.value.field == "bbox"

    def test_missing_top_level_key(self):
        with pytest.raises(AnnotationSchemaError) as info:
            parse_annotations(b'{"images": []}')
        assert info.value.field == "annotations"

    @pytest.mark.parametrize("bbox", [[1, 2, 3], [1, 2, 3, "4"], [1, 2, 3, True], "1,2,3,4"])
    def test_bad_bbox_shape(self, bbox):
        with pytest.raises(AnnotationSchemaError):
            parse_annotations(_doc([{"id": 1, "width": 10, "height": 10}],
                                   [{"id": 1, "image_id": 1, "bbox": bbox}]))

    def test_missing_image_names_annotation(self):
        with pytest.raises(DatasetValidationError) as info:
            parse_annotations(_doc([{"id": 1, "width": 10, "height": 10}],
                                   [{"id": 42, "image_id": 9, "bbox": [0, 0, 2, 2]}]))
        assert info.value.record_id == 42

    def test_duplicate_annotation_id(self):
        with pytest.raises(DatasetValidationError) as info:
            parse_annotations(_doc([{"id": 1, "width": 10, "height": 10}],
                                   [{"id": 3, "image_id": 1, "bbox": [0, 0, 2, 2]},
                                    {"id": 3, "image_id": 1, "bbox": [1, 1, 2, 2]}]))
        assert info.value.record_id == 3

    @pytest.mark.parametrize("bbox", [[0, 0, 0, 5], [0, 0, 5, -1]])
    def test_non_positive_box(self, bbox):
        with pytest.raises(DatasetValidationError) as info:
            parse_annotations(_doc([{"id": 1, "width": 10, "height": 10}],
                                   [{"id": 5, "image_id": 1, "bbox": bbox}]))
        assert info.value.record_id == 5

    def test_non_positive_image(self):
        with pytest.raises(DatasetValidationError) as info:
            parse_annotations(_doc([{"id": 2, "width": 0, "height": 10}], []))
        assert info.value.record_id == 2

    def test_serialize_parses_back(self, small_dataset):
        assert parse_annotations(serialize_dataset(small_dataset)) == small_dataset

    @settings(max_examples=60, deadline=None)
    @given(datasets())
    def test_parse_inverts_serialize(self, d):
        assert parse_annotations(serialize_dataset(d)) == d


class TestFilterImages:
    def test_keeps_images_under_limit(self):
        images = (ImageRecord(1, 200, 200), ImageRecord(2, 200, 200))
        annotations = tuple(_crowded(150, 1, 1) + _crowded(250, 2, 1000))
        filtered = filter_images(Dataset(images, annotations), 200)
        assert [image.id for image in filtered.images] == [1]
        assert len(filtered.annotations) == 150

    def test_exactly_at_limit_is_dropped(self):
        d = Dataset((ImageRecord(1, 200, 200),), tuple(_crowded(200)))
        assert filter_images(d, 200).images == ()

    def test_limit_one_keeps_only_empty_images(self):
        images = (ImageRecord(1, 50, 50), ImageRecord(2, 50, 50))
        d = Dataset(images, (Annotation(1, 1, BBox(0, 0, 4, 4)),))
        assert [image.id for image in filter_images(d, 1).images] == [2]

    def test_ignored_boxes_do_not_count(self):
        annotations = tuple(_crowded(3)) + (Annotation(99, 1, BBox(0, 0, 4, 4), ignore=True),)
        d = Dataset((ImageRecord(1, 50, 50),), annotations)
        assert len(filter_images(d, 4).images) == 1

    def test_idempotent(self):
        images = (ImageRecord(1, 200, 200), ImageRecord(2, 200, 200))
        d = Dataset(images, tuple(_crowded(5, 1, 1) + _crowded(20, 2, 100)))
        once = filter_images(d, 10)
        assert filter_images(once, 10) == once

    def test_rejects_zero_limit(self, small_dataset):
        with pytest.raises(ValueError):
            filter_images(small_dataset, 0)


class TestValidate:
    def test_well_formed(self, small_dataset):
        report = validate(small_dataset)
        assert report.valid
        assert report.findings == []

    def test_zero_width_is_hard(self):
        d = Dataset((ImageRecord(1, 100, 100),), (Annotation(4, 1, BBox(10, 10, 0, 5)),))
        report = validate(d)
        assert not report.valid
        assert [f.record_id for f in report.hard] == [4]

    def test_nan_box_is_hard(self):
        d = Dataset((ImageRecord(1, 100, 100),), (Annotation(4, 1, BBox(math.nan, 10, 5, 5)),))
        assert not validate(d).valid

    def test_missing_image_is_hard(self):
        d = Dataset((ImageRecord(1, 100, 100),), (Annotation(4, 2, BBox(1, 1, 5, 5)),))
        assert validate(d).hard[0].record_id == 4

    def test_duplicate_image_is_hard(self):
        d = Dataset((ImageRecord(1, 100, 100), ImageRecord(1, 50, 50)), ())
        assert validate(d).hard[0].record == "image"

    def test_box_past_padded_frame_is_soft(self):
        # 20x20 image -> 2 px of padding; the box ends 5 px past the right edge
        d = Dataset((ImageRecord(1, 20, 20),), (Annotation(1, 1, BBox(15, 5, 10, 5)),))
        report = validate(d)
        assert report.valid
        assert [f.record_id for f in report.soft] == [1]

    def test_box_within_padding_is_fine(self):
        d = Dataset((ImageRecord(1, 100, 100),), (Annotation(1, 1, BBox(95, 5, 10, 5)),))
        assert validate(d).findings == []

    def test_box_outside_image_has_zero_clamped_area(self):
        d = Dataset((ImageRecord(1, 100, 100),), (Annotation(1, 1, BBox(100, 5, 4, 4)),))
        messages = [f.message for f in validate(d).soft]
        assert any("zero area" in m for m in messages)


class TestSizeDistribution:
    def test_bins(self):
        sizes = [1, 4, 10, 16, 25, 40]
        annotations = tuple(Annotation(k, 1, BBox(0, 0, s, s)) for k, s in enumerate(sizes))
        dist = size_distribution(Dataset((ImageRecord(1, 100, 100),), annotations))
        assert dist.bins == {"below_tiny": 1, "tiny1": 1, "tiny2": 1, "tiny3": 1, "small": 1, "large": 1}
        assert dist.total == 6
        assert dist.mean_absolute_size == pytest.approx(sum(sizes) / 6)

    def test_absolute_size_is_geometric_mean(self):
        assert BBox(0, 0, 4, 16).absolute_size == pytest.approx(8.0)

    def test_empty(self):
        dist = size_distribution(Dataset())
        assert dist.total == 0 and dist.mean_absolute_size == 0.0


class TestScaleDataset:
    def test_scales_images_and_boxes(self, small_dataset):
        scaled = scale_dataset(small_dataset, 0.25)
        assert scaled.images[0].width == 160 and scaled.images[0].height == 128
        assert scaled.annotations[1].bbox == BBox(25.0, 10.0, 7.5, 15.0)
        assert scaled.annotations[2].ignore

    @pytest.mark.parametrize("factor", [0.0, -1.0, math.inf])
    def test_rejects_bad_factor(self, small_dataset, factor):
        with pytest.raises(ValueError):
            scale_dataset(small_dataset, factor)
