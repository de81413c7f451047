import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tinyfusion.anchor_pyramid import AnchorConfig, build_pyramid
from tinyfusion.assignment import (
    LevelCounter,
    LevelCounts,
    MatchResult,
    count_per_level,
    dataset_level_counts,
    iou,
    iou_matrix,
    match_gt,
    match_image,
)
from tinyfusion.dataset_io import Annotation, BBox, Dataset, ImageRecord, scale_dataset
from tinyfusion.exceptions import DomainError, InternalError

from .oracles import brute_force_counts, random_dataset, scalar_iou

boxes = st.builds(
    BBox,
    st.floats(-50, 50), st.floats(-50, 50),
    st.floats(0.5, 100), st.floats(0.5, 100),
)


class TestIou:
    def test_half_overlap(self):
        assert iou(BBox(0, 0, 10, 10), BBox(5, 5, 10, 10)) == pytest.approx(25 / 175)

    def test_one_seventh(self):
        assert iou(BBox(0, 0, 4, 4), BBox(2, 0, 4, 4)) == pytest.approx(1 / 3)
        assert iou(BBox(0, 0, 2, 2), BBox(1, 1, 2, 2)) == pytest.approx(1 / 7)

    def test_identical(self):
        assert iou(BBox(0.1, 0.3, 7.7, 3.3), BBox(0.1, 0.3, 7.7, 3.3)) == 1.0

    def test_disjoint_and_touching(self):
        assert iou(BBox(0, 0, 1, 1), BBox(5, 5, 1, 1)) == 0.0
        assert iou(BBox(0, 0, 1, 1), BBox(1, 0, 1, 1)) == 0.0

    def test_zero_area_raises(self):
        with pytest.raises(DomainError):
            iou(BBox(0, 0, 0, 1), BBox(0, 0, 1, 1))

    @given(boxes, boxes)
    def test_symmetric_and_bounded(self, a, b):
        value = iou(a, b)
        assert 0.0 <= value <= 1.0
        assert value == iou(b, a)


class TestIouMatrix:
    def test_matches_scalar_oracle(self):
        pyramid = build_pyramid(AnchorConfig(), 40, 24)
        gts = [BBox(3, 4, 10, 6), BBox(20, 2, 30, 30), BBox(0.5, 0.5, 2, 2)]
        m = iou_matrix(gts, pyramid)
        assert m.shape == (3, len(pyramid))
        for g, gt in enumerate(gts):
            for a, anchor in enumerate(pyramid.boxes):
                assert m[g, a] == pytest.approx(scalar_iou(gt.as_list(), anchor), abs=1e-12)

    def test_no_ground_truths(self):
        pyramid = build_pyramid(AnchorConfig(), 16, 16)
        assert iou_matrix([], pyramid).shape == (0, len(pyramid))

    def test_anchor_box_has_a_single_exact_match(self):
        pyramid = build_pyramid(AnchorConfig(), 64, 64)
        column = pyramid.level_slice(4).start + 4
        row = iou_matrix([BBox(*pyramid.boxes[column])], pyramid)[0]
        assert np.flatnonzero(row == 1.0).tolist() == [column]

    def test_accepts_arrays(self):
        pyramid = build_pyramid(AnchorConfig(), 16, 16)
        gts = np.array([[1.0, 1.0, 8.0, 8.0]])
        np.testing.assert_array_equal(iou_matrix(gts, pyramid), iou_matrix([BBox(1, 1, 8, 8)], pyramid))

    def test_rejects_degenerate_box(self):
        with pytest.raises(DomainError):
            iou_matrix([BBox(0, 0, 4, 0)], build_pyramid(AnchorConfig(), 16, 16))


class TestMatchGt:
    def test_argmax(self):
        r = match_gt(np.array([[0.1, 0.7, 0.3], [0.0, 0.2, 0.9]]))
        assert r.anchor_indices.tolist() == [1, 2]
        assert r.ious.tolist() == [0.7, 0.9]
        assert not r.zero_overlap.any()

    def test_ties_go_to_lowest_index(self):
        assert match_gt(np.array([[0.5, 0.5]])).anchor_indices.tolist() == [0]
        r = match_gt(np.array([[0.5, 0.8, 0.8, 0.2]]))
        assert r.anchor_indices.tolist() == [1]

    def test_zero_row_is_flagged(self):
        r = match_gt(np.array([[0.0, 0.0], [0.0, 0.4]]))
        assert r.anchor_indices.tolist() == [0, 1]
        assert r.zero_overlap.tolist() == [True, False]

    def test_no_ground_truths(self):
        assert len(match_gt(np.zeros((0, 5)))) == 0

    def test_no_anchors_raises(self):
        with pytest.raises(DomainError):
            match_gt(np.zeros((2, 0)))


class TestCountPerLevel:
    def test_box_equal_to_p3_anchor(self):
        # a 16x16 box centred on (12, 12) is the ratio-1 anchor of P3 cell (1, 1)
        pyramid = build_pyramid(AnchorConfig(), 32, 32)
        r = match_image([BBox(4, 4, 16, 16)], pyramid)
        assert r.ious.tolist() == [1.0]
        assert count_per_level(r, pyramid).as_list() == [0, 1, 0, 0, 0]

    def test_example_image(self):
        pyramid = build_pyramid(AnchorConfig(), 640, 512)
        gts = [BBox(2, 2, 8, 8), BBox(100, 100, 200, 200)]
        counts = count_per_level(match_image(gts, pyramid), pyramid)
        assert counts.as_list() == [1, 0, 0, 0, 1]

    def test_empty(self):
        pyramid = build_pyramid(AnchorConfig(), 32, 32)
        assert count_per_level(match_image([], pyramid), pyramid).as_list() == [0] * 5

    def test_zero_overlap_is_skipped_unless_included(self):
        pyramid = build_pyramid(AnchorConfig(), 32, 32)
        far = BBox(1000, 1000, 4, 4)
        r = match_image([far, BBox(4, 4, 16, 16)], pyramid)
        assert count_per_level(r, pyramid).total == 1
        included = count_per_level(r, pyramid, include_zero_overlap=True)
        assert included.as_list() == [1, 1, 0, 0, 0]

    def test_out_of_range_index(self):
        pyramid = build_pyramid(AnchorConfig(), 8, 8)
        bad = MatchResult(anchor_indices=np.array([len(pyramid)]), ious=np.array([0.5]),
                          zero_overlap=np.array([False]))
        with pytest.raises(InternalError):
            count_per_level(bad, pyramid)

    def test_chunking_does_not_change_matches(self):
        pyramid = build_pyramid(AnchorConfig(), 96, 64)
        gts = [BBox(3 * k, 2 * k, 5 + k, 4 + 2 * k) for k in range(20)]
        whole = match_gt(iou_matrix(gts, pyramid))
        chunked = match_image(gts, pyramid, chunk_size=len(pyramid) * 3)
        np.testing.assert_array_equal(whole.anchor_indices, chunked.anchor_indices)
        np.testing.assert_array_equal(whole.ious, chunked.ious)


class TestLevelCounts:
    def test_add(self):
        total = LevelCounts((1, 2, 3, 4, 5)) + LevelCounts((1, 0, 0, 0, 1))
        assert total.as_list() == [2, 2, 3, 4, 6]
        assert total[6] == 6
        assert total.total == 17

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            LevelCounts((1, -1, 0, 0, 0))


class TestDatasetLevelCounts:
    def test_uniform_fixture_counts(self, uniform_path):
        from tinyfusion.dataset_io import parse_annotations
        d = parse_annotations(uniform_path.read_bytes())
        assert dataset_level_counts(d, AnchorConfig()).as_list() == [2, 2, 2, 2, 2]

    def test_duplicating_an_image_doubles_counts(self):
        d = random_dataset(3, max_images=1, max_boxes=40)
        image = d.images[0]
        copy_image = ImageRecord(image.id + 1, image.width, image.height)
        copies = tuple(Annotation(a.id + 10_000, copy_image.id, a.bbox, a.ignore) for a in d.annotations)
        doubled = Dataset(d.images + (copy_image,), d.annotations + copies)
        single = dataset_level_counts(d, AnchorConfig())
        assert dataset_level_counts(doubled, AnchorConfig()).as_list() == [2 * n for n in single.as_list()]

    @pytest.mark.parametrize("seed", range(100))
    def test_matches_brute_force(self, seed):
        d = random_dataset(seed, max_images=8, max_boxes=40)
        assert dataset_level_counts(d, AnchorConfig()).as_list() == brute_force_counts(d, AnchorConfig())

    def test_matches_brute_force_with_zero_overlap(self):
        d = random_dataset(7, max_images=5, max_boxes=60)
        assert (dataset_level_counts(d, AnchorConfig(), include_zero_overlap=True).as_list()
                == brute_force_counts(d, AnchorConfig(), include_zero_overlap=True))

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10_000), st.randoms(use_true_random=False))
    def test_permutation_invariant(self, seed, shuffler):
        d = random_dataset(seed, max_images=6, max_boxes=30)
        images = list(d.images)
        annotations = list(d.annotations)
        shuffler.shuffle(images)
        shuffler.shuffle(annotations)
        shuffled = Dataset(tuple(images), tuple(annotations))
        assert dataset_level_counts(shuffled, AnchorConfig()) == dataset_level_counts(d, AnchorConfig())

    @pytest.mark.parametrize("seed", range(5))
    def test_scale_equivariant(self, seed):
        d = random_dataset(seed, max_images=8, max_boxes=60, min_size=8.0)
        cfg = AnchorConfig()
        assert (dataset_level_counts(scale_dataset(d, 0.25), cfg.scaled(0.25))
                == dataset_level_counts(d, cfg))

    def test_workers_match_serial(self):
        d = random_dataset(11, max_images=12)
        serial = LevelCounter(AnchorConfig()).run(d)
        threaded = LevelCounter(AnchorConfig(), workers=4).run(d)
        assert threaded.counts == serial.counts
        assert threaded.num_objects == serial.num_objects
        assert threaded.anchor_totals == serial.anchor_totals

    def test_pyramid_cache_is_bounded(self):
        images = tuple(ImageRecord(k + 1, 600 + k, 400 + k) for k in range(60))
        counter = LevelCounter(AnchorConfig(), cache_size=4)
        stats = counter.run(Dataset(images, ()))
        assert stats.num_images == 60
        assert counter.cached_pyramids() == 4

    def test_repeated_sizes_reuse_one_pyramid(self):
        counter = LevelCounter(AnchorConfig())
        first = counter.pyramid_for(ImageRecord(1, 64, 48))
        assert counter.pyramid_for(ImageRecord(2, 64, 48)) is first
        assert counter.cached_pyramids() == 1

    def test_statistics_totals(self):
        d = Dataset((ImageRecord(1, 32, 32), ImageRecord(2, 32, 32)),
                    (Annotation(1, 1, BBox(4, 4, 16, 16)), Annotation(2, 2, BBox(900, 900, 4, 4)),
                     Annotation(3, 2, BBox(4, 4, 8, 8), ignore=True)))
        stats = LevelCounter(AnchorConfig()).run(d)
        assert stats.num_images == 2
        assert stats.num_objects == 2
        assert stats.zero_overlap == 1
        assert stats.anchor_totals == [384, 96, 24, 6, 6]


def test_counts_follow_matched_levels():
    pyramid = build_pyramid(AnchorConfig(), 64, 64)
    p2 = pyramid.level_slice(2).start
    p4 = pyramid.level_slice(4).start
    indices = np.array([p2, p2 + 1, p2 + 5, p4, p4 + 2])
    r = MatchResult(anchor_indices=indices, ious=np.full(5, 0.5), zero_overlap=np.zeros(5, dtype=bool))
    assert count_per_level(r, pyramid).as_list() == [3, 0, 2, 0, 0]


@pytest.mark.parametrize("seed", range(10))
def test_counts_cover_every_object_when_zero_overlap_included(seed):
    d = random_dataset(seed, max_images=10, max_boxes=50)
    stats = LevelCounter(AnchorConfig(), include_zero_overlap=True).run(d)
    assert stats.counts.total == d.num_objects


@settings(max_examples=30, deadline=None)
@given(st.lists(boxes, min_size=1, max_size=8))
def test_selected_anchor_has_maximal_iou(gts):
    pyramid = build_pyramid(AnchorConfig(), 48, 40)
    m = iou_matrix(gts, pyramid)
    r = match_gt(m, pyramid)
    assert np.all(r.ious[:, None] >= m)
    assert r.levels.tolist() == pyramid.levels[r.anchor_indices].tolist()
