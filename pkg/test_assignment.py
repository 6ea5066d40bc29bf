"""Paired anchor and proposal assignment."""

import math

import pytest
from hypothesis import given, settings, strategies as st

from assignment import (
    AnchorGridSpec,
    AssignmentConfig,
    GroundTruthEntry,
    Label,
    LabelKind,
    assign_anchors,
    assign_proposals,
    generate_anchors,
)
from geometry import BBox, PairedBox, iou

NO_FALLBACK = AssignmentConfig(best_match_fallback=False)


def gt(full, visible, id=0, ignore=False):
    return GroundTruthEntry(pair=PairedBox(BBox(*full), BBox(*visible)), ignore=ignore, id=id)


@st.composite
def int_box(draw, lo=0, hi=32):
    x1, x2 = sorted(draw(st.tuples(st.integers(lo, hi), st.integers(lo, hi))))
    y1, y2 = sorted(draw(st.tuples(st.integers(lo, hi), st.integers(lo, hi))))
    return BBox(x1, y1, x2, y2)


@st.composite
def scenes(draw):
    anchors = draw(st.lists(int_box(), min_size=1, max_size=8))
    gts = []
    for k in range(draw(st.integers(0, 4))):
        full = draw(int_box())
        visible = draw(int_box())
        gts.append(GroundTruthEntry(pair=PairedBox(full, visible), id=k))
    return anchors, gts


class TestGenerateAnchors:
    def test_single_square(self):
        spec = AnchorGridSpec(strides=(4,), scales=(4,), image_size=(4, 4), aspect_ratios=(1.0,))
        assert generate_anchors(spec) == [BBox(0, 0, 4, 4)]

    def test_ratios_share_area(self):
        spec = AnchorGridSpec(strides=(16,), scales=(32,), image_size=(16, 16))
        anchors = generate_anchors(spec)
        assert len(anchors) == 3
        for anchor, ratio in zip(anchors, (0.5, 1.0, 2.0)):
            assert anchor.width * anchor.height == pytest.approx(32 * 32, abs=1e-9)
            assert anchor.width / anchor.height == pytest.approx(ratio)
            assert anchor.center == pytest.approx((8, 8))

    def test_lattice_is_row_major(self):
        spec = AnchorGridSpec(strides=(2,), scales=(1,), image_size=(4, 4), aspect_ratios=(1.0,))
        centers = [a.center for a in generate_anchors(spec)]
        assert centers == [(1, 1), (3, 1), (1, 3), (3, 3)]

    def test_ordering_ratio_then_scale(self):
        spec = AnchorGridSpec(strides=(8,), scales=(2, 4), image_size=(8, 8), aspect_ratios=(1.0, 4.0))
        sizes = [(a.width, a.height) for a in generate_anchors(spec)]
        assert sizes == [(2, 2), (4, 4), (4, 1), (8, 2)]

    def test_scale_by_stride(self):
        spec = AnchorGridSpec(strides=(8,), scales=(2,), image_size=(8, 8),
                              aspect_ratios=(1.0,), scale_by_stride=True)
        assert generate_anchors(spec) == [BBox(-4, -4, 12, 12)]

    @pytest.mark.parametrize("kwargs", [
        {"scales": ()},
        {"aspect_ratios": ()},
        {"strides": (0,)},
        {"scales": (-1,)},
        {"image_size": (0, 10)},
    ])
    def test_invalid_spec(self, kwargs):
        params = {"strides": (8,), "scales": (8,), "image_size": (16, 16)}
        params.update(kwargs)
        with pytest.raises(ValueError):
            AnchorGridSpec(**params)


class TestAssignAnchors:
    def test_anchor_equal_to_full(self):
        g = gt((0, 0, 10, 20), (0, 0, 10, 8), id=7)
        result = assign_anchors([BBox(0, 0, 10, 20)], [g])
        assert result.labels == [Label(LabelKind.POSITIVE, 7)]

    def test_disjoint_anchor_is_negative(self):
        g = gt((0, 0, 10, 20), (0, 0, 10, 8))
        result = assign_anchors([BBox(0, 0, 10, 20), BBox(100, 100, 110, 120)], [g])
        assert result.labels[1] == Label(LabelKind.NEGATIVE)

    def test_good_full_overlap_bad_visible_overlap(self):
        # IoU(A, F) = 150 / 200, IoF(A, V) = 20 / 50
        g = gt((0, 0, 10, 20), (0, 2, 10, 7), id=1)
        anchors = [BBox(0, 0, 10, 20), BBox(0, 5, 10, 20)]
        assert iou(anchors[1], g.pair.full) == pytest.approx(0.75)
        result = assign_anchors(anchors, [g])
        assert result.labels == [Label(LabelKind.POSITIVE, 1), Label(LabelKind.IGNORE)]

    def test_highest_full_iou_wins(self):
        a = gt((0, 0, 10, 20), (0, 0, 10, 20), id=1)
        b = gt((1, 0, 11, 20), (1, 0, 11, 20), id=2)
        cfg = AssignmentConfig(alpha1=0.5, beta1=0.5)
        result = assign_anchors([BBox(1, 0, 11, 20)], [a, b], cfg)
        assert result.labels == [Label(LabelKind.POSITIVE, 2)]

    def test_ties_go_to_lowest_id(self):
        a = gt((0, 0, 10, 20), (0, 0, 10, 20), id=5)
        b = gt((0, 0, 10, 20), (0, 0, 10, 20), id=3)
        result = assign_anchors([BBox(0, 0, 10, 20)], [a, b])
        assert result.labels == [Label(LabelKind.POSITIVE, 3)]

    def test_ignore_gt_gives_ignore_label(self):
        g = gt((0, 0, 10, 20), (0, 0, 10, 20), ignore=True)
        result = assign_anchors([BBox(0, 0, 10, 20)], [g])
        assert result.labels == [Label(LabelKind.IGNORE)]

    def test_no_gts_all_negative(self):
        result = assign_anchors([BBox(0, 0, 1, 1), BBox(3, 3, 5, 5)], [])
        assert result.counts() == {"positive": 0, "negative": 2, "ignore": 0}

    def test_fallback_gives_every_gt_an_anchor(self):
        g = gt((0, 0, 10, 20), (0, 0, 10, 20), id=4)
        anchors = [BBox(0, 0, 10, 12), BBox(50, 50, 60, 60)]
        assert assign_anchors(anchors, [g], NO_FALLBACK).positives() == []
        assert assign_anchors(anchors, [g]).labels[0] == Label(LabelKind.POSITIVE, 4)

    def test_duplicate_gt_ids(self):
        g = gt((0, 0, 10, 20), (0, 0, 10, 20), id=1)
        with pytest.raises(ValueError):
            assign_anchors([BBox(0, 0, 1, 1)], [g, g])

    def test_missing_visible_cannot_qualify(self):
        g = GroundTruthEntry(pair=PairedBox(BBox(0, 0, 10, 20), BBox(0, 0, 10, 20)), visible_missing=True)
        result = assign_anchors([BBox(0, 0, 10, 20)], [g])
        assert result.labels == [Label(LabelKind.IGNORE)]

    @given(scenes(), st.integers(-50, 50), st.integers(-50, 50))
    @settings(deadline=None)
    def test_translation_equivariance(self, scene, dx, dy):
        anchors, gts = scene
        moved_anchors = [a.translate(dx, dy) for a in anchors]
        moved_gts = [GroundTruthEntry(pair=g.pair.translate(dx, dy), id=g.id) for g in gts]
        assert assign_anchors(anchors, gts).labels == assign_anchors(moved_anchors, moved_gts).labels

    @given(scenes(), st.sampled_from([0.25, 0.5, 2.0, 8.0]))
    @settings(deadline=None)
    def test_scale_invariance(self, scene, s):
        anchors, gts = scene
        scaled_anchors = [a.scale(s) for a in anchors]
        scaled_gts = [GroundTruthEntry(pair=g.pair.scale(s), id=g.id) for g in gts]
        assert assign_anchors(anchors, gts).labels == assign_anchors(scaled_anchors, scaled_gts).labels

    @given(scenes(), st.floats(0.4, 1.0), st.floats(0.4, 1.0), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
    @settings(deadline=None)
    def test_raising_thresholds_never_adds_positives(self, scene, a1, a2, b1, b2):
        anchors, gts = scene
        lo = AssignmentConfig(alpha1=min(a1, a2), beta1=min(b1, b2), best_match_fallback=False)
        hi = AssignmentConfig(alpha1=max(a1, a2), beta1=max(b1, b2), best_match_fallback=False)
        assert set(assign_anchors(anchors, gts, hi).positives()) <= set(assign_anchors(anchors, gts, lo).positives())

    @given(scenes())
    @settings(deadline=None)
    def test_zero_beta_is_standard_rpn(self, scene):
        anchors, gts = scene
        cfg = AssignmentConfig(beta1=0.0, best_match_fallback=False)
        labels = assign_anchors(anchors, gts, cfg).labels
        for anchor, label in zip(anchors, labels):
            overlaps = [iou(anchor, g.pair.full) for g in gts]
            best = max(overlaps, default=0.0)
            if gts and best >= cfg.alpha1:
                assert label == Label(LabelKind.POSITIVE, gts[overlaps.index(best)].id)
            elif best < cfg.negative_iou_max:
                assert label.kind is LabelKind.NEGATIVE
            else:
                assert label.kind is LabelKind.IGNORE

    @given(scenes())
    @settings(deadline=None)
    def test_positives_reference_real_gts(self, scene):
        anchors, gts = scene
        result = assign_anchors(anchors, gts)
        assert len(result.labels) == len(anchors)
        ids = {g.id for g in gts if not g.ignore}
        for label in result.labels:
            if label.kind is LabelKind.POSITIVE:
                assert label.gt_id in ids


class TestAssignProposals:
    def test_exact_pair(self):
        g = gt((0, 0, 10, 20), (0, 0, 10, 8), id=2)
        result = assign_proposals([g.pair], [g])
        assert result.labels == [Label(LabelKind.POSITIVE, 2)]

    def test_visible_iou_too_low(self):
        g = gt((0, 0, 10, 10), (0, 0, 10, 10))
        proposal = PairedBox(BBox(0, 0, 10, 6), BBox(0, 0, 10, 3))
        assert iou(proposal.full, g.pair.full) == pytest.approx(0.6)
        assert iou(proposal.visible, g.pair.visible) == pytest.approx(0.3)
        result = assign_proposals([proposal], [g])
        assert result.labels == [Label(LabelKind.IGNORE)]

    def test_disjoint_is_negative(self):
        g = gt((0, 0, 10, 10), (0, 0, 10, 10))
        proposal = PairedBox(BBox(40, 40, 50, 50), BBox(40, 40, 50, 45))
        assert assign_proposals([proposal], [g]).labels == [Label(LabelKind.NEGATIVE)]

    def test_no_fallback_for_proposals(self):
        g = gt((0, 0, 10, 20), (0, 0, 10, 20))
        proposal = PairedBox(BBox(0, 0, 10, 8), BBox(0, 0, 10, 8))
        assert assign_proposals([proposal], [g]).positives() == []

    def test_uses_iou_not_iof_on_visible(self):
        # visible proposal contains V entirely: IoF would be 1, IoU is 0.25
        g = gt((0, 0, 10, 20), (0, 0, 5, 10))
        proposal = PairedBox(BBox(0, 0, 10, 20), BBox(0, 0, 10, 20))
        assert assign_proposals([proposal], [g]).positives() == []


def test_config_validation():
    with pytest.raises(ValueError):
        AssignmentConfig(alpha1=0.2, negative_iou_max=0.3)
    with pytest.raises(ValueError):
        AssignmentConfig(beta2=1.5)
    assert math.isclose(AssignmentConfig().alpha2, 0.5)
