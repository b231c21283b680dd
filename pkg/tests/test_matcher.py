from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from batchmap.ingest import build_det_batch, pad_gt_batch
from batchmap.matcher import categorize, categorize_above, categorize_below, filter_iou, iou_matrix, pairwise_iou
from batchmap.model import CategoryMatrix, ImageDetections, ImageGroundTruth, ValidationError
from batchmap.oracle import SyntheticSpec, generate
from pixel_oracle import pixel_iou


def _batches(gt_boxes, gt_labels, det_boxes, det_labels, scores, difficult=None, discarded=None):
    difficult = difficult or [False] * len(gt_boxes)
    discarded = discarded or [False] * len(det_boxes)
    gt = pad_gt_batch([ImageGroundTruth("x", gt_boxes, gt_labels, difficult)], max(1, len(gt_boxes)), k=3)
    det = build_det_batch([ImageDetections("x", det_boxes, det_labels, scores, discarded)], max(1, len(det_boxes)))
    return det, gt


def _codes(det, gt, t=0.5):
    iou = filter_iou(pairwise_iou(det, gt), det, gt)
    return categorize(iou, det, gt, t).values[0].tolist()


@pytest.mark.parametrize(
    "a, b, expected",
    [
        ((0, 0, 9, 9), (0, 0, 9, 9), Fraction(1)),
        ((0, 0, 9, 9), (5, 0, 14, 9), Fraction(1, 3)),
        ((0, 0, 4, 4), (10, 10, 14, 14), Fraction(0)),
    ],
)
def test_pairwise_iou_examples(a, b, expected):
    assert pixel_iou(a, b) == expected
    det, gt = _batches([b], [0], [a], [0], [0.5])
    assert pairwise_iou(det, gt)[0, 0, 0] == pytest.approx(float(expected), abs=1e-15)


def test_pairwise_iou_shape_and_batch_mismatch():
    ds = generate(SyntheticSpec(seed=1, images=3, gts_per_image=(1, 4), dets_per_gt=(1, 2)))
    det = build_det_batch(ds.detections, 20)
    gt = pad_gt_batch(ds.ground_truth, 4, k=3)
    assert pairwise_iou(det, gt).shape == (3, 20, 4)
    with pytest.raises(ValidationError):
        pairwise_iou(det, pad_gt_batch(ds.ground_truth[:2], 4, k=3))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 63), min_size=8, max_size=8))
def test_iou_matches_pixel_count(c):
    a = (min(c[0], c[2]), min(c[1], c[3]), max(c[0], c[2]), max(c[1], c[3]))
    b = (min(c[4], c[6]), min(c[5], c[7]), max(c[4], c[6]), max(c[5], c[7]))
    got = iou_matrix(np.array([a], float), np.array([b], float))[0, 0]
    assert abs(got - float(pixel_iou(a, b))) <= 1e-12


def test_filter_zeroes_class_mismatch():
    det, gt = _batches([(0, 0, 9, 9)], [1], [(0, 0, 9, 9)], [0], [0.9])
    assert pairwise_iou(det, gt)[0, 0, 0] == 1.0
    assert filter_iou(pairwise_iou(det, gt), det, gt)[0, 0, 0] == 0.0


def test_filter_zeroes_discarded_detection():
    det, gt = _batches([(0, 0, 9, 9)], [0], [(0, 0, 9, 8)], [0], [0.9], discarded=[True])
    assert pairwise_iou(det, gt)[0, 0, 0] == pytest.approx(0.9)
    assert filter_iou(pairwise_iou(det, gt), det, gt)[0, 0, 0] == 0.0


def test_filter_zeroes_padded_slot_even_for_class_zero_at_origin():
    # padded slots are zero boxes at the origin; a class-0 detection there must not match them
    gt = pad_gt_batch([ImageGroundTruth("x", [], [], [])], 2, k=1)
    det = build_det_batch([ImageDetections("x", [(0, 0, 0, 0)], [0], [0.9])], 1)
    assert pairwise_iou(det, gt)[0, 0, 0] == 1.0
    assert not filter_iou(pairwise_iou(det, gt), det, gt).any()


def test_below_threshold_is_false_positive():
    # IoU (0,0,9,9) vs (0,0,9,3): 40/100
    det, gt = _batches([(0, 0, 9, 3)], [0], [(0, 0, 9, 9)], [0], [0.9])
    iou = filter_iou(pairwise_iou(det, gt), det, gt)
    assert iou.max() == pytest.approx(0.4)
    assert categorize_below(iou, det, 0.5).values[0, 0] == 1


def test_discarded_detection_is_ignored():
    det, gt = _batches([(0, 0, 9, 9)], [0], [(0, 0, 9, 9)], [0], [0.9], discarded=[True])
    iou = filter_iou(pairwise_iou(det, gt), det, gt)
    assert categorize_below(iou, det, 0.5).values[0, 0] == 0
    assert _codes(det, gt) == [0]


def test_iou_exactly_at_threshold_is_false_positive():
    # 50 / 100 is exact in binary
    det, gt = _batches([(0, 0, 9, 4)], [0], [(0, 0, 9, 9)], [0], [0.9])
    assert pairwise_iou(det, gt)[0, 0, 0] == 0.5
    assert _codes(det, gt, 0.5) == [1]


def test_duplicate_detection_loses_to_higher_score():
    # listed low score first: sorting must still hand the match to the 0.9 detection
    det, gt = _batches([(0, 0, 9, 9)], [0], [(0, 0, 9, 8), (0, 0, 9, 9)], [0, 0], [0.8, 0.9])
    assert _codes(det, gt) == [1, 2]


def test_detection_matching_difficult_box_is_ignored():
    det, gt = _batches([(0, 0, 9, 9)], [0], [(0, 0, 9, 8)], [0], [0.9], difficult=[True])
    assert _codes(det, gt) == [0]


def test_two_detections_two_boxes_both_true():
    det, gt = _batches(
        [(0, 0, 9, 9), (30, 30, 39, 39)], [0, 0], [(31, 30, 40, 39), (0, 0, 9, 9)], [0, 0], [0.7, 0.6]
    )
    assert _codes(det, gt) == [2, 2]


def test_equal_scores_break_ties_by_slot_index():
    det, gt = _batches([(0, 0, 9, 9)], [0], [(0, 0, 9, 9), (0, 0, 9, 9)], [0, 0], [0.5, 0.5])
    assert _codes(det, gt) == [2, 1]


def test_argmax_ties_pick_first_box():
    det, gt = _batches([(0, 0, 9, 9), (0, 0, 9, 9)], [0, 0], [(0, 0, 9, 9), (0, 0, 9, 9)], [0, 0], [0.9, 0.8])
    # both detections pick box 0; the second does not fall through to box 1
    assert _codes(det, gt) == [2, 1]


def test_sentinel_must_exceed_detection_count():
    det, gt = _batches([(0, 0, 9, 9)], [0], [(0, 0, 9, 9)], [0], [0.9])
    iou = filter_iou(pairwise_iou(det, gt), det, gt)
    d = categorize_below(iou, det, 0.5)
    with pytest.raises(ValidationError):
        categorize_above(d, iou, det, gt, 0.5, sentinel=1)
    out = categorize_above(d, iou, det, gt, 0.5, sentinel=100)
    assert out.values.tolist() == [[2]]


def test_categorize_above_does_not_mutate_input():
    det, gt = _batches([(0, 0, 9, 9)], [0], [(0, 0, 9, 9)], [0], [0.9])
    iou = filter_iou(pairwise_iou(det, gt), det, gt)
    before = iou.copy()
    d = CategoryMatrix(np.zeros((1, 1), dtype=np.int8))
    categorize_above(d, iou, det, gt, 0.5)
    np.testing.assert_array_equal(iou, before)
    assert d.values[0, 0] == 0


def _instance(seed):
    ds = generate(SyntheticSpec(seed=seed, images=3, gts_per_image=(0, 6), dets_per_gt=(0, 4), jitter=4,
                                difficult_prob=0.3, discard_prob=0.2, score_decimals=1, canvas=(80, 80),
                                box_size=(8, 40)))
    m = max(1, max(len(d) for d in ds.detections))
    m_hat = max(1, max(len(g) for g in ds.ground_truth))
    return ds, build_det_batch(ds.detections, m), pad_gt_batch(ds.ground_truth, m_hat, k=3)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_at_most_one_true_positive_per_box(seed):
    _, det, gt = _instance(seed)
    iou = filter_iou(pairwise_iou(det, gt), det, gt)
    d = categorize(iou, det, gt, 0.5).values
    assert (d[det.discard_mask] == 0).all()
    o = np.where(gt.ignore_mask[:, None, :], 0.0, iou)
    target = o.argmax(axis=2)
    for i in range(det.n):
        tps = target[i][d[i] == 2]
        assert len(tps) == len(set(tps.tolist()))
        assert not gt.ignore_mask[i, tps].any()


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), perm_seed=st.integers(0, 1000))
def test_permuting_detections_keeps_score_code_pairs(seed, perm_seed):
    ds, det, gt = _instance(seed)
    iou = filter_iou(pairwise_iou(det, gt), det, gt)
    d = categorize(iou, det, gt, 0.5).values
    rng = np.random.default_rng(perm_seed)
    for i, rec in enumerate(ds.detections):
        p = rng.permutation(len(rec))
        # ties in score are broken by slot index, so only permute within distinct scores
        if len(set(rec.scores)) != len(rec.scores):
            continue
        moved = ImageDetections(rec.image_id, [rec.boxes[j] for j in p], [rec.labels[j] for j in p],
                                [rec.scores[j] for j in p], [rec.discarded[j] for j in p])
        det1 = build_det_batch([moved], det.m)
        gt1 = pad_gt_batch([ds.ground_truth[i]], gt.m_hat, k=3)
        d1 = categorize(filter_iou(pairwise_iou(det1, gt1), det1, gt1), det1, gt1, 0.5).values[0]
        before = sorted(zip(rec.scores, d[i, : len(rec)].tolist()))
        after = sorted(zip(moved.scores, d1[: len(rec)].tolist()))
        assert before == after


def test_no_scale_invariance_claimed():
    a, b = (0, 0, 9, 9), (5, 0, 14, 9)
    scaled = [tuple(2 * v for v in a), tuple(2 * v for v in b)]
    assert pixel_iou(a, b) != pixel_iou(*scaled)
