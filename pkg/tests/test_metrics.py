import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from coupalign.engine.metrics import EvalAccumulator, iou_histogram, success_count
from coupalign.utils.errors import ContractError, InputError


def masks(*cells, shape=(4, 4)):
    out = np.zeros(shape, dtype=np.uint8)
    for r, c in cells:
        out[r, c] = 1
    return out


def test_perfect_and_disjoint():
    gt = masks((0, 0), (1, 1))
    assert EvalAccumulator().accumulate(gt, gt).finalize().mIoU == 1.0
    assert EvalAccumulator().accumulate(masks((3, 3)), gt).finalize().mIoU == 0.0


def test_half_overlap():
    gt = np.zeros((4, 4), dtype=np.uint8)
    gt[:2] = 1
    pred = np.zeros_like(gt)
    pred[0] = 1
    acc = EvalAccumulator().accumulate(pred, gt)
    assert (acc.total_intersection, acc.total_union) == (4, 8)
    assert acc.finalize().mIoU == 0.5


def test_finalize_examples():
    metrics = EvalAccumulator([4, 0], [8, 4]).finalize()
    assert metrics.oIoU == pytest.approx(1 / 3)
    assert metrics.mIoU == pytest.approx(0.25)
    assert metrics.n == 2


def test_precision_thresholds_are_strict():
    metrics = EvalAccumulator([6, 4], [10, 10]).finalize()
    assert (metrics.prec50, metrics.prec70, metrics.prec90) == (0.5, 0.0, 0.0)
    assert EvalAccumulator([5], [10]).finalize().prec50 == 0.0


def test_single_perfect_sample():
    metrics = EvalAccumulator([3], [3]).finalize()
    assert (metrics.oIoU, metrics.mIoU, metrics.prec50, metrics.prec70, metrics.prec90) == (1.0,) * 5


def test_empty_prediction_and_ground_truth():
    empty = np.zeros((3, 3))
    assert EvalAccumulator().accumulate(empty, empty).finalize().mIoU == 1.0
    assert EvalAccumulator().accumulate(masks((0, 0), shape=(3, 3)), empty).finalize().mIoU == 0.0


def test_errors():
    with pytest.raises(ContractError):
        EvalAccumulator().finalize()
    with pytest.raises(InputError):
        EvalAccumulator().accumulate(np.zeros((2, 2)), np.zeros((3, 3)))


def test_histogram_examples():
    assert iou_histogram(EvalAccumulator([1, 9, 9], [20, 20, 10])) == [1, 0, 0, 0, 1]
    assert iou_histogram(EvalAccumulator([1], [10])) == [0, 1, 0, 0, 0]
    assert iou_histogram(EvalAccumulator([5, 9], [10, 10])) == [0, 0, 0, 0, 0]
    assert success_count(EvalAccumulator([1, 5, 9], [20, 10, 10])) == 2


def test_brute_force_oracle():
    rng = np.random.default_rng(0)
    acc = EvalAccumulator()
    inter = union = 0
    ious = []
    for _ in range(100):
        pred, gt = rng.integers(0, 2, (8, 8)), rng.integers(0, 2, (8, 8))
        acc.accumulate(pred, gt)
        i = sum(1 for r in range(8) for c in range(8) if pred[r, c] and gt[r, c])
        u = sum(1 for r in range(8) for c in range(8) if pred[r, c] or gt[r, c])
        inter, union = inter + i, union + u
        ious.append(1.0 if u == 0 else i / u)
    assert (acc.total_intersection, acc.total_union) == (inter, union)
    metrics = acc.finalize()
    assert metrics.oIoU == pytest.approx(inter / union, abs=1e-15)
    assert metrics.mIoU == pytest.approx(np.mean(ious), abs=1e-12)
    assert metrics.prec50 == sum(iou > 0.5 for iou in ious) / 100


pairs = st.lists(st.tuples(st.integers(0, 20), st.integers(0, 20)).map(lambda p: (min(p), max(p))),
                 min_size=1, max_size=30)


@given(pairs)
def test_metric_bounds_and_monotone_precision(counts):
    acc = EvalAccumulator([i for i, _ in counts], [u for _, u in counts])
    metrics = acc.finalize()
    assert 0.0 <= metrics.oIoU <= 1.0
    assert 0.0 <= metrics.mIoU <= 1.0
    assert metrics.prec90 <= metrics.prec70 <= metrics.prec50
    assert sum(iou_histogram(acc)) + success_count(acc) == len(counts)


@given(pairs, pairs, pairs)
def test_merge_is_associative(a, b, c):
    def build(counts):
        return EvalAccumulator([i for i, _ in counts], [u for _, u in counts])

    left = build(a).merge(build(b)).merge(build(c))
    right = build(a).merge(build(b).merge(build(c)))
    assert left.finalize() == right.finalize()
    assert left.total_union == right.total_union
