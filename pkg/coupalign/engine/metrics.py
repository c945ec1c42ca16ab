"""
指代分割评估指标：oIoU、mIoU、prec@X 以及失败样本的 IoU 分桶直方图

交集/并集全程用整数计数，比值只在 finalize 时形成；逐样本 IoU 用 Fraction 精确比较阈值。
"""
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from coupalign.schemas.report import EvalMetrics
from coupalign.utils.errors import ContractError, InputError

THRESHOLDS = (Fraction(1, 2), Fraction(7, 10), Fraction(9, 10))
HISTOGRAM_EDGES = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5)


def sample_iou(intersection: int, union: int) -> Fraction:
    # 预测与真值都为空时视为完全匹配
    return Fraction(1) if union == 0 else Fraction(intersection, union)


@dataclass
class EvalAccumulator:
    intersections: list[int] = field(default_factory=list)
    unions: list[int] = field(default_factory=list)

    @property
    def total_intersection(self) -> int:
        return sum(self.intersections)

    @property
    def total_union(self) -> int:
        return sum(self.unions)

    @property
    def per_sample_iou(self) -> list[Fraction]:
        return [sample_iou(i, u) for i, u in zip(self.intersections, self.unions)]

    def __len__(self) -> int:
        return len(self.intersections)

    def accumulate(self, pred: np.ndarray, gt: np.ndarray) -> "EvalAccumulator":
        pred, gt = np.asarray(pred), np.asarray(gt)
        if pred.shape != gt.shape:
            raise InputError(f"预测 {pred.shape} 与真值 {gt.shape} 形状不一致")
        pred, gt = pred.astype(bool), gt.astype(bool)
        self.intersections.append(int(np.count_nonzero(pred & gt)))
        self.unions.append(int(np.count_nonzero(pred | gt)))
        return self

    def accumulate_batch(self, preds: np.ndarray, gts: np.ndarray) -> "EvalAccumulator":
        for pred, gt in zip(preds, gts):
            self.accumulate(pred, gt)
        return self

    def merge(self, other: "EvalAccumulator") -> "EvalAccumulator":
        """合并另一个分片的结果，返回新的累加器"""
        return EvalAccumulator(self.intersections + other.intersections, self.unions + other.unions)

    def finalize(self) -> EvalMetrics:
        if not self.intersections:
            raise ContractError("评估累加器为空")
        ious = self.per_sample_iou
        total_union = self.total_union
        overall = Fraction(1) if total_union == 0 else Fraction(self.total_intersection, total_union)
        precision = [Fraction(sum(1 for iou in ious if iou > eps), len(ious)) for eps in THRESHOLDS]
        return EvalMetrics(
            oIoU=float(overall),
            mIoU=float(sum(ious, Fraction(0)) / len(ious)),
            prec50=float(precision[0]),
            prec70=float(precision[1]),
            prec90=float(precision[2]),
            n=len(ious),
        )


def iou_histogram(acc: EvalAccumulator, edges: Sequence[float] = HISTOGRAM_EDGES) -> list[int]:
    """IoU 低于最后一个边界的失败样本按半开区间 [a, b) 分桶计数"""
    bounds = [Fraction(str(edge)) for edge in edges]
    counts = [0] * (len(bounds) - 1)
    for iou in acc.per_sample_iou:
        for bucket, (low, high) in enumerate(zip(bounds[:-1], bounds[1:])):
            if low <= iou < high:
                counts[bucket] += 1
                break
    return counts


def success_count(acc: EvalAccumulator, threshold: float = 0.5) -> int:
    bound = Fraction(str(threshold))
    return sum(1 for iou in acc.per_sample_iou if iou >= bound)
