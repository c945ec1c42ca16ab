from typing import Optional

from pydantic import BaseModel, Field


class EvalMetrics(BaseModel):
    """一个数据划分上的评估指标"""
    oIoU: float = Field(..., ge=0, le=1, description="总交集 / 总并集")
    mIoU: float = Field(..., ge=0, le=1, description="逐样本 IoU 的平均")
    prec50: float = Field(..., ge=0, le=1)
    prec70: float = Field(..., ge=0, le=1)
    prec90: float = Field(..., ge=0, le=1)
    n: int = Field(..., ge=1)


class EpochSummary(BaseModel):
    """一个训练 epoch 的汇总"""
    epoch: int
    lr: float
    loss_total: float
    loss_seg: float
    loss_aux: float
    val: EvalMetrics


class TrainResult(BaseModel):
    out_dir: str
    best_epoch: int
    best_val_oiou: float
    epochs: list[EpochSummary] = []
    test: Optional[EvalMetrics] = None


class GradCheckRow(BaseModel):
    name: str
    seed: int
    error: float
    passed: bool
