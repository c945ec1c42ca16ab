from datetime import datetime
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field


class EpochRecord(BaseModel):
    model_config = ConfigDict(from_attributes=True)

    epoch: int
    lr: float
    loss_total: float
    loss_seg: float
    loss_aux: float
    val_oiou: float
    val_miou: float
    val_prec50: float
    val_prec70: float
    val_prec90: float


class Run(BaseModel):
    model_config = ConfigDict(from_attributes=True)

    id: int
    name: str
    kind: str
    cell: Optional[str] = None
    seed: int
    config_hash: str
    out_dir: str
    data_dir: Optional[str] = None
    best_epoch: Optional[int] = None
    best_val_oiou: Optional[float] = None
    test_oiou: Optional[float] = None
    test_miou: Optional[float] = None
    test_prec50: Optional[float] = None
    created_at: Optional[datetime] = None


class RunDetail(Run):
    config_text: str


class PredictRequest(BaseModel):
    run_id: int
    split: str = Field("val", pattern="^(train|val|test)$")
    index: int = Field(0, ge=0)


class Proposal(BaseModel):
    index: int = Field(..., description="提议编号 n")
    weight: float = Field(..., description="Q_w[n]")


class PredictResponse(BaseModel):
    run_id: int
    split: str
    index: int
    expression: str
    iou: float
    q_w: Optional[list[float]] = None
    top_proposals: list[Proposal] = []
    foreground_pixels: int
