from typing import Literal, Optional

from pydantic import BaseModel, Field


class ObjectMeta(BaseModel):
    """场景中的一个物体"""
    shape: Literal["circle", "square", "triangle"]
    color: str
    size: Literal["small", "big"]
    cx: float = Field(..., description="中心 x (像素)")
    cy: float = Field(..., description="中心 y (像素)")
    radius: float = Field(..., gt=0, description="外接半径 (像素)")


class SampleMeta(BaseModel):
    """样本元信息：场景物体、指代表达式与被指物体"""
    index: int
    split: str = "train"
    expression: str
    template: Literal["attr", "ordinal", "extreme"]
    referent: int = Field(..., description="被指物体在 objects 中的下标 (即绘制顺序)")
    objects: list[ObjectMeta]
    visible_pixels: int = Field(..., ge=0, description="被指物体可见像素数")
    retries: Optional[int] = 0
