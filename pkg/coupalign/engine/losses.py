"""
损失函数：分割 BCE + 像素-原型对比 InfoNCE 辅助损失

L = 1/B Σ_j (L_seg_j + λ L_aux_j)
"""
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from coupalign.tensor import (
    Tensor,
    concat,
    getitem,
    l2_normalize,
    logsumexp,
    matmul,
    mean,
    mul,
    reshape,
    scale,
    softplus,
    stack,
    sub,
    tsum,
    transpose,
)
from coupalign.utils.errors import DimensionError, InputError

logger = logging.getLogger(__name__)


def _check_mask(mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask)
    if not np.all((mask == 0) | (mask == 1)):
        raise InputError(f"真值掩码必须是 0/1，实际取值 {np.unique(mask)[:5]}")
    return mask


def seg_loss(logits: Tensor, mask: np.ndarray) -> Tensor:
    """逐图像的平均二元交叉熵，logits [B, H, W]，返回 [B]

    BCE(x, y) = softplus(x) - y·x，等价于 -y·log σ(x) - (1-y)·log(1-σ(x))
    """
    mask = _check_mask(mask)
    if mask.shape != logits.shape:
        raise DimensionError(f"seg_loss: 预测 {logits.shape} 与掩码 {mask.shape} 形状不一致")
    target = Tensor(mask.astype(logits.dtype))
    per_pixel = sub(softplus(logits), mul(logits, target))
    return mean(per_pixel, axis=(1, 2))


def downsample_mask(mask: np.ndarray, height: int, width: int) -> np.ndarray:
    """最近邻缩放：目标像素 (i, j) 取源像素 floor((i + 0.5) * H / h)"""
    src_h, src_w = mask.shape[-2:]
    rows = np.minimum(((np.arange(height) + 0.5) * src_h / height).astype(np.int64), src_h - 1)
    cols = np.minimum(((np.arange(width) + 0.5) * src_w / width).astype(np.int64), src_w - 1)
    return mask[..., rows[:, None], cols[None, :]]


def _prototype_nce(anchors: Tensor, prototype: Tensor, distractors: Tensor, tau: float) -> Tensor:
    """-1/|A| Σ_i log[exp(a_i·p/τ) / (exp(a_i·p/τ) + Σ_k exp(a_i·d_k/τ))]"""
    same = matmul(anchors, reshape(prototype, (-1, 1)))
    opposite = matmul(anchors, transpose(distractors))
    logits = scale(concat([same, opposite], axis=1), 1.0 / tau)
    return mean(sub(logsumexp(logits, axis=1), reshape(scale(same, 1.0 / tau), (-1,))))


def aux_loss_single(y_1: Tensor, mask: np.ndarray, tau: float, normalize: bool = True) -> Optional[Tensor]:
    """单张图像的辅助损失 L_P2N + L_N2P；前景或背景为空时返回 None"""
    height, width, channels = y_1.shape
    small = downsample_mask(mask, height, width).reshape(-1).astype(bool)
    positives, negatives = np.flatnonzero(small), np.flatnonzero(~small)
    if not positives.size or not negatives.size:
        return None
    pixels = reshape(y_1, (height * width, channels))
    pos, neg = getitem(pixels, positives), getitem(pixels, negatives)
    proto_pos = l2_normalize(mean(pos, axis=0)) if normalize else mean(pos, axis=0)
    proto_neg = l2_normalize(mean(neg, axis=0)) if normalize else mean(neg, axis=0)
    if normalize:
        pos, neg = l2_normalize(pos), l2_normalize(neg)
    p2n = _prototype_nce(pos, proto_pos, neg, tau)
    n2p = _prototype_nce(neg, proto_neg, pos, tau)
    return p2n + n2p


def aux_loss(y_1: Tensor, mask: np.ndarray, tau: float = 0.07, normalize: bool = True) -> Tensor:
    """逐图像辅助损失，y_1 [B, h, w, d_s]，mask [B, H, W]，返回 [B]"""
    mask = _check_mask(mask)
    if mask.ndim != 3 or mask.shape[0] != y_1.shape[0]:
        raise DimensionError(f"aux_loss: Y_1 {y_1.shape} 与掩码 {mask.shape} 批大小不一致")
    per_image = []
    for index in range(y_1.shape[0]):
        value = aux_loss_single(y_1[index], mask[index], tau, normalize)
        if value is None:
            logger.debug(f"aux_loss: 第 {index} 张图像前景或背景为空，跳过")
            value = Tensor(np.zeros((), dtype=y_1.dtype))
        per_image.append(value)
    return stack(per_image)


@dataclass
class LossReport:
    total: Tensor
    seg: float
    aux: float
    lam: float
    per_image_seg: list[float] = field(default_factory=list)
    per_image_aux: list[float] = field(default_factory=list)

    @property
    def batch_size(self) -> int:
        return len(self.per_image_seg)

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.total.data).all())


def total_loss(seg: Tensor, aux: Optional[Tensor], lam: float) -> LossReport:
    """L_total = mean_j(L_seg_j + λ L_aux_j)；aux 为 None 时等价于 λ = 0"""
    if aux is None or lam == 0:
        combined = seg
        aux_values = np.zeros(seg.shape[0]) if aux is None else aux.data
    else:
        combined = seg + scale(aux, lam)
        aux_values = aux.data
    total = scale(tsum(combined), 1.0 / seg.shape[0])
    return LossReport(
        total=total,
        seg=float(np.mean(seg.data)),
        aux=float(np.mean(aux_values)),
        lam=lam,
        per_image_seg=[float(v) for v in seg.data],
        per_image_aux=[float(v) for v in aux_values],
    )
