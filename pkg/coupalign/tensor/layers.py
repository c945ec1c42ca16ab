"""
神经网络基础算子：线性层、卷积、双线性上采样、归一化

空间张量一律为通道在后的布局 [..., H, W, C]。
"""
import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from coupalign.tensor.core import Tensor, _make, add, matmul
from coupalign.utils.errors import ContractError, DimensionError

logger = logging.getLogger(__name__)

NORM_EPS = 1e-5
BN_MOMENTUM = 0.1


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    out = matmul(x, weight)
    return add(out, bias) if bias is not None else out


def conv2d(x: Tensor, kernel: Tensor, bias: Optional[Tensor] = None,
           stride: int = 1, padding: Optional[int] = None) -> Tensor:
    """互相关卷积 (不翻转卷积核)，x [..., H, W, Cin]，kernel [kh, kw, Cin, Cout]，零填充"""
    kh, kw, c_in, c_out = kernel.shape
    if kh not in (1, 3) or kw not in (1, 3):
        raise ContractError(f"conv2d: 只支持 1x1 或 3x3 卷积核，实际 {kh}x{kw}")
    if x.ndim < 3 or x.shape[-1] != c_in:
        raise DimensionError(f"conv2d: 通道数不匹配 输入 {x.shape} 与卷积核 {kernel.shape}")
    if padding is None:
        padding = (kh - 1) // 2
    lead = x.shape[:-3]
    height, width = x.shape[-3], x.shape[-2]
    flat = x.data.reshape((-1, height, width, c_in))
    padded = np.pad(flat, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    out_h = (height + 2 * padding - kh) // stride + 1
    out_w = (width + 2 * padding - kw) // stride + 1
    windows = sliding_window_view(padded, (kh, kw), axis=(1, 2))[:, ::stride, ::stride][:, :out_h, :out_w]
    out = np.einsum("nhwcij,ijco->nhwo", windows, kernel.data, optimize=True)

    def backward(g):
        g = g.reshape((-1, out_h, out_w, c_out))
        grad_kernel = np.einsum("nhwcij,nhwo->ijco", windows, g, optimize=True)
        grad_padded = np.zeros_like(padded)
        for i in range(kh):
            for j in range(kw):
                rows = slice(i, i + stride * (out_h - 1) + 1, stride)
                cols = slice(j, j + stride * (out_w - 1) + 1, stride)
                grad_padded[:, rows, cols, :] += g @ kernel.data[i, j].T
        grad_x = grad_padded[:, padding:padding + height, padding:padding + width, :]
        return grad_x.reshape(x.shape), grad_kernel

    result = _make("conv2d", out.reshape(lead + (out_h, out_w, c_out)), (x, kernel), backward)
    return add(result, bias) if bias is not None else result


@lru_cache(maxsize=64)
def interpolation_matrix(size: int, factor: int) -> np.ndarray:
    """半像素中心约定的一维线性插值矩阵 [size*factor, size]，越界坐标夹到边界"""
    matrix = np.zeros((size * factor, size))
    for dst in range(size * factor):
        src = min(max((dst + 0.5) / factor - 0.5, 0.0), size - 1.0)
        low = int(np.floor(src))
        high = min(low + 1, size - 1)
        weight = src - low
        matrix[dst, low] += 1.0 - weight
        matrix[dst, high] += weight
    matrix.setflags(write=False)
    return matrix


def bilinear_upsample(x: Tensor, factor: int) -> Tensor:
    """x [..., H, W, C] 放大为 [..., fH, fW, C]"""
    if int(factor) != factor or factor < 1:
        raise ContractError(f"bilinear_upsample: 放大倍数必须是正整数，实际 {factor}")
    factor = int(factor)
    if factor == 1:
        return x
    rows = interpolation_matrix(x.shape[-3], factor).astype(x.dtype)
    cols = interpolation_matrix(x.shape[-2], factor).astype(x.dtype)
    out = np.einsum("yh,...hwc,xw->...yxc", rows, x.data, cols, optimize=True)
    return _make("bilinear_upsample", out, (x,),
                 lambda g: (np.einsum("yh,...yxc,xw->...hwc", rows, g, cols, optimize=True),))


def _normalize(x: np.ndarray, axes: tuple, eps: float):
    mu = x.mean(axis=axes, keepdims=True)
    var = x.var(axis=axes, keepdims=True)
    sigma = np.sqrt(np.maximum(var, eps))
    return (x - mu) / sigma, sigma, var > eps


def _normalize_backward(g_hat: np.ndarray, x_hat: np.ndarray, sigma: np.ndarray,
                        active: np.ndarray, axes: tuple) -> np.ndarray:
    centred = g_hat - g_hat.mean(axis=axes, keepdims=True)
    radial = x_hat * (g_hat * x_hat).mean(axis=axes, keepdims=True)
    return (centred - np.where(active, radial, 0)) / sigma


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = NORM_EPS) -> Tensor:
    """沿最后一维归一化，方差下限 eps"""
    x_hat, sigma, active = _normalize(x.data, (-1,), eps)
    out = x_hat * gamma.data + beta.data
    lead = tuple(range(x.ndim - 1))

    def backward(g):
        grad_x = _normalize_backward(g * gamma.data, x_hat, sigma, active, (-1,))
        return grad_x, np.sum(g * x_hat, axis=lead), np.sum(g, axis=lead)

    return _make("layer_norm", out.astype(x.dtype), (x, gamma, beta), backward)


@dataclass
class BatchNormState:
    """批归一化的滑动统计量，持有参数仓库中的 buffer 张量"""

    running_mean: Tensor
    running_var: Tensor
    momentum: float = BN_MOMENTUM
    warned: bool = False


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState,
               training: bool, eps: float = NORM_EPS) -> Tensor:
    """按通道 (最后一维) 归一化；训练模式用批统计量并更新滑动统计量，评估模式用滑动统计量"""
    axes = tuple(range(x.ndim - 1))
    if not training:
        sigma = np.sqrt(np.maximum(state.running_var.data, eps))
        scale_ = gamma.data / sigma
        out = (x.data - state.running_mean.data) * scale_ + beta.data
        x_hat = (x.data - state.running_mean.data) / sigma
        return _make("batch_norm_eval", out.astype(x.dtype), (x, gamma, beta),
                     lambda g: (g * scale_, np.sum(g * x_hat, axis=axes), np.sum(g, axis=axes)))

    count = int(np.prod([x.shape[a] for a in axes]))
    if count == 1 and not state.warned:
        logger.warning("batch_norm: 训练模式下每个通道只有 1 个样本，输出退化为 beta")
        state.warned = True
    x_hat, sigma, active = _normalize(x.data, axes, eps)
    batch_mean = x.data.mean(axis=axes)
    batch_var = x.data.var(axis=axes) * (count / max(count - 1, 1))
    m = state.momentum
    state.running_mean.data = ((1 - m) * state.running_mean.data + m * batch_mean).astype(state.running_mean.dtype)
    state.running_var.data = ((1 - m) * state.running_var.data + m * batch_var).astype(state.running_var.dtype)
    out = x_hat * gamma.data + beta.data

    def backward(g):
        grad_x = _normalize_backward(g * gamma.data, x_hat, sigma, active, axes)
        return grad_x, np.sum(g * x_hat, axis=axes), np.sum(g, axis=axes)

    return _make("batch_norm", out.astype(x.dtype), (x, gamma, beta), backward)
