"""
有限差分梯度检验
"""
import logging
from typing import Callable, Optional

import numpy as np

from coupalign.tensor.core import Tensor, backward, get_tape, no_grad
from coupalign.utils.errors import ContractError, NumericError

logger = logging.getLogger(__name__)


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5, tol: float = 1e-4,
               atol: float = 1e-9, max_coords: Optional[int] = None, seed: int = 0) -> float:
    """
    比较解析梯度与中心差分，返回所有坐标上的最大相对误差
    |a - fd| / max(|a|, |fd|, 1e-8)。

    - 左右单侧差分不一致的坐标视为折点 (如 relu 的 0 点)，不参与比较
    - |a - fd| <= atol 的坐标误差记为 0 (float64 中心差分的舍入下限)
    - max_coords 给定时只抽查部分坐标
    tol 只用于日志，调用方自行判定是否通过。
    """
    if x.dtype != np.float64:
        raise ContractError(f"grad_check: 需要 float64 输入，实际 {x.dtype}")
    get_tape().clear()
    x.data = np.ascontiguousarray(x.data)
    x.requires_grad = True
    x.grad = None
    loss = f(x)
    if loss.data.size != 1:
        raise ContractError(f"grad_check: f 必须返回标量，实际形状 {loss.shape}")
    _ensure_finite(loss, "forward", f, x)
    if loss.requires_grad:
        backward(loss)
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
    base = float(loss.data)

    coords = np.arange(x.data.size)
    if max_coords is not None and max_coords < coords.size:
        coords = np.sort(np.random.default_rng(seed).choice(coords.size, max_coords, replace=False))

    flat = x.data.reshape(-1)
    worst, excluded = 0.0, 0
    for index in coords:
        original = flat[index]
        flat[index] = original + h
        plus = _evaluate(f, x, "f(x+h)")
        flat[index] = original - h
        minus = _evaluate(f, x, "f(x-h)")
        flat[index] = original
        forward_diff = (plus - base) / h
        backward_diff = (base - minus) / h
        if abs(forward_diff - backward_diff) > 1e-3 * max(1.0, abs(forward_diff), abs(backward_diff)):
            excluded += 1
            continue
        fd = (plus - minus) / (2 * h)
        a = float(analytic.reshape(-1)[index])
        diff = abs(a - fd)
        if diff <= atol:
            continue
        worst = max(worst, diff / max(abs(a), abs(fd), 1e-8))
    if excluded:
        logger.debug(f"grad_check: 跳过 {excluded} 个折点坐标")
    if worst >= tol:
        logger.warning(f"grad_check: 最大相对误差 {worst:.3e} 超过阈值 {tol:.0e}")
    return worst


def _evaluate(f: Callable[[Tensor], Tensor], x: Tensor, label: str) -> float:
    with no_grad():
        value = f(x)
    _ensure_finite(value, label, f, x)
    return float(value.data)


def _ensure_finite(value: Tensor, label: str, f: Callable[[Tensor], Tensor], x: Tensor) -> None:
    if not np.all(np.isfinite(value.data)):
        op = _first_non_finite_op(f, x)
        raise NumericError(f"grad_check: {label} 得到非有限值，首个非有限结果来自运算 {op}")


def _first_non_finite_op(f: Callable[[Tensor], Tensor], x: Tensor) -> str:
    """在记录模式下重算一次 f，返回第一个输出非有限的磁带运算名"""
    if not np.all(np.isfinite(x.data)):
        return "<input>"
    tape = get_tape()
    tape.clear()
    try:
        f(x)
        for entry in tape.entries:
            if not np.all(np.isfinite(entry.output.data)):
                return entry.op
        return "<untracked>"
    finally:
        tape.clear()
