"""
AdamW (解耦权重衰减) 与多项式学习率衰减
"""
import logging
from typing import Mapping

import numpy as np

from coupalign.config import OptimConfig
from coupalign.tensor import Tensor
from coupalign.utils.errors import DataError, NumericError

logger = logging.getLogger(__name__)


def poly_lr(t: float, optim: OptimConfig) -> float:
    """lr(t) = (lr0 - lr_end)·(1 - t/t_max)^p + lr_end，t >= t_max 时固定为 lr_end"""
    t = min(max(float(t), 0.0), optim.max_decay_epoch)
    return (optim.lr0 - optim.lr_end) * (1.0 - t / optim.max_decay_epoch) ** optim.power + optim.lr_end


class AdamW:
    def __init__(self, params: Mapping[str, Tensor], optim: OptimConfig):
        self.params = dict(params)
        self.beta1 = optim.beta1
        self.beta2 = optim.beta2
        self.eps = optim.eps
        self.weight_decay = optim.weight_decay
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def zero_grad(self) -> None:
        for tensor in self.params.values():
            tensor.grad = None

    def step(self, lr: float) -> None:
        """先检查全部梯度有限再更新，避免部分参数已被修改"""
        for name, tensor in self.params.items():
            if tensor.grad is not None and not np.all(np.isfinite(tensor.grad)):
                raise NumericError(f"参数 {name} 的梯度包含 NaN/Inf")
        self.t += 1
        correction1 = 1.0 - self.beta1 ** self.t
        correction2 = 1.0 - self.beta2 ** self.t
        for name, tensor in self.params.items():
            if tensor.grad is None:
                continue
            g = tensor.grad
            dtype = tensor.data.dtype
            m = self.m.get(name)
            v = self.v.get(name)
            m = (1 - self.beta1) * g if m is None else self.beta1 * m + (1 - self.beta1) * g
            v = (1 - self.beta2) * g * g if v is None else self.beta2 * v + (1 - self.beta2) * g * g
            self.m[name] = m.astype(dtype)
            self.v[name] = v.astype(dtype)
            data = tensor.data * (1.0 - lr * self.weight_decay)
            update = (m / correction1) / (np.sqrt(v / correction2) + self.eps)
            tensor.data = (data - lr * update).astype(dtype)

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {f"adam.m/{name}": value for name, value in self.m.items()}
        state.update({f"adam.v/{name}": value for name, value in self.v.items()})
        state["adam.t"] = np.array(self.t, dtype=np.float64)
        return state

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        self.m, self.v = {}, {}
        for key, value in state.items():
            kind, _, name = key.partition("/")
            if kind not in ("adam.m", "adam.v"):
                continue
            if name not in self.params:
                raise DataError(f"优化器状态包含未知参数: {name}")
            target = self.m if kind == "adam.m" else self.v
            target[name] = np.array(value, dtype=self.params[name].data.dtype)
        self.t = int(state.get("adam.t", 0))
