"""
参数仓库：按名字登记可训练参数和 buffer

每个参数的初始化随机数由 (seed, 名字) 派生，与构建顺序无关，
因此消融实验中关闭某个组件不会改变其余参数的初始值。
"""
import logging
import zlib
from typing import Iterator, Literal

import numpy as np

from coupalign.tensor import Tensor
from coupalign.utils.errors import ContractError, DataError

logger = logging.getLogger(__name__)

Init = Literal["xavier", "zeros", "ones", "normal"]


class ParamStore:
    def __init__(self, seed: int = 0, dtype=np.float32):
        self.seed = seed
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Tensor] = {}
        self.buffers: dict[str, Tensor] = {}

    def _rng(self, name: str) -> np.random.Generator:
        return np.random.default_rng([self.seed, zlib.crc32(name.encode("utf-8"))])

    def create(self, name: str, shape: tuple, init: Init = "xavier", std: float = 0.02) -> Tensor:
        if name in self.params:
            raise ContractError(f"参数重复登记: {name}")
        if init == "zeros":
            data = np.zeros(shape)
        elif init == "ones":
            data = np.ones(shape)
        elif init == "normal":
            data = self._rng(name).normal(0.0, std, size=shape)
        else:
            fan_in, fan_out = _fans(shape)
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            data = self._rng(name).uniform(-bound, bound, size=shape)
        tensor = Tensor(data.astype(self.dtype), requires_grad=True, name=name)
        self.params[name] = tensor
        return tensor

    def buffer(self, name: str, value: np.ndarray) -> Tensor:
        tensor = Tensor(np.asarray(value, dtype=self.dtype), name=name)
        self.buffers[name] = tensor
        return tensor

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, tensor in self.params.items():
            if name.startswith(prefix):
                yield name, tensor

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name] if name in self.params else self.buffers[name]

    def __len__(self) -> int:
        return len(self.params)

    def count(self) -> int:
        return int(sum(t.data.size for t in self.params.values()))

    def zero_grad(self) -> None:
        for tensor in self.params.values():
            tensor.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: t.data for name, t in self.params.items()}
        state.update({name: t.data for name, t in self.buffers.items()})
        return state

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        expected = set(self.params) | set(self.buffers)
        missing = expected - set(state)
        if strict and missing:
            raise DataError(f"检查点缺少参数: {sorted(missing)[:5]}")
        for name, value in state.items():
            if name not in expected:
                if strict:
                    raise DataError(f"检查点包含未知参数: {name}")
                continue
            target = self[name]
            if tuple(value.shape) != target.shape:
                raise DataError(f"参数 {name} 形状不匹配: {value.shape} 与 {target.shape}")
            target.data = np.array(value, dtype=self.dtype)

    def astype(self, dtype) -> None:
        """原地转换全部参数与 buffer 的精度"""
        self.dtype = np.dtype(dtype)
        for tensor in list(self.params.values()) + list(self.buffers.values()):
            tensor.data = tensor.data.astype(self.dtype)
            tensor.grad = None


def _fans(shape: tuple) -> tuple[int, int]:
    if len(shape) == 1:
        return shape[0], shape[0]
    receptive = int(np.prod(shape[:-2])) if len(shape) > 2 else 1
    return shape[-2] * receptive, shape[-1] * receptive
