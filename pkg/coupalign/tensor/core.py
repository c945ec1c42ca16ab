"""
稠密张量与反向模式自动微分

Tensor 包装一个 numpy 数组；所有可微运算在当前线程的 Tape 上按执行顺序记录，
backward() 按记录的逆序回放每个运算的反向规则。
"""
import logging
import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Iterator, Optional, Sequence, Union

import numpy as np

from coupalign.utils.errors import ContractError, DimensionError, NumericError

logger = logging.getLogger(__name__)

ArrayLike = Union["Tensor", np.ndarray, float, int]
BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

EPS_NORM = 1e-12

_state = threading.local()


def get_default_dtype() -> np.dtype:
    return getattr(_state, "dtype", np.dtype(np.float32))


def set_default_dtype(dtype) -> None:
    """设置新建张量的默认精度 (训练用 float32，梯度检验用 float64)"""
    _state.dtype = np.dtype(dtype)


@contextmanager
def default_dtype(dtype) -> Iterator[None]:
    previous = get_default_dtype()
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


def is_grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """在该上下文内不记录任何运算"""
    previous = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


@dataclass
class TapeEntry:
    op: str
    inputs: tuple
    output: "Tensor"
    backward: BackwardFn


class Tape:
    """按拓扑顺序记录的运算列表，每个线程一条"""

    def __init__(self):
        self.entries: list[TapeEntry] = []

    def __len__(self) -> int:
        return len(self.entries)

    def record(self, op: str, inputs: tuple, output: "Tensor", backward: BackwardFn) -> None:
        output._node = len(self.entries)
        self.entries.append(TapeEntry(op, inputs, output, backward))

    def clear(self) -> None:
        for entry in self.entries:
            entry.output._node = None
        self.entries.clear()


def get_tape() -> Tape:
    tape = getattr(_state, "tape", None)
    if tape is None:
        tape = Tape()
        _state.tape = tape
    return tape


class Tensor:
    """带可选梯度缓冲区的稠密实数数组"""

    __slots__ = ("data", "requires_grad", "grad", "name", "_node")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None, dtype=None):
        array = np.asarray(data)
        if dtype is not None:
            array = array.astype(dtype, copy=False)
        elif not np.issubdtype(array.dtype, np.floating):
            array = array.astype(get_default_dtype())
        self.data: np.ndarray = array
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._node: Optional[int] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item: 只有单元素张量可以转换为标量，实际形状 {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label}, requires_grad={self.requires_grad})"

    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __neg__(self): return neg(self)
    def __matmul__(self, other): return matmul(self, other)
    def __getitem__(self, index): return getitem(self, index)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        return transpose(self, axes if axes else None)

    def swapaxes(self, a: int, b: int) -> "Tensor":
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return transpose(self, tuple(axes))

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis, keepdims)


def as_tensor(value: ArrayLike, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None and np.isscalar(value) else None
    return Tensor(value, dtype=dtype)


def _make(op: str, data: np.ndarray, inputs: tuple, backward_fn: BackwardFn) -> Tensor:
    out = Tensor(data, dtype=data.dtype)
    if is_grad_enabled() and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        get_tape().record(op, inputs, out, backward_fn)
    return out


def unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """把广播后的梯度求和回原始形状"""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: 形状不匹配 {a.shape} 与 {b.shape}") from None


# ---- 逐元素二元运算 ----

def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast("add", a, b)
    return _make("add", a.data + b.data, (a, b),
                 lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)))


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast("sub", a, b)
    return _make("sub", a.data - b.data, (a, b),
                 lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)))


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast("mul", a, b)
    return _make("mul", a.data * b.data, (a, b),
                 lambda g: (unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)))


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast("div", a, b)
    out = a.data / b.data
    return _make("div", out, (a, b),
                 lambda g: (unbroadcast(g / b.data, a.shape), unbroadcast(-g * out / b.data, b.shape)))


def _pair(a: ArrayLike, b: ArrayLike) -> tuple:
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    b = as_tensor(b)
    return as_tensor(a, like=b), b


def neg(x: Tensor) -> Tensor:
    return _make("neg", -x.data, (x,), lambda g: (-g,))


def scale(x: Tensor, factor: float) -> Tensor:
    return _make("scale", x.data * factor, (x,), lambda g: (g * factor,))


# ---- 线性代数与形状变换 ----

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """(批量) 矩阵乘法，a [..., m, k] · b [..., k, n]"""
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: 形状不匹配 {a.shape} 与 {b.shape}")
    try:
        out = a.data @ b.data
    except ValueError:
        raise DimensionError(f"matmul: 批量维度不匹配 {a.shape} 与 {b.shape}") from None

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)

    return _make("matmul", out, (a, b), backward)


def reshape(x: Tensor, shape: tuple) -> Tensor:
    original = x.shape
    return _make("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(original),))


def transpose(x: Tensor, axes: Optional[tuple] = None) -> Tensor:
    axes = tuple(range(x.ndim))[::-1] if axes is None else tuple(a % x.ndim for a in axes)
    inverse = tuple(np.argsort(axes))
    return _make("transpose", np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inverse),))


def getitem(x: Tensor, index) -> Tensor:
    out = np.array(x.data[index], copy=True)

    def backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        return (full,)

    return _make("getitem", out, (x,), backward)


def take(table: Tensor, ids: np.ndarray) -> Tensor:
    """按行查表 (嵌入查找)"""
    ids = np.asarray(ids)

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        return (full,)

    return _make("take", table.data[ids], (table,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ndim = tensors[0].ndim
    axis = axis % ndim
    for t in tensors[1:]:
        other = [s for i, s in enumerate(t.shape) if i != axis]
        first = [s for i, s in enumerate(tensors[0].shape) if i != axis]
        if t.ndim != ndim or other != first:
            raise DimensionError(f"concat: 非拼接维度不一致 {tensors[0].shape} 与 {t.shape}")
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    return _make("concat", out, tuple(tensors), lambda g: tuple(np.split(g, sizes, axis=axis)))


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    expanded = []
    for t in tensors:
        t = as_tensor(t)
        shape = list(t.shape)
        shape.insert(axis % (t.ndim + 1), 1)
        expanded.append(reshape(t, tuple(shape)))
    return concat(expanded, axis=axis)


# ---- 归约 ----

def _expand_grad(g: np.ndarray, shape: tuple, axis, keepdims: bool) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(np.reshape(g, (1,) * len(shape)), shape)
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    if not keepdims:
        g = np.expand_dims(g, tuple(a % len(shape) for a in axes))
    return np.broadcast_to(g, shape)


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = np.sum(x.data, axis=axis, keepdims=keepdims)
    return _make("sum", np.asarray(out), (x,),
                 lambda g: (np.array(_expand_grad(g, x.shape, axis, keepdims)),))


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = x.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([x.shape[a] for a in axes]))
    return scale(tsum(x, axis, keepdims), 1.0 / count)


# ---- 逐元素一元运算 ----

def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _make("exp", out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    return _make("log", np.log(x.data), (x,), lambda g: (g / x.data,))


def relu(x: Tensor) -> Tensor:
    # x == 0 处的梯度取 0
    return _make("relu", np.maximum(x.data, 0), (x,), lambda g: (g * (x.data > 0),))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _make("tanh", out, (x,), lambda g: (g * (1 - out * out),))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return np.exp(-np.logaddexp(0, -z))


def sigmoid(x: Tensor) -> Tensor:
    out = _sigmoid(x.data)
    return _make("sigmoid", out, (x,), lambda g: (g * out * (1 - out),))


def softplus(x: Tensor) -> Tensor:
    """log(1 + e^x)，数值稳定"""
    return _make("softplus", np.logaddexp(0, x.data), (x,), lambda g: (g * _sigmoid(x.data),))


def softmax(x: Tensor, axis: int = -1, mask: Optional[np.ndarray] = None) -> Tensor:
    """减去最大值后的 softmax；mask 为 False 的位置权重严格为 0"""
    z = x.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), z.shape)
        z = np.where(mask, z, -np.inf)
    peak = np.max(z, axis=axis, keepdims=True)
    peak = np.where(np.isfinite(peak), peak, 0)
    e = np.exp(z - peak)
    total = e.sum(axis=axis, keepdims=True)
    if np.any(total == 0):
        raise ContractError("softmax: 存在所有位置都被屏蔽的切片")
    out = e / total

    def backward(g):
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)

    return _make("softmax", out, (x,), backward)


def logsumexp(x: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    peak = np.max(x.data, axis=axis, keepdims=True)
    shifted = np.exp(x.data - peak)
    total = shifted.sum(axis=axis, keepdims=True)
    out = peak + np.log(total)
    weights = shifted / total
    result = out if keepdims else np.squeeze(out, axis=axis)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * weights,)

    return _make("logsumexp", result, (x,), backward)


def l2_normalize(x: Tensor, axis: int = -1, eps: float = EPS_NORM) -> Tensor:
    """x / max(||x||_2, eps)"""
    norm = np.sqrt(np.sum(x.data * x.data, axis=axis, keepdims=True))
    denom = np.maximum(norm, eps)
    out = x.data / denom
    active = norm > eps

    def backward(g):
        radial = np.sum(g * out, axis=axis, keepdims=True)
        return (np.where(active, (g - out * radial) / denom, g / denom),)

    return _make("l2_normalize", out, (x,), backward)


# ---- 反向传播 ----

def backward(loss: Tensor) -> None:
    """从标量 loss 反向传播，把梯度累加到所有 requires_grad 的叶子张量并清空 tape"""
    if loss.data.size != 1:
        raise ContractError(f"backward: loss 必须是标量，实际形状 {loss.shape}")
    tape = get_tape()
    if loss._node is None or not len(tape):
        raise ContractError("backward: tape 为空或 loss 不在 tape 上")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    touched: dict[int, Tensor] = {}
    for entry in reversed(tape.entries[: loss._node + 1]):
        g = grads.pop(id(entry.output), None)
        if g is None:
            continue
        for tensor, grad in zip(entry.inputs, entry.backward(g)):
            if grad is None or not tensor.requires_grad:
                continue
            grad = np.asarray(grad, dtype=tensor.data.dtype)
            if tensor._node is None:
                tensor.grad = grad.copy() if tensor.grad is None else tensor.grad + grad
                touched[id(tensor)] = tensor
            elif id(tensor) in grads:
                grads[id(tensor)] = grads[id(tensor)] + grad
            else:
                grads[id(tensor)] = grad
    tape.clear()

    for tensor in touched.values():
        if not np.all(np.isfinite(tensor.grad)):
            label = tensor.name or repr(tensor)
            raise NumericError(f"反向传播得到非有限梯度: {label}")
