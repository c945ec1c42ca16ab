"""
CATN 张量容器

布局 (小端)：b"CATN" | u32 版本 (1) | u32 张量个数 |
每个张量：u32 名字长度 + UTF-8 名字 | u8 阶数 | 阶数 x u32 维度 | u8 类型 (0=f32, 1=f64) | 原始数据
"""
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from coupalign.utils.errors import FormatError, UnsupportedVersionError

MAGIC = b"CATN"
VERSION = 1
DTYPE_TAGS = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
TAG_OF = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


def encode_catn(tensors: Mapping[str, np.ndarray]) -> bytes:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, value in tensors.items():
        array = np.asarray(value)
        if array.dtype not in TAG_OF:
            array = array.astype(np.float64 if array.dtype.kind == "f" and array.itemsize == 8 else np.float32)
        tag = TAG_OF[array.dtype]
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", array.ndim))
        chunks.append(struct.pack(f"<{array.ndim}I", *array.shape))
        chunks.append(struct.pack("<B", tag))
        chunks.append(np.ascontiguousarray(array, dtype=DTYPE_TAGS[tag]).tobytes())
    return b"".join(chunks)


class _Reader:
    def __init__(self, payload: bytes):
        self.payload = payload
        self.offset = 0

    def take(self, size: int, what: str) -> bytes:
        if self.offset + size > len(self.payload):
            raise FormatError(f"CATN 数据被截断，读取 {what} 需要 {size} 字节", offset=self.offset)
        chunk = self.payload[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str, what: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode_catn(payload: bytes) -> dict[str, np.ndarray]:
    reader = _Reader(payload)
    if reader.take(4, "magic") != MAGIC:
        raise FormatError("CATN magic 不正确", offset=0)
    version, count = reader.unpack("<II", "header")
    if version != VERSION:
        raise UnsupportedVersionError(f"不支持的 CATN 版本 {version}", offset=4)
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (length,) = reader.unpack("<I", "name length")
        start = reader.offset
        try:
            name = reader.take(length, "name").decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("张量名不是合法的 UTF-8", offset=start) from None
        (rank,) = reader.unpack("<B", "rank")
        shape = reader.unpack(f"<{rank}I", "extents")
        tag_offset = reader.offset
        (tag,) = reader.unpack("<B", "dtype")
        if tag not in DTYPE_TAGS:
            raise FormatError(f"未知的数据类型标记 {tag}", offset=tag_offset)
        dtype = DTYPE_TAGS[tag]
        size = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        raw = reader.take(size, f"payload of {name!r}")
        tensors[name] = np.frombuffer(raw, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))
    if reader.offset != len(payload):
        raise FormatError("CATN 末尾存在多余数据", offset=reader.offset)
    return tensors


def write_catn(path: Path, tensors: Mapping[str, np.ndarray]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(encode_catn(tensors))
    tmp.replace(path)


def read_catn(path: Path) -> dict[str, np.ndarray]:
    path = Path(path)
    if not path.is_file():
        raise FormatError(f"CATN 文件不存在: {path}")
    return decode_catn(path.read_bytes())
