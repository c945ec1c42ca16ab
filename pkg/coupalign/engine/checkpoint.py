"""
训练检查点：参数、BN 滑动统计量、AdamW 动量、步数与随机状态、配置哈希，全部存入一个 CATN 文件

随机状态即 (seed, step)：每个 epoch 的打乱顺序由 default_rng([seed, epoch]) 生成。
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from coupalign.engine.optim import AdamW
from coupalign.network.params import ParamStore
from coupalign.utils.catn import read_catn, write_catn
from coupalign.utils.errors import DataError

logger = logging.getLogger(__name__)

PARAM, BUFFER, META = "param/", "buffer/", "meta/"


@dataclass
class Checkpoint:
    step: int
    epoch: int
    seed: int
    config_hash: str
    best_oiou: float = -1.0
    best_epoch: int = -1


def _hash_bytes(config_hash: str) -> np.ndarray:
    return np.frombuffer(bytes.fromhex(config_hash), dtype=np.uint8).astype(np.float64)


# 种子按 8 个小端字节逐字节存放，f64 只能精确表示 2**53 以内的整数
def _seed_bytes(seed: int) -> np.ndarray:
    return np.frombuffer(seed.to_bytes(8, "little"), dtype=np.uint8).astype(np.float64)


def _bytes_seed(values: np.ndarray) -> int:
    return int.from_bytes(bytes(values.astype(np.uint8)), "little")


def save_checkpoint(path: Path, store: ParamStore, optimizer: Optional[AdamW], state: Checkpoint) -> None:
    tensors: dict[str, np.ndarray] = {}
    tensors.update({PARAM + name: t.data for name, t in store.params.items()})
    tensors.update({BUFFER + name: t.data for name, t in store.buffers.items()})
    if optimizer is not None:
        tensors.update(optimizer.state_dict())
    tensors[META + "step"] = np.array(state.step, dtype=np.float64)
    tensors[META + "epoch"] = np.array(state.epoch, dtype=np.float64)
    tensors[META + "seed_bytes"] = _seed_bytes(state.seed)
    tensors[META + "best_oiou"] = np.array(state.best_oiou, dtype=np.float64)
    tensors[META + "best_epoch"] = np.array(state.best_epoch, dtype=np.float64)
    tensors[META + "config_sha256"] = _hash_bytes(state.config_hash)
    write_catn(path, tensors)
    logger.debug(f"检查点已保存: {path} (step={state.step})")


def load_checkpoint(path: Path, store: ParamStore, optimizer: Optional[AdamW] = None,
                    expected_hash: Optional[str] = None) -> Checkpoint:
    tensors = read_catn(path)
    try:
        digest = bytes(tensors[META + "config_sha256"].astype(np.uint8)).hex()
        state = Checkpoint(
            step=int(tensors[META + "step"]),
            epoch=int(tensors[META + "epoch"]),
            seed=_bytes_seed(tensors[META + "seed_bytes"]),
            config_hash=digest,
            best_oiou=float(tensors[META + "best_oiou"]),
            best_epoch=int(tensors[META + "best_epoch"]),
        )
    except KeyError as e:
        raise DataError(f"检查点 {path} 缺少字段 {e}") from None
    if expected_hash is not None and digest != expected_hash:
        raise DataError(f"检查点 {path} 的配置哈希与当前配置不一致")
    weights = {name[len(PARAM):]: value for name, value in tensors.items() if name.startswith(PARAM)}
    weights.update({name[len(BUFFER):]: value for name, value in tensors.items() if name.startswith(BUFFER)})
    store.load_state_dict(weights)
    if optimizer is not None:
        optimizer.load_state_dict({k: v for k, v in tensors.items() if k.startswith("adam.")})
    logger.info(f"已加载检查点 {path} (step={state.step}, epoch={state.epoch})")
    return state
