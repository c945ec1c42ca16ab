"""
数据集落盘：每个样本一个 CATN 文件 (image / mask / tokens) 加一个 JSON 元信息文件

目录结构：
    {out}/{split}/manifest.txt
    {out}/{split}/samples/{idx}.catn
    {out}/{split}/samples/{idx}.json
"""
import logging
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from coupalign.data.synth import GENERATOR_VERSION, Dataset, Sample
from coupalign.data.vocab import vocab_hash
from coupalign.schemas.sample import SampleMeta
from coupalign.utils.catn import read_catn, write_catn
from coupalign.utils.errors import DataError, FormatError

logger = logging.getLogger(__name__)

MANIFEST = "manifest.txt"


def _manifest_text(dataset: Dataset) -> str:
    height, width = dataset.shape
    lines = {
        "count": len(dataset),
        "split": dataset.split,
        "seed": dataset.seed,
        "height": height,
        "width": width,
        "t_max": len(dataset[0].tokens),
        "vocab_hash": vocab_hash(),
        "generator_version": GENERATOR_VERSION,
    }
    return "".join(f"{key} = {value}\n" for key, value in lines.items())


def read_manifest(path: Path) -> dict[str, str]:
    manifest = Path(path) / MANIFEST
    if not manifest.is_file():
        raise FormatError(f"数据集清单不存在: {manifest}")
    values = {}
    for line in manifest.read_text(encoding="utf-8").splitlines():
        if "=" in line:
            key, value = (part.strip() for part in line.split("=", 1))
            values[key] = value
    return values


def save_dataset(dataset: Dataset, path: Path) -> None:
    if not len(dataset):
        raise DataError("不能保存空数据集")
    path = Path(path)
    samples_dir = path / "samples"
    samples_dir.mkdir(parents=True, exist_ok=True)
    for index, sample in enumerate(dataset.samples):
        write_catn(samples_dir / f"{index}.catn", {
            "image": sample.image,
            "mask": sample.mask.astype(np.float32),
            "tokens": sample.tokens.astype(np.float32),
        })
        (samples_dir / f"{index}.json").write_text(sample.meta.model_dump_json(indent=2), encoding="utf-8")
    (path / MANIFEST).write_text(_manifest_text(dataset), encoding="utf-8")
    logger.info(f"数据集已保存: {path} ({len(dataset)} 个样本)")


def load_sample(path: Path, index: int) -> Sample:
    samples_dir = Path(path) / "samples"
    tensors = read_catn(samples_dir / f"{index}.catn")
    missing = {"image", "mask", "tokens"} - set(tensors)
    if missing:
        raise FormatError(f"样本 {index} 缺少张量 {sorted(missing)}")
    meta_path = samples_dir / f"{index}.json"
    if not meta_path.is_file():
        raise FormatError(f"样本元信息不存在: {meta_path}")
    try:
        meta = SampleMeta.model_validate_json(meta_path.read_text(encoding="utf-8"))
    except ValidationError as e:
        raise FormatError(f"样本元信息无效 {meta_path}: {e}") from e
    return Sample(
        image=tensors["image"],
        tokens=tensors["tokens"].astype(np.int64),
        mask=tensors["mask"].astype(np.uint8),
        meta=meta,
    )


def load_dataset(path: Path) -> Dataset:
    path = Path(path)
    manifest = read_manifest(path)
    if manifest.get("vocab_hash") != vocab_hash():
        raise DataError(f"数据集 {path} 的词表哈希与当前词表不一致")
    if manifest.get("generator_version") != GENERATOR_VERSION:
        logger.warning(f"数据集 {path} 生成器版本 {manifest.get('generator_version')}，当前 {GENERATOR_VERSION}")
    try:
        count = int(manifest["count"])
        seed = int(manifest.get("seed", 0))
    except (KeyError, ValueError):
        raise FormatError(f"数据集清单字段无效: {path / MANIFEST}") from None
    samples = [load_sample(path, index) for index in range(count)]
    return Dataset(samples, seed=seed, split=manifest.get("split", "train"))


def load_split(root: Path, split: str) -> Dataset:
    return load_dataset(Path(root) / split)
