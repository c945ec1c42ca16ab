"""
注意力可视化导出：每个词的 WPA 注意力图、Q_w、按权重排序的前 k 个掩码提议与预测图，均为 8 位灰度 PGM
"""
import csv
import logging
from pathlib import Path
from typing import Optional

import numpy as np

from coupalign.data.synth import Sample
from coupalign.data.vocab import WORDS
from coupalign.network.model import CoupAlign
from coupalign.tensor import no_grad, sigmoid

logger = logging.getLogger(__name__)

INDEX_FIELDS = ["file", "kind", "stage", "word", "weight"]


def to_gray(values: np.ndarray, normalize: bool = True) -> np.ndarray:
    """按图最小-最大归一化到 0..255；常数图输出全 0"""
    values = np.asarray(values, dtype=np.float64)
    if normalize:
        low, high = float(values.min()), float(values.max())
        values = (values - low) / (high - low) if high > low else np.zeros_like(values)
    return np.clip(np.rint(values * 255), 0, 255).astype(np.uint8)


def write_pgm(path: Path, values: np.ndarray, normalize: bool = True) -> None:
    gray = to_gray(np.atleast_2d(values), normalize)
    height, width = gray.shape
    Path(path).write_bytes(f"P5\n{width} {height}\n255\n".encode("ascii") + gray.tobytes())


def read_pgm(path: Path) -> np.ndarray:
    payload = Path(path).read_bytes()
    magic, size, maxval, raw = payload.split(b"\n", 3)
    width, height = (int(v) for v in size.split())
    return np.frombuffer(raw, dtype=np.uint8).reshape(height, width)


def export_attention(model: CoupAlign, sample: Sample, out_dir: Path, top_k: int = 3) -> list[dict]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with no_grad():
        prediction = model.predict(sample.image[None], sample.tokens[None], training=False)
    rows: list[dict] = []

    def emit(name: str, values: np.ndarray, kind: str, stage: str = "", word: str = "",
             weight: Optional[float] = None, normalize: bool = True) -> None:
        write_pgm(out_dir / name, values, normalize)
        rows.append({"file": name, "kind": kind, "stage": stage, "word": word,
                     "weight": "" if weight is None else repr(weight)})

    h1 = sample.image.shape[0] // model.patch
    w1 = sample.image.shape[1] // model.patch
    valid = prediction.token_mask[0]
    for stage, attn in sorted(prediction.wpa_attn.items()):
        height, width = h1 // 2 ** (stage - 1), w1 // 2 ** (stage - 1)
        for position in np.flatnonzero(valid):
            word = WORDS[int(sample.tokens[position])]
            label = word.strip("[]").lower()
            emit(f"wpa_stage{stage}_t{position}_{label}.pgm", attn[0, :, position].reshape(height, width),
                 "wpa", str(stage), word)

    if prediction.q_w is not None:
        q_w = prediction.q_w.data[0]
        emit("q_w.pgm", q_w[None, :], "q_w")
        for rank, n in enumerate(np.argsort(-q_w, kind="stable")[:top_k], start=1):
            emit(f"proposal{rank}_n{n}.pgm", prediction.y_n.data[0, n], "proposal", weight=float(q_w[n]))
    emit("prediction.pgm", sigmoid(prediction.logits).data[0], "prediction", normalize=False)
    emit("ground_truth.pgm", sample.mask, "ground_truth", normalize=False)

    with open(out_dir / "index.csv", "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=INDEX_FIELDS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    logger.info(f"已导出 {len(rows)} 张注意力图到 {out_dir} (表达式: {sample.meta.expression!r})")
    return rows
