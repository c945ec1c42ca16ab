"""
训练与评估流程

产物 (out_dir 下)：config.resolved.txt、trace.csv、metrics.csv、histogram.csv、best.catn、last.catn
"""
import csv
import logging
import math
from pathlib import Path
from typing import Optional

import numpy as np

from coupalign.config import RunConfig
from coupalign.data.synth import Dataset
from coupalign.engine.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from coupalign.engine.losses import LossReport, aux_loss, seg_loss, total_loss
from coupalign.engine.metrics import EvalAccumulator, iou_histogram, success_count
from coupalign.engine.optim import AdamW, poly_lr
from coupalign.network.model import CoupAlign, binarize
from coupalign.schemas.report import EpochSummary, EvalMetrics, TrainResult
from coupalign.tensor import backward, get_tape, no_grad
from coupalign.utils.errors import NumericError

logger = logging.getLogger(__name__)

TRACE_FIELDS = ["step", "loss_total", "loss_seg", "loss_aux", "lr"]
METRIC_FIELDS = ["split", "oIoU", "mIoU", "prec50", "prec70", "prec90", "n"]
HISTOGRAM_FIELDS = ["split", "0.0-0.1", "0.1-0.2", "0.2-0.3", "0.3-0.4", "0.4-0.5", "success"]
EPOCH_FIELDS = ["epoch"] + METRIC_FIELDS


def metrics_row(split: str, metrics: EvalMetrics) -> dict:
    return {"split": split, **metrics.model_dump()}


def histogram_row(split: str, acc: EvalAccumulator) -> dict:
    counts = iou_histogram(acc)
    row = {"split": split, **dict(zip(HISTOGRAM_FIELDS[1:-1], counts))}
    row["success"] = success_count(acc)
    return row


def write_csv(path: Path, fields: list[str], rows: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def evaluate(model: CoupAlign, dataset: Dataset, batch_size: int = 16) -> EvalAccumulator:
    """评估模式 (BN 使用滑动统计量)，不记录计算图"""
    acc = EvalAccumulator()
    with no_grad():
        for indices in dataset.batches(batch_size):
            images, tokens, masks = dataset.batch(indices)
            prediction = model.predict(images, tokens, training=False)
            acc.accumulate_batch(binarize(prediction.logits.data), masks)
    return acc


class Trainer:
    def __init__(self, run: RunConfig, train_set: Dataset, val_set: Optional[Dataset], out_dir: Path):
        self.run = run
        self.train_set = train_set
        self.val_set = val_set
        self.out_dir = Path(out_dir)
        self.model = CoupAlign(run)
        self.optimizer = AdamW(dict(self.model.store.named_parameters()), run.optim)
        self.batches_per_epoch = math.ceil(len(train_set) / run.schedule.batch_size)
        self.state = Checkpoint(step=0, epoch=0, seed=run.seed, config_hash=run.config_hash())

    @property
    def trace_path(self) -> Path:
        return self.out_dir / "trace.csv"

    def learning_rate(self) -> float:
        return poly_lr(self.state.step / self.batches_per_epoch, self.run.optim)

    def epoch_order(self, epoch: int) -> np.ndarray:
        return np.random.default_rng([self.run.seed, epoch]).permutation(len(self.train_set))

    def compute_loss(self, images: np.ndarray, tokens: np.ndarray, masks: np.ndarray) -> LossReport:
        prediction = self.model.predict(images, tokens, training=True)
        seg = seg_loss(prediction.logits, masks)
        aux = None
        if self.run.aux.enabled:
            aux = aux_loss(prediction.y_1, masks, self.run.loss.tau, self.run.aux.normalize)
        return total_loss(seg, aux, self.run.loss.lam)

    def train_step(self, indices: np.ndarray) -> dict:
        lr = self.learning_rate()
        images, tokens, masks = self.train_set.batch(indices)
        self.optimizer.zero_grad()
        report = self.compute_loss(images, tokens, masks)
        if not report.is_finite():
            get_tape().clear()
            raise NumericError(f"step {self.state.step}: 损失为非有限值 {float(report.total.data)}")
        backward(report.total)
        self.optimizer.step(lr)
        row = {"step": self.state.step, "loss_total": repr(float(report.total.data)),
               "loss_seg": repr(report.seg), "loss_aux": repr(report.aux), "lr": repr(lr)}
        self.state.step += 1
        with open(self.trace_path, "a", newline="", encoding="utf-8") as f:
            csv.DictWriter(f, fieldnames=TRACE_FIELDS, lineterminator="\n").writerow(row)
        return row

    def save(self, name: str) -> Path:
        path = self.out_dir / name
        save_checkpoint(path, self.model.store, self.optimizer, self.state)
        return path

    def _append(self, name: str, fields: list[str], row: dict) -> None:
        with open(self.out_dir / name, "a", newline="", encoding="utf-8") as f:
            csv.DictWriter(f, fieldnames=fields, lineterminator="\n").writerow(row)

    def _truncate(self, name: str, fields: list[str], keep) -> None:
        path = self.out_dir / name
        rows = []
        if path.is_file():
            with open(path, newline="", encoding="utf-8") as f:
                rows = [row for row in csv.DictReader(f) if keep(row)]
        write_csv(path, fields, rows)

    def resume(self, path: Path) -> None:
        """从检查点恢复，trace.csv / metrics.csv 截断到检查点对应的位置"""
        self.state = load_checkpoint(path, self.model.store, self.optimizer, self.run.config_hash())
        self._truncate("trace.csv", TRACE_FIELDS, lambda row: int(row["step"]) < self.state.step)
        self._truncate("metrics.csv", EPOCH_FIELDS, lambda row: int(row["epoch"]) < self.state.epoch)

    def _prepare_outputs(self) -> None:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        (self.out_dir / "config.resolved.txt").write_text(self.run.resolved_text(), encoding="utf-8")
        write_csv(self.trace_path, TRACE_FIELDS, [])
        write_csv(self.out_dir / "metrics.csv", EPOCH_FIELDS, [])

    def train_epoch(self, epoch: int) -> list[dict]:
        order = self.epoch_order(epoch)
        batches = list(self.train_set.batches(self.run.schedule.batch_size, order))
        offset = self.state.step - epoch * self.batches_per_epoch
        rows = []
        for indices in batches[offset:]:
            try:
                rows.append(self.train_step(indices))
            except NumericError:
                # 出错前参数未被修改，保存为最后一个有效检查点
                self.save("last.catn")
                logger.error(f"训练在 step {self.state.step} 出现数值错误，已保存 last.catn")
                raise
        return rows

    def fit(self, resume_from: Optional[Path] = None, test_set: Optional[Dataset] = None) -> TrainResult:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        if resume_from is not None:
            self.resume(resume_from)
            (self.out_dir / "config.resolved.txt").write_text(self.run.resolved_text(), encoding="utf-8")
        else:
            self._prepare_outputs()
        epochs: list[EpochSummary] = []
        for epoch in range(self.state.step // self.batches_per_epoch, self.run.schedule.epochs):
            self.state.epoch = epoch
            rows = self.train_epoch(epoch)
            self.state.epoch = epoch + 1
            summary = self._summarize(epoch, rows)
            epochs.append(summary)
            self._append("metrics.csv", EPOCH_FIELDS, {"epoch": epoch, **metrics_row("val", summary.val)})
            logger.info(f"epoch {epoch + 1}/{self.run.schedule.epochs} 损失 {summary.loss_total:.4f} "
                        f"(seg {summary.loss_seg:.4f}, aux {summary.loss_aux:.4f}) lr {summary.lr:.2e} "
                        f"val oIoU {summary.val.oIoU:.4f} mIoU {summary.val.mIoU:.4f}")
            if summary.val.oIoU > self.state.best_oiou:
                self.state.best_oiou = summary.val.oIoU
                self.state.best_epoch = epoch
                self.save("best.catn")
            self.save("last.catn")
        result = TrainResult(out_dir=str(self.out_dir), best_epoch=self.state.best_epoch,
                             best_val_oiou=self.state.best_oiou, epochs=epochs)
        if test_set is not None and (self.out_dir / "best.catn").is_file():
            best = load_model(self.run, self.out_dir / "best.catn")
            splits = {"test": test_set} if self.val_set is None else {"val": self.val_set, "test": test_set}
            result.test = evaluate_splits(best, splits, self.out_dir / "final", self.run.schedule.batch_size)["test"]
        return result

    def _summarize(self, epoch: int, rows: list[dict]) -> EpochSummary:
        def column(key: str) -> float:
            return float(np.mean([float(row[key]) for row in rows])) if rows else 0.0

        val_set = self.val_set if self.val_set is not None else self.train_set
        acc = evaluate(self.model, val_set, self.run.schedule.batch_size)
        return EpochSummary(epoch=epoch, lr=column("lr"), loss_total=column("loss_total"),
                            loss_seg=column("loss_seg"), loss_aux=column("loss_aux"), val=acc.finalize())


def evaluate_splits(model: CoupAlign, splits: dict[str, Dataset], out_dir: Path,
                    batch_size: int = 16) -> dict[str, EvalMetrics]:
    """评估多个数据划分并写出 metrics.csv 与 histogram.csv"""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    results, metric_rows, histogram_rows = {}, [], []
    for split, dataset in splits.items():
        acc = evaluate(model, dataset, batch_size)
        results[split] = acc.finalize()
        metric_rows.append(metrics_row(split, results[split]))
        histogram_rows.append(histogram_row(split, acc))
        logger.info(f"{split}: oIoU {results[split].oIoU:.4f} mIoU {results[split].mIoU:.4f} "
                    f"prec@0.5 {results[split].prec50:.4f} (n={results[split].n})")
    write_csv(out_dir / "metrics.csv", METRIC_FIELDS, metric_rows)
    write_csv(out_dir / "histogram.csv", HISTOGRAM_FIELDS, histogram_rows)
    return results


def load_model(run: RunConfig, checkpoint: Path) -> CoupAlign:
    model = CoupAlign(run)
    load_checkpoint(checkpoint, model.store)
    return model
