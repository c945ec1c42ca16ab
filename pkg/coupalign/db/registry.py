"""
运行记录：把训练/消融结果写入数据库
"""
import logging
from typing import Optional

from sqlalchemy.orm import Session

from coupalign.config import RunConfig
from coupalign.models.run import EpochRecord, Run
from coupalign.schemas.report import TrainResult

logger = logging.getLogger(__name__)


def record_run(db: Session, run: RunConfig, result: TrainResult, name: str, kind: str = "train",
               cell: Optional[str] = None, data_dir: Optional[str] = None) -> Run:
    db_run = Run(
        name=name,
        kind=kind,
        cell=cell,
        seed=run.seed,
        config_hash=run.config_hash(),
        config_text=run.resolved_text(),
        out_dir=result.out_dir,
        data_dir=data_dir,
        best_epoch=result.best_epoch,
        best_val_oiou=result.best_val_oiou,
    )
    if result.test is not None:
        db_run.test_oiou = result.test.oIoU
        db_run.test_miou = result.test.mIoU
        db_run.test_prec50 = result.test.prec50
    for summary in result.epochs:
        db_run.epochs.append(EpochRecord(
            epoch=summary.epoch,
            lr=summary.lr,
            loss_total=summary.loss_total,
            loss_seg=summary.loss_seg,
            loss_aux=summary.loss_aux,
            val_oiou=summary.val.oIoU,
            val_miou=summary.val.mIoU,
            val_prec50=summary.val.prec50,
            val_prec70=summary.val.prec70,
            val_prec90=summary.val.prec90,
        ))
    db.add(db_run)
    db.commit()
    db.refresh(db_run)
    logger.info(f"运行记录已保存: id={db_run.id} name={name}")
    return db_run
