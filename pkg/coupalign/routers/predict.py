import logging
from functools import lru_cache
from pathlib import Path

import numpy as np
from fastapi import APIRouter, Depends, HTTPException
from sqlalchemy.orm import Session

from coupalign.config import build_run_config, config, parse_config_text
from coupalign.data.store import load_sample, read_manifest
from coupalign.db.database import get_db
from coupalign.engine.metrics import EvalAccumulator
from coupalign.engine.trainer import load_model
from coupalign.network.model import CoupAlign, binarize
from coupalign.routers.runs import get_run_or_404
from coupalign.schemas.run import PredictRequest, PredictResponse, Proposal
from coupalign.tensor import no_grad

logger = logging.getLogger(__name__)

router = APIRouter()


@lru_cache(maxsize=config.model_cache_size)
def load_run_model(run_id: int, config_hash: str, config_text: str, out_dir: str) -> CoupAlign:
    """最近使用的若干个运行的模型常驻内存，超出 MODEL_CACHE_SIZE 时淘汰最久未用的"""
    run = build_run_config(parse_config_text(config_text, f"run {run_id}"))
    model = load_model(run, Path(out_dir) / "best.catn")
    logger.info(f"已加载运行 {run_id} 的模型")
    return model


def _model_for(db_run) -> CoupAlign:
    if not (Path(db_run.out_dir) / "best.catn").is_file():
        raise HTTPException(status_code=404, detail="该运行没有 best.catn 检查点")
    return load_run_model(db_run.id, db_run.config_hash, db_run.config_text, db_run.out_dir)


@router.post("/predict", response_model=PredictResponse)
def predict(request: PredictRequest, db: Session = Depends(get_db)):
    """用运行的最佳检查点预测一个已保存样本"""
    db_run = get_run_or_404(request.run_id, db)
    if not db_run.data_dir:
        raise HTTPException(status_code=404, detail="该运行没有记录数据目录")
    split_dir = Path(db_run.data_dir) / request.split
    count = int(read_manifest(split_dir).get("count", 0))
    if request.index >= count:
        raise HTTPException(status_code=404, detail=f"样本下标越界 (共 {count} 个)")
    sample = load_sample(split_dir, request.index)
    model = _model_for(db_run)
    with no_grad():
        prediction = model.predict(sample.image[None], sample.tokens[None], training=False)
    pred_mask = binarize(prediction.logits.data[0])
    metrics = EvalAccumulator().accumulate(pred_mask, sample.mask).finalize()
    q_w, proposals = None, []
    if prediction.q_w is not None:
        q_w = [float(v) for v in prediction.q_w.data[0]]
        ranked = np.argsort(-prediction.q_w.data[0], kind="stable")[:3]
        proposals = [Proposal(index=int(n), weight=q_w[n]) for n in ranked]
    return PredictResponse(
        run_id=db_run.id,
        split=request.split,
        index=request.index,
        expression=sample.meta.expression,
        iou=metrics.mIoU,
        q_w=q_w,
        top_proposals=proposals,
        foreground_pixels=int(pred_mask.sum()),
    )
