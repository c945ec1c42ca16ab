from typing import List

from fastapi import APIRouter, Depends, HTTPException
from sqlalchemy.orm import Session

from coupalign.db.database import get_db
from coupalign.models.run import Run
from coupalign.schemas.run import EpochRecord as EpochSchema
from coupalign.schemas.run import Run as RunSchema
from coupalign.schemas.run import RunDetail

router = APIRouter()


def get_run_or_404(run_id: int, db: Session) -> Run:
    db_run = db.query(Run).filter(Run.id == run_id).first()
    if db_run is None:
        raise HTTPException(status_code=404, detail="运行记录不存在")
    return db_run


@router.get("/", response_model=List[RunSchema])
async def read_runs(skip: int = 0, limit: int = 50, kind: str = None, db: Session = Depends(get_db)):
    """获取运行记录列表，按创建顺序倒序"""
    query = db.query(Run)
    if kind:
        query = query.filter(Run.kind == kind)
    return query.order_by(Run.id.desc()).offset(skip).limit(limit).all()


@router.get("/{run_id}", response_model=RunDetail)
async def read_run(run_id: int, db: Session = Depends(get_db)):
    """获取指定运行记录 (含解析后的配置)"""
    return get_run_or_404(run_id, db)


@router.get("/{run_id}/epochs", response_model=List[EpochSchema])
async def read_run_epochs(run_id: int, db: Session = Depends(get_db)):
    """获取指定运行每个 epoch 的损失与验证指标"""
    return get_run_or_404(run_id, db).epochs
