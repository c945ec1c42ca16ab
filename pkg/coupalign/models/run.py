from sqlalchemy import Column, DateTime, Float, ForeignKey, Integer, String, Text
from sqlalchemy.orm import relationship
from sqlalchemy.sql import func

from coupalign.db.database import Base


class Run(Base):
    __tablename__ = "runs"

    id = Column(Integer, primary_key=True, index=True)
    name = Column(String(200), index=True)
    kind = Column(String(20), default="train")          # train | ablate
    cell = Column(String(200), nullable=True)            # 消融单元格名
    seed = Column(Integer)
    config_hash = Column(String(64), index=True)
    config_text = Column(Text)
    out_dir = Column(String(500))
    data_dir = Column(String(500), nullable=True)
    best_epoch = Column(Integer, nullable=True)
    best_val_oiou = Column(Float, nullable=True)
    test_oiou = Column(Float, nullable=True)
    test_miou = Column(Float, nullable=True)
    test_prec50 = Column(Float, nullable=True)
    created_at = Column(DateTime(timezone=True), server_default=func.now())

    epochs = relationship("EpochRecord", back_populates="run", cascade="all, delete-orphan",
                          order_by="EpochRecord.epoch")


class EpochRecord(Base):
    __tablename__ = "epoch_records"

    id = Column(Integer, primary_key=True, index=True)
    run_id = Column(Integer, ForeignKey("runs.id"), index=True)
    epoch = Column(Integer)
    lr = Column(Float)
    loss_total = Column(Float)
    loss_seg = Column(Float)
    loss_aux = Column(Float)
    val_oiou = Column(Float)
    val_miou = Column(Float)
    val_prec50 = Column(Float)
    val_prec70 = Column(Float)
    val_prec90 = Column(Float)

    run = relationship("Run", back_populates="epochs")
