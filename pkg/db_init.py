"""
运行记录数据库初始化脚本
"""
import logging

from sqlalchemy import inspect

logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)

# 导入模型以确保它们被 SQLAlchemy 注册
from coupalign.models.run import EpochRecord, Run  # noqa: E402,F401
from coupalign.db.database import Base, create_tables, engine  # noqa: E402


def check_db_connection() -> bool:
    """检查数据库连接"""
    try:
        with engine.connect():
            logger.info("成功连接到数据库!")
        return True
    except Exception as e:
        logger.error(f"数据库连接失败: {e}")
        return False


def show_db_config():
    from coupalign.config import config
    logger.info(f"数据库配置: {config.database}")


def missing_tables() -> list[str]:
    """返回模型已定义但数据库中不存在的表"""
    existing = set(inspect(engine).get_table_names())
    defined = sorted(Base.metadata.tables)
    logger.info(f"现有数据库表: {sorted(existing)}，模型定义的表: {defined}")
    return [table for table in defined if table not in existing]


def initialize_db() -> bool:
    if not check_db_connection():
        return False
    try:
        missing = missing_tables()
        if missing:
            logger.warning(f"缺失的表: {missing}，开始创建...")
            create_tables()
        remaining = missing_tables()
        if remaining:
            logger.error(f"仍有表未创建: {remaining}")
            return False
        logger.info("所有模型表都已在数据库中创建")
        return True
    except Exception as e:
        logger.error(f"创建表失败: {e}")
        return False


if __name__ == "__main__":
    show_db_config()
    initialize_db()
