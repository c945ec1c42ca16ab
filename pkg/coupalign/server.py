import logging
from contextlib import asynccontextmanager

from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from coupalign.db.database import create_tables, engine
from coupalign.models import EpochRecord, Run  # noqa: F401  注册 ORM 模型
from coupalign.routers import predict, runs
from coupalign.utils.errors import CoupAlignError, NumericError

logger = logging.getLogger(__name__)


@asynccontextmanager
async def lifespan(app: FastAPI):
    try:
        with engine.connect():
            logger.info("数据库连接成功")
        create_tables()
        logger.info("数据库表已就绪")
    except Exception as e:
        logger.error(f"启动错误: {e}")

    yield
    logger.info("应用关闭")


app = FastAPI(
    title="CoupAlign",
    description="指代分割运行记录查询与单样本推理",
    version="1.0.0",
    lifespan=lifespan,
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)


@app.exception_handler(CoupAlignError)
async def coupalign_exception_handler(request: Request, exc: CoupAlignError):
    logger.warning(f"请求失败: {exc.detail}")
    status_code = 500 if isinstance(exc, NumericError) else 422
    return JSONResponse(
        status_code=status_code,
        content={"message": type(exc).__name__, "detail": exc.detail}
    )


@app.exception_handler(Exception)
async def global_exception_handler(request: Request, exc: Exception):
    logger.error(f"Global exception: {exc}")
    return JSONResponse(
        status_code=500,
        content={"message": "服务器内部错误", "detail": str(exc)}
    )


app.include_router(runs.router, prefix="/api/runs", tags=["运行记录"])
app.include_router(predict.router, prefix="/api", tags=["推理"])
