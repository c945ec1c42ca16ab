"""
统一异常定义

每个异常携带 exit_code，命令行入口据此退出，HTTP 接口据此返回错误响应。
"""
from typing import Optional


class CoupAlignError(Exception):
    """所有业务异常的基类"""

    exit_code: int = 1

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


class ConfigError(CoupAlignError):
    """配置错误"""

    exit_code = 2


class DataError(CoupAlignError):
    """数据错误"""

    exit_code = 3


class InputError(DataError):
    """输入不合法 (词表外的词、越界的 id、非二值掩码等)"""


class FormatError(DataError):
    """CATN 容器格式错误"""

    def __init__(self, detail: str, offset: Optional[int] = None):
        if offset is not None:
            detail = f"{detail} (offset={offset})"
        super().__init__(detail)
        self.offset = offset


class UnsupportedVersionError(FormatError):
    """不支持的容器版本"""


class NumericError(CoupAlignError):
    """数值错误：NaN/Inf 或梯度检验失败"""

    exit_code = 4


class DimensionError(CoupAlignError, ValueError):
    """张量形状不匹配"""


class ContractError(CoupAlignError):
    """违反调用约定"""
