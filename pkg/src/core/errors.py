"""
异常定义
"""
from typing import Optional


class AutobidError(Exception):
    """所有自动出价相关错误的基类"""


class InvalidRateError(AutobidError, ValueError):
    """概率值不在 [0, 1] 区间"""


class EmptySampleError(AutobidError, ValueError):
    """样本为空"""


class UndefinedBidError(AutobidError, ValueError):
    """p + q = 0 时出价公式无定义"""


class SingularDenominatorError(AutobidError, ValueError):
    """联合出价 A 项分母 4·λa·λb − 1 接近 0"""


class ConfigError(AutobidError, ValueError):
    """实验配置错误"""


class OracleLimitError(AutobidError, ValueError):
    """穷举校验器规模超限"""


class DatasetError(AutobidError, ValueError):
    """数据集解析错误，携带出错的文件行号"""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"第 {line} 行: {message}"
        super().__init__(message)
