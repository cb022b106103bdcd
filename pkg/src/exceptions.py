"""
异常定义模块

命令行退出码：配置错误 2，数据错误 3，数值错误 4。
"""
from typing import Optional


class InfluenceAttackError(Exception):
    """异常基类"""
    exit_code = 1


class ConfigError(InfluenceAttackError):
    """配置校验异常"""
    exit_code = 2

    def __init__(self, message: str, key: Optional[str] = None):
        super().__init__(message)
        self.key = key


class DataError(InfluenceAttackError):
    """数据异常基类"""
    exit_code = 3


class DatasetSchemaError(DataError):
    """数据集文件格式异常"""

    def __init__(self, message: str, row: Optional[int] = None, column: Optional[str] = None):
        super().__init__(message)
        self.row = row
        self.column = column


class DimensionMismatchError(DataError):
    """维度不一致异常"""
    pass


class EmptyDatasetError(DataError):
    """空数据集异常"""
    pass


class ModelFileError(DataError):
    """模型文件异常"""
    pass


class SplitError(DataError):
    """数据划分异常"""
    pass


class ReportIntegrityError(DataError):
    """报告自洽性校验异常"""
    pass


class NumericalError(InfluenceAttackError):
    """数值计算异常基类"""
    exit_code = 4


class IhvpError(NumericalError):
    """共轭梯度求解未达到精度"""

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class ConvergenceError(NumericalError):
    """训练未收敛"""

    def __init__(self, message: str, grad_norm: float):
        super().__init__(message)
        self.grad_norm = grad_norm


class LpInfeasibleError(NumericalError):
    """线性规划不可行"""

    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual
