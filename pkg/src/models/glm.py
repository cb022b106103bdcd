"""广义线性模型数据模型"""
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional

import numpy as np

from src.exceptions import DimensionMismatchError


class StepSchedule(Enum):
    """训练步长策略枚举"""
    BB = "bb"  # Barzilai-Borwein 初始步长 + Armijo 回溯
    CONSTANT = "constant"  # 固定初始步长 + Armijo 回溯


def param_count(num_classes: int, dim: int, has_bias: bool) -> int:
    """
    计算参数个数

    二分类使用单权重向量的约简形式。

    Args:
        num_classes: 类别数
        dim: 特征维度
        has_bias: 是否带偏置

    Returns:
        int: 参数个数 p
    """
    rows = 1 if num_classes == 2 else num_classes
    return rows * (dim + (1 if has_bias else 0))


@dataclass(frozen=True)
class GlmModel:
    """逻辑回归模型（二分类约简形式 / 多分类 softmax）"""
    theta: np.ndarray  # 扁平参数向量：各类权重（按行）后接偏置
    num_classes: int  # 类别数
    dim: int  # 特征维度
    has_bias: bool = True  # 是否带偏置

    def __post_init__(self):
        if self.num_classes < 2:
            raise DimensionMismatchError(f"类别数必须 ≥ 2，实际 {self.num_classes}")
        if self.dim < 1:
            raise DimensionMismatchError(f"特征维度必须 ≥ 1，实际 {self.dim}")
        theta = np.array(self.theta, dtype=float).reshape(-1)
        expected = param_count(self.num_classes, self.dim, self.has_bias)
        if theta.size != expected:
            raise DimensionMismatchError(f"参数长度 {theta.size} 与期望 {expected} 不一致")
        if not np.all(np.isfinite(theta)):
            raise DimensionMismatchError("参数包含非有限值")
        theta.setflags(write=False)
        object.__setattr__(self, 'theta', theta)
        object.__setattr__(self, 'num_classes', int(self.num_classes))
        object.__setattr__(self, 'dim', int(self.dim))
        object.__setattr__(self, 'has_bias', bool(self.has_bias))

    @property
    def p(self) -> int:
        """参数个数"""
        return self.theta.size

    @property
    def is_binary(self) -> bool:
        """是否二分类"""
        return self.num_classes == 2

    @property
    def rows(self) -> int:
        """权重矩阵行数"""
        return 1 if self.is_binary else self.num_classes

    def with_theta(self, theta: np.ndarray) -> 'GlmModel':
        """
        以新参数构造同结构模型

        Args:
            theta: 新参数向量

        Returns:
            GlmModel: 新模型
        """
        return GlmModel(theta=theta, num_classes=self.num_classes, dim=self.dim, has_bias=self.has_bias)

    @classmethod
    def zeros(cls, num_classes: int, dim: int, has_bias: bool = True) -> 'GlmModel':
        """创建全零参数模型"""
        return cls(
            theta=np.zeros(param_count(num_classes, dim, has_bias)),
            num_classes=num_classes,
            dim=dim,
            has_bias=has_bias
        )


@dataclass(frozen=True)
class LossSpec:
    """损失配置"""
    l2_damp: float = 0.01  # Hessian 阻尼 λ_damp
    damp_in_loss: bool = False  # 是否同时在训练损失中加入 (λ/2)‖θ‖²

    def __post_init__(self):
        if not np.isfinite(self.l2_damp) or self.l2_damp < 0:
            raise ValueError(f"l2_damp 必须为非负数，实际 {self.l2_damp}")


@dataclass(frozen=True)
class TrainConfig:
    """ERM 训练配置"""
    max_iters: int = 5000  # 最大迭代次数
    grad_tol: float = 1e-6  # 收敛阈值（梯度二范数）
    step_schedule: StepSchedule = StepSchedule.BB  # 步长策略
    initial_step: float = 1.0  # 初始步长（constant 策略与 BB 首步）
    seed: int = 0  # 随机种子（初始化为零，保留用于记录）
    strict: bool = False  # 未收敛时是否抛出异常

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError(f"max_iters 必须 ≥ 1，实际 {self.max_iters}")
        if not self.grad_tol > 0:
            raise ValueError(f"grad_tol 必须为正数，实际 {self.grad_tol}")
        if not self.initial_step > 0:
            raise ValueError(f"initial_step 必须为正数，实际 {self.initial_step}")


@dataclass
class TrainResult:
    """ERM 训练结果"""
    model: GlmModel  # 训练得到的模型
    converged: bool  # 是否收敛
    grad_norm: float  # 最终梯度二范数
    iterations: int  # 迭代次数
    loss_history: List[float] = field(default_factory=list)  # 每次迭代的损失
    message: Optional[str] = None  # 状态信息
