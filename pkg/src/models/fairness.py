"""公平性重加权数据模型"""
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np


class SolverStatus(Enum):
    """线性规划求解状态"""
    OPTIMAL = "optimal"  # 最优
    INFEASIBLE = "infeasible"  # 不可行


class SolverPath(Enum):
    """线性规划求解路径"""
    DUAL_SEARCH = "dual_search"  # 对偶搜索
    SIMPLEX = "simplex"  # 单纯形（HiGHS 对偶单纯形）


class ReweighProblem(Enum):
    """重加权问题"""
    BASIC = "basic"
    ADVANCED = "advanced"


class WeightMode(Enum):
    """下游样本权重约定"""
    KEEP = "keep"  # 权重 1 − w_i（w_i 为移除比例）
    DIRECT = "direct"  # 权重 w_i


# 命名数据集预设：(ℓ2 正则, β, γ, 特征维度)
FAIRNESS_PRESETS: Dict[str, Tuple[float, float, float, int]] = {
    "adult": (2.26, 0.8, 0.3, 102),
    "compas": (37.00, 0.3, 0.1, 433),
    "german": (5.85, 0.5, 0.0, 56),
}


@dataclass(frozen=True)
class FairnessConfig:
    """公平性流程配置"""
    beta: float = 0.5
    gamma: float = 0.0
    l2_reg: float = 0.01  # 基础/下游模型 ℓ2 正则
    solver_tol: float = 1e-8  # 可行性容差
    surrogate_temperature: float = 1.0  # 软 DP 的 sigmoid 温度
    problem: ReweighProblem = ReweighProblem.ADVANCED
    weight_mode: WeightMode = WeightMode.KEEP
    acc_budget: float = 0.03  # 成功判定的精度差预算
    strict_lp: bool = False  # 线性规划不可行时抛出异常（该行记为失败）

    def __post_init__(self):
        if not 0 <= self.beta <= 1:
            raise ValueError(f"beta 必须位于 [0, 1]，实际 {self.beta}")
        if not 0 <= self.gamma <= 1:
            raise ValueError(f"gamma 必须位于 [0, 1]，实际 {self.gamma}")
        if not self.l2_reg >= 0:
            raise ValueError(f"l2_reg 必须 ≥ 0，实际 {self.l2_reg}")
        if not self.solver_tol > 0:
            raise ValueError(f"solver_tol 必须为正数，实际 {self.solver_tol}")
        if not self.surrogate_temperature > 0:
            raise ValueError(f"surrogate_temperature 必须为正数，实际 {self.surrogate_temperature}")

    @classmethod
    def from_preset(cls, name: str, **overrides) -> 'FairnessConfig':
        """按命名数据集预设构造"""
        if name not in FAIRNESS_PRESETS:
            raise ValueError(f"未知的公平性预设: {name}")
        l2_reg, beta, gamma, _ = FAIRNESS_PRESETS[name]
        params = dict(l2_reg=l2_reg, beta=beta, gamma=gamma)
        params.update(overrides)
        return cls(**params)


@dataclass
class ReweighWeights:
    """重加权线性规划解"""
    w: np.ndarray  # 每个样本的权重 w_i ∈ [0, 1]
    status: SolverStatus  # 求解状态
    objective: float  # Σ w_i
    residuals: Tuple[float, float]  # 两条约束的违反量
    path: Optional[SolverPath] = None  # 求解路径
    certificate_residual: float = 0.0  # 不可行时的最小约束违反量

    @property
    def is_optimal(self) -> bool:
        """是否求得最优解"""
        return self.status == SolverStatus.OPTIMAL


@dataclass
class DpReport:
    """人口统计均等评估"""
    dp_gap: float  # |rate₀ − rate₁|
    group_positive_rates: Tuple[float, float]  # 两组正预测率
    accuracy: float  # 准确率


@dataclass
class FairnessRow:
    """公平性攻击评估的一行（一个缩放系数）"""
    lam: float  # 缩放系数
    dp_gap: Optional[float]  # 下游模型 DP 差
    accuracy: Optional[float]  # 下游模型准确率
    group_positive_rates: Optional[Tuple[float, float]]  # 两组正预测率
    base_accuracy: Optional[float]  # 缩放后基础模型准确率
    solver_status: Optional[str]  # 线性规划状态
    solver_path: Optional[str]  # 求解路径
    objective: Optional[float]  # Σ w_i
    success: bool = False  # 是否攻击成功
    error: Optional[str] = None  # 失败信息


@dataclass
class FairnessReport:
    """公平性攻击评估报告"""
    rows: List[FairnessRow] = field(default_factory=list)

    @property
    def any_success(self) -> bool:
        """是否存在成功的缩放系数"""
        return any(row.success for row in self.rows)
