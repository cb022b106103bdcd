"""攻击数据模型"""
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np

from src.models.glm import GlmModel
from src.models.influence import IhvpConfig


class ObjectiveVariant(Enum):
    """攻击目标函数枚举"""
    MAX_TARGET = "max_target"  # 最大化目标样本影响
    MAX_TARGET_MIN_TOP_K = "max_target_min_top_k"  # 同时压低前 k 名影响
    MAX_TARGET_MIN_HIGHER = "max_target_min_higher"  # 同时压低排名更高样本的影响


@dataclass(frozen=True)
class LinearizedObjective:
    """线性化攻击目标，u_z = ∂ℓ/∂I_z（成员集合冻结）"""
    u: np.ndarray

    def __post_init__(self):
        u = np.array(self.u, dtype=float).reshape(-1)
        u.setflags(write=False)
        object.__setattr__(self, 'u', u)

    def value(self, scores: np.ndarray) -> float:
        """uᵀ·scores"""
        return float(self.u @ np.asarray(scores, dtype=float))


@dataclass(frozen=True)
class FrozenAux:
    """反向友好目标的冻结量"""
    v1: np.ndarray  # −Σ 测试梯度
    v2: np.ndarray  # Σ u_z ∇L(z)
    u1: np.ndarray  # (H+λI)⁻¹ v1
    u2: np.ndarray  # (H+λI)⁻¹ v2


@dataclass(frozen=True)
class AttackConfig:
    """目标攻击配置"""
    c: float = 0.5  # 操纵半径 C
    k: int = 10  # 目标排名
    learning_rates: Tuple[float, ...] = (0.01, 0.1)  # Adam 学习率
    steps: int = 100  # 每次运行的更新步数
    num_inits: int = 5  # 随机初始化次数
    init_noise_scale: float = 0.01  # 初始化噪声（相对 ‖θ*‖）
    variant: ObjectiveVariant = ObjectiveVariant.MAX_TARGET_MIN_HIGHER  # 目标函数
    acc_budget: float = 0.03  # 精度差预算
    seed: int = 0  # 随机种子
    relative: bool = True  # 半径是否相对 ‖θ*‖
    threads: int = 1  # 并行运行数
    ihvp: IhvpConfig = field(default_factory=IhvpConfig)  # 求解配置

    def __post_init__(self):
        if not self.c >= 0:
            raise ValueError(f"C 必须 ≥ 0，实际 {self.c}")
        if self.k < 1:
            raise ValueError(f"k 必须 ≥ 1，实际 {self.k}")
        if self.steps < 1:
            raise ValueError(f"steps 必须 ≥ 1，实际 {self.steps}")
        if self.num_inits < 1:
            raise ValueError(f"num_inits 必须 ≥ 1，实际 {self.num_inits}")
        if not self.learning_rates or any(not lr > 0 for lr in self.learning_rates):
            raise ValueError(f"学习率必须为正数: {self.learning_rates}")
        if not 0 <= self.acc_budget <= 1:
            raise ValueError(f"acc_budget 必须位于 [0, 1]，实际 {self.acc_budget}")
        if self.init_noise_scale < 0:
            raise ValueError(f"init_noise_scale 必须 ≥ 0，实际 {self.init_noise_scale}")
        if self.threads < 1:
            raise ValueError(f"threads 必须 ≥ 1，实际 {self.threads}")
        object.__setattr__(self, 'learning_rates', tuple(float(lr) for lr in self.learning_rates))


@dataclass
class AdamState:
    """Adam 优化器状态"""
    m: np.ndarray  # 一阶矩
    v: np.ndarray  # 二阶矩
    t: int = 0  # 步数
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, p: int) -> 'AdamState':
        """创建零状态"""
        return cls(m=np.zeros(p), v=np.zeros(p))

    def step(self, grad: np.ndarray, lr: float) -> np.ndarray:
        """
        计算一步更新量

        Args:
            grad: 梯度
            lr: 学习率

        Returns:
            np.ndarray: 参数增量（已含负号）
        """
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        return -lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class RunFailure:
    """失败的攻击运行"""
    init_index: int
    learning_rate: float
    message: str


@dataclass
class AttackResult:
    """攻击结果（单目标为多目标的特例）"""
    theta_prime: GlmModel  # 选中的操纵模型
    targets: Tuple[int, ...]  # 目标样本下标
    k: int  # 目标排名
    initial_ranks: Tuple[int, ...]  # θ* 下的排名
    final_ranks: Tuple[int, ...]  # θ′ 下的排名
    delta_acc: float  # TestAcc(θ*) − TestAcc(θ′)
    loss_trajectory: List[float]  # 选中运行的逐步攻击损失
    chosen_init: int  # 选中的初始化编号，-1 表示未运行
    chosen_lr: Optional[float]  # 选中的学习率
    budget_theta: Optional[GlmModel] = None  # 精度预算内的最优模型
    budget_final_ranks: Tuple[int, ...] = ()  # 精度预算内的排名
    budget_delta_acc: float = 0.0  # 精度预算内的精度差
    failed_runs: List[RunFailure] = field(default_factory=list)  # 失败的运行

    @property
    def initial_rank(self) -> int:
        """首个目标的初始排名"""
        return self.initial_ranks[0]

    @property
    def final_rank(self) -> int:
        """首个目标的最终排名"""
        return self.final_ranks[0]

    @property
    def num_success(self) -> int:
        """进入前 k 名的目标数"""
        return sum(1 for r in self.final_ranks if r <= self.k)

    @property
    def success(self) -> bool:
        """全部目标进入前 k 名"""
        return self.num_success == len(self.targets)

    @property
    def success_rate(self) -> float:
        """进入前 k 名的目标比例"""
        return self.num_success / len(self.targets)

    @property
    def slot_success_rate(self) -> float:
        """前 k 名中目标占据的名额比例"""
        return self.num_success / min(self.k, len(self.targets))

    @property
    def budget_success_rate(self) -> float:
        """精度预算内进入前 k 名的目标比例"""
        ranks = self.budget_final_ranks or self.final_ranks
        return sum(1 for r in ranks if r <= self.k) / len(self.targets)


@dataclass(frozen=True)
class BaselineConfig:
    """损失重加权基线攻击配置"""
    steps: int = 1400  # 更新步数
    batch_size: int = 256  # 批大小
    learning_rate: float = 0.01  # Adam 学习率
    seed: int = 0  # 随机种子

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError(f"steps 必须 ≥ 1，实际 {self.steps}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size 必须 ≥ 1，实际 {self.batch_size}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate 必须为正数，实际 {self.learning_rate}")


@dataclass
class AttackMetrics:
    """攻击评估指标"""
    final_ranks: Tuple[int, ...]  # 攻击者测试集下的排名
    transfer_ranks: Tuple[int, ...]  # 未知测试集下的排名
    success_rate: float  # 不限精度的成功率
    success_rate_budget: float  # 精度差 ≤ 预算时的成功率
    transfer_success_rate: float  # 迁移成功率
    delta_acc: float  # 未知测试集上的精度差
    influence_grad_norms: Tuple[float, ...]  # θ* 处 ‖∇_θ I(z_target)‖
