"""影响函数数据模型"""
from dataclasses import dataclass
from typing import Optional

import numpy as np

from src.exceptions import NumericalError
from src.models.glm import LossSpec


@dataclass(frozen=True)
class IhvpConfig:
    """逆 Hessian 向量积求解配置"""
    l2_damp: float = 0.01  # 阻尼 λ，与 LossSpec.l2_damp 一致
    cg_tol: float = 1e-8  # 相对残差阈值
    cg_max_iter: Optional[int] = None  # 最大迭代次数，为空时取 10·p

    def __post_init__(self):
        if not self.l2_damp >= 0:
            raise ValueError(f"l2_damp 必须为非负数，实际 {self.l2_damp}")
        if not self.cg_tol > 0:
            raise ValueError(f"cg_tol 必须为正数，实际 {self.cg_tol}")
        if self.cg_max_iter is not None and self.cg_max_iter < 1:
            raise ValueError(f"cg_max_iter 必须 ≥ 1，实际 {self.cg_max_iter}")

    @property
    def loss_spec(self) -> LossSpec:
        """对应的损失配置（阻尼只作用于 Hessian）"""
        return LossSpec(l2_damp=self.l2_damp)

    def max_iter_for(self, p: int) -> int:
        """按参数个数确定最大迭代次数"""
        return self.cg_max_iter if self.cg_max_iter is not None else 10 * p

    @classmethod
    def from_loss_spec(cls, spec: LossSpec, cg_tol: float = 1e-8,
                       cg_max_iter: Optional[int] = None) -> 'IhvpConfig':
        """由损失配置构造"""
        return cls(l2_damp=spec.l2_damp, cg_tol=cg_tol, cg_max_iter=cg_max_iter)


@dataclass(frozen=True)
class InfluenceVector:
    """训练样本影响分数，与训练集按下标对齐"""
    scores: np.ndarray

    def __post_init__(self):
        scores = np.array(self.scores, dtype=float).reshape(-1)
        if not np.all(np.isfinite(scores)):
            raise NumericalError("影响分数包含非有限值")
        scores.setflags(write=False)
        object.__setattr__(self, 'scores', scores)

    def __len__(self) -> int:
        return self.scores.size


@dataclass(frozen=True)
class Ranking:
    """影响分数降序排名"""
    permutation: np.ndarray  # 按分数降序排列的训练样本下标
    ranks: np.ndarray  # ranks[i] 为样本 i 的排名（从 1 开始）

    def rank_of(self, index: int) -> int:
        """
        查询样本排名

        Args:
            index: 训练样本下标

        Returns:
            int: 排名（1 为最高）
        """
        if not 0 <= index < self.ranks.size:
            raise ValueError(f"样本下标越界: {index}")
        return int(self.ranks[index])

    def top(self, k: int) -> np.ndarray:
        """前 k 名样本下标"""
        return self.permutation[:k]
