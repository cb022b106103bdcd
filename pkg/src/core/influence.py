"""
影响函数计算模块

逆 Hessian 向量积使用共轭梯度（scipy.sparse.linalg.cg）在 glm.hvp 之上矩阵无关地求解。
影响分数 I(z) = −∇L(Z_test)ᵀ(H+λI)⁻¹∇L(z)，对测试集梯度之和只做一次求解。
"""
from typing import Tuple

import numpy as np
from loguru import logger
from scipy.sparse.linalg import LinearOperator, cg
from scipy.stats import spearmanr

from src.core import glm
from src.exceptions import IhvpError, NumericalError
from src.models.dataset import Dataset
from src.models.glm import GlmModel
from src.models.influence import IhvpConfig, InfluenceVector, Ranking

# 内部求解比校验阈值更严格，留出递推残差与真实残差之间的余量
_INNER_TOL_FACTOR = 0.1


def _residual(model: GlmModel, train: Dataset, x: np.ndarray, v: np.ndarray, cfg: IhvpConfig) -> float:
    return float(np.linalg.norm(glm.hvp(model, train, x, cfg.loss_spec) - v))


def ihvp(model: GlmModel, train: Dataset, v: np.ndarray, cfg: IhvpConfig) -> np.ndarray:
    """
    求解 (H + λI)x = v

    Args:
        model: 模型
        train: 训练集（定义 H）
        v: 右端向量
        cfg: 求解配置

    Returns:
        np.ndarray: 满足 ‖(H+λI)x − v‖ ≤ cg_tol·‖v‖ 的解

    Raises:
        IhvpError: 达到最大迭代次数仍未满足精度
    """
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.size != model.p:
        raise NumericalError(f"右端向量长度 {v.size} 与参数个数 {model.p} 不一致")
    v_norm = float(np.linalg.norm(v))
    if v_norm == 0.0:
        return np.zeros(model.p)
    if train.is_empty:
        if cfg.l2_damp <= 0:
            raise IhvpError("训练集为空且阻尼为零，Hessian 奇异", residual=v_norm, iterations=0)
        return v / cfg.l2_damp

    spec = cfg.loss_spec
    operator = LinearOperator(
        shape=(model.p, model.p),
        matvec=lambda x: glm.hvp(model, train, x, spec),
        dtype=float
    )
    max_iter = cfg.max_iter_for(model.p)
    threshold = cfg.cg_tol * v_norm
    iterations = [0]

    def _count(_):
        iterations[0] += 1

    x, _ = cg(operator, v, rtol=cfg.cg_tol * _INNER_TOL_FACTOR, atol=0.0,
              maxiter=max_iter, callback=_count)
    residual = _residual(model, train, x, v, cfg)
    if residual > threshold:
        # 以当前解为初值重启一次，修正递推残差漂移
        logger.debug(f"CG 残差 {residual:.3e} 超出阈值 {threshold:.3e}，重启求解")
        x, _ = cg(operator, v, x0=x, rtol=cfg.cg_tol * _INNER_TOL_FACTOR, atol=0.0,
                  maxiter=max_iter, callback=_count)
        residual = _residual(model, train, x, v, cfg)
    if residual > threshold or not np.all(np.isfinite(x)):
        raise IhvpError(
            f"共轭梯度未达到精度: 残差 {residual:.3e} > {threshold:.3e}",
            residual=residual,
            iterations=iterations[0]
        )
    return x


def sum_test_gradients(model: GlmModel, test: Dataset) -> np.ndarray:
    """测试集逐样本梯度之和 Σ∇L(z_test)"""
    _, g = glm.loss_grad_sum(model, test, coef=np.ones(test.n))
    return g


def influence_pair(model: GlmModel, z_train: Dataset, z_test: Dataset, train: Dataset,
                   cfg: IhvpConfig) -> float:
    """
    单个训练样本对单个测试样本的影响 −∇L(z_test)ᵀ(H+λI)⁻¹∇L(z)

    Args:
        model: 模型
        z_train: 单样本训练数据
        z_test: 单样本测试数据
        train: 训练集（定义 H）
        cfg: 求解配置

    Returns:
        float: 影响值
    """
    if z_train.n != 1 or z_test.n != 1:
        raise ValueError("influence_pair 需要单样本的训练与测试数据")
    grad_train = glm.per_sample_grads(model, z_train)[0]
    grad_test = glm.per_sample_grads(model, z_test)[0]
    return -float(grad_test @ ihvp(model, train, grad_train, cfg))


def influence_set(model: GlmModel, train: Dataset, test: Dataset, cfg: IhvpConfig) -> InfluenceVector:
    """
    训练样本对整个测试集的影响

    只做一次求解 s_test = (H+λI)⁻¹Σ∇L(z_test)，再对每个训练样本取内积。

    Args:
        model: 模型
        train: 训练集
        test: 测试集
        cfg: 求解配置

    Returns:
        InfluenceVector: 与训练集对齐的影响分数
    """
    if test.is_empty:
        return InfluenceVector(np.zeros(train.n))
    s_test = ihvp(model, train, sum_test_gradients(model, test), cfg)
    return InfluenceVector(-glm.per_sample_grad_dot(model, train, s_test))


def influence_with_solution(model: GlmModel, train: Dataset, test: Dataset,
                            cfg: IhvpConfig) -> Tuple[InfluenceVector, np.ndarray]:
    """
    计算影响分数并返回 s_test（供目标函数复用）

    Returns:
        Tuple[InfluenceVector, np.ndarray]: (影响分数, s_test)
    """
    if test.is_empty:
        return InfluenceVector(np.zeros(train.n)), np.zeros(model.p)
    s_test = ihvp(model, train, sum_test_gradients(model, test), cfg)
    return InfluenceVector(-glm.per_sample_grad_dot(model, train, s_test)), s_test


def rank(scores: InfluenceVector) -> Ranking:
    """
    影响分数降序排名，分数相同按下标升序

    Args:
        scores: 影响分数

    Returns:
        Ranking: 排名
    """
    values = np.asarray(scores.scores if isinstance(scores, InfluenceVector) else scores, dtype=float)
    if not np.all(np.isfinite(values)):
        raise NumericalError("影响分数包含非有限值，无法排名")
    permutation = np.argsort(-values, kind='stable')
    ranks = np.empty(values.size, dtype=np.int64)
    ranks[permutation] = np.arange(1, values.size + 1)
    return Ranking(permutation=permutation, ranks=ranks)


def rank_of(scores: InfluenceVector, target_idx: int) -> int:
    """
    查询样本排名（从 1 开始）

    与 rank() 的排列一致：分数更高的样本数，加上分数相同且下标更小的样本数，再加 1。
    """
    values = np.asarray(scores.scores if isinstance(scores, InfluenceVector) else scores, dtype=float)
    if not 0 <= target_idx < values.size:
        raise ValueError(f"样本下标越界: {target_idx}")
    if not np.all(np.isfinite(values)):
        raise NumericalError("影响分数包含非有限值，无法排名")
    target = values[target_idx]
    higher = int(np.sum(values > target))
    tied_before = int(np.sum(values[:target_idx] == target))
    return higher + tied_before + 1


def rank_correlation(a: InfluenceVector, b: InfluenceVector) -> float:
    """两组影响分数的 Spearman 秩相关系数"""
    if len(a) != len(b):
        raise ValueError("两组影响分数长度不一致")
    if len(a) < 2:
        return 1.0
    result = spearmanr(a.scores, b.scores)
    value = float(result.statistic if hasattr(result, 'statistic') else result[0])
    # 常数序列时相关系数未定义
    return value if np.isfinite(value) else 0.0


def top_k_overlap(a: InfluenceVector, b: InfluenceVector, k: int) -> float:
    """两组影响分数前 k 名的重合比例"""
    if k < 1:
        raise ValueError(f"k 必须 ≥ 1，实际 {k}")
    k = min(k, len(a))
    if k == 0:
        return 1.0
    top_a = set(rank(a).top(k).tolist())
    top_b = set(rank(b).top(k).tolist())
    return len(top_a & top_b) / k
