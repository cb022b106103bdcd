"""
攻击目标函数模块

攻击损失定义在影响分数上。每一步先冻结成员集合（排名更高的样本集合或前 k 名），
把损失线性化为 uᵀI，再展开为 v1ᵀ(H+λI)⁻¹v2 并构造反向友好目标
ℓ̄ = v1ᵀu2 + u1ᵀv2 − u1ᵀ(H+λI)u2，其梯度在冻结 u1、u2 时等于链式法则梯度。
"""
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np

from src.core import glm
from src.core.influence import ihvp, sum_test_gradients
from src.models.attack import FrozenAux, LinearizedObjective, ObjectiveVariant
from src.models.dataset import Dataset
from src.models.glm import GlmModel
from src.models.influence import IhvpConfig, InfluenceVector


def _as_scores(scores) -> np.ndarray:
    return np.asarray(scores.scores if isinstance(scores, InfluenceVector) else scores, dtype=float)


def _validate(values: np.ndarray, targets: Sequence[int], k: int) -> Tuple[int, ...]:
    targets = tuple(int(t) for t in targets)
    if not targets:
        raise ValueError("目标集合不能为空")
    n = values.size
    for t in targets:
        if not 0 <= t < n:
            raise ValueError(f"目标下标越界: {t}")
    if k < 1 or k > n:
        raise ValueError(f"k 必须位于 [1, {n}]，实际 {k}")
    return targets


def linearize(scores, targets: Iterable[int], variant: ObjectiveVariant, k: int) -> LinearizedObjective:
    """
    线性化攻击损失

    Args:
        scores: 当前影响分数
        targets: 目标样本下标
        variant: 目标函数
        k: 目标排名

    Returns:
        LinearizedObjective: 系数向量 u，uᵀ·scores 等于攻击损失
    """
    values = _as_scores(scores)
    targets = _validate(values, list(targets), k)
    u = np.zeros(values.size)
    if variant == ObjectiveVariant.MAX_TARGET_MIN_TOP_K:
        top_k = np.argsort(-values, kind='stable')[:k]
    for t in targets:
        u[t] -= 1.0
        if variant == ObjectiveVariant.MAX_TARGET_MIN_TOP_K:
            u[top_k] += 1.0 / k
        elif variant == ObjectiveVariant.MAX_TARGET_MIN_HIGHER:
            higher = np.flatnonzero(values > values[t])
            if higher.size:
                u[higher] += 1.0 / higher.size
    return LinearizedObjective(u)


def attack_loss(scores, targets: Iterable[int], variant: ObjectiveVariant, k: int) -> float:
    """
    攻击损失（多目标为各目标损失之和）

    Args:
        scores: 影响分数
        targets: 目标样本下标
        variant: 目标函数
        k: 目标排名

    Returns:
        float: 损失值，越小攻击越成功
    """
    values = _as_scores(scores)
    return linearize(values, targets, variant, k).value(values)


def build_backward_friendly(model: GlmModel, train: Dataset, test: Dataset, u: np.ndarray,
                            cfg: IhvpConfig, s_test: Optional[np.ndarray] = None) -> Tuple[float, FrozenAux]:
    """
    构造反向友好目标并冻结辅助量

    Args:
        model: 当前模型
        train: 训练集
        test: 测试集
        u: 线性化系数
        cfg: 求解配置
        s_test: 已求得的 (H+λI)⁻¹Σ∇L(z_test)，可省去一次求解

    Returns:
        Tuple[float, FrozenAux]: (ℓ̄ 的值, 冻结量)
    """
    u = np.asarray(u, dtype=float).reshape(-1)
    if u.size != train.n:
        raise ValueError(f"u 长度 {u.size} 与训练样本数 {train.n} 不一致")
    v1 = -sum_test_gradients(model, test)
    u1 = -s_test if s_test is not None else ihvp(model, train, v1, cfg)
    _, v2 = glm.loss_grad_sum(model, train, coef=u)
    u2 = ihvp(model, train, v2, cfg)
    value = float(v1 @ u2 + u1 @ v2 - u1 @ glm.hvp(model, train, u2, cfg.loss_spec))
    return value, FrozenAux(v1=v1, v2=v2, u1=u1, u2=u2)


def grad_backward_friendly(model: GlmModel, train: Dataset, test: Dataset, u: np.ndarray,
                           aux: FrozenAux) -> np.ndarray:
    """
    反向友好目标对参数的梯度（u1、u2 冻结）

    −Σ_test ∇²L·u2 + Σ_z u_z ∇²L_z·u1 − u1ᵀ(∇H)u2，阻尼项梯度为零。
    """
    u = np.asarray(u, dtype=float).reshape(-1)
    from_test = glm.hvp_sum(model, test, aux.u2, coef=np.ones(test.n))
    from_train = glm.hvp_sum(model, train, aux.u1, coef=u)
    third = np.zeros(model.p) if train.is_empty else glm.third_sum(model, train, aux.u1, aux.u2) / train.n
    return -from_test + from_train - third


def influence_grad_norm(model: GlmModel, train: Dataset, test: Dataset, index: int,
                        cfg: IhvpConfig) -> float:
    """
    ‖∇_θ I(z_index, Z_test)‖，用于区分易攻击与难攻击样本

    Args:
        model: 模型
        train: 训练集
        test: 测试集
        index: 训练样本下标
        cfg: 求解配置

    Returns:
        float: 影响梯度范数
    """
    if not 0 <= index < train.n:
        raise ValueError(f"样本下标越界: {index}")
    u = np.zeros(train.n)
    u[index] = 1.0
    _, aux = build_backward_friendly(model, train, test, u, cfg)
    return float(np.linalg.norm(grad_backward_friendly(model, train, test, u, aux)))
