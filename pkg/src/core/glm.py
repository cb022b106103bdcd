"""
逻辑回归闭式计算模块

损失、梯度、Hessian 向量积与三阶导数收缩均在 margin 空间计算后映射回参数空间，
不显式构造 Hessian。二分类使用 σ(m) 形式的约简参数，多分类使用 softmax。
损失按 Σ w_i·L_i / n 归一化，Hessian 同样取加权均值再加 λI。
"""
from typing import Optional, Tuple

import numpy as np
from loguru import logger
from scipy.special import expit, log_softmax, logsumexp, softmax

from src.exceptions import (
    ConvergenceError, DatasetSchemaError, DimensionMismatchError, EmptyDatasetError
)
from src.models.dataset import Dataset
from src.models.glm import GlmModel, LossSpec, StepSchedule, TrainConfig, TrainResult

ARMIJO_C = 1e-4
MIN_STEP = 1e-20


def _check_data(model: GlmModel, data: Dataset) -> None:
    if data.dim != model.dim:
        raise DimensionMismatchError(f"数据维度 {data.dim} 与模型维度 {model.dim} 不一致")
    if data.num_classes != model.num_classes:
        raise DimensionMismatchError(f"数据类别数 {data.num_classes} 与模型类别数 {model.num_classes} 不一致")


def _check_vector(model: GlmModel, v: np.ndarray, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.size != model.p:
        raise DimensionMismatchError(f"{name} 长度 {v.size} 与参数个数 {model.p} 不一致")
    return v


def _check_coef(data: Dataset, coef: Optional[np.ndarray]) -> np.ndarray:
    if coef is None:
        return data.weights
    coef = np.asarray(coef, dtype=float).reshape(-1)
    if coef.size != data.n:
        raise DimensionMismatchError(f"系数长度 {coef.size} 与样本数 {data.n} 不一致")
    return coef


def augment(features: np.ndarray, has_bias: bool) -> np.ndarray:
    """特征矩阵追加常数列（带偏置时）"""
    if not has_bias:
        return np.asarray(features, dtype=float)
    return np.hstack([features, np.ones((features.shape[0], 1))])


def to_matrix(model: GlmModel, theta: np.ndarray) -> np.ndarray:
    """
    参数向量转增广权重矩阵 [W, b]

    Args:
        model: 模型（提供结构）
        theta: 参数向量

    Returns:
        np.ndarray: rows × (d + has_bias) 矩阵
    """
    rows, d = model.rows, model.dim
    weights = theta[:rows * d].reshape(rows, d)
    if not model.has_bias:
        return weights
    return np.hstack([weights, theta[rows * d:].reshape(rows, 1)])


def to_theta(model: GlmModel, matrix: np.ndarray) -> np.ndarray:
    """增广权重矩阵转参数向量（to_matrix 的逆映射）"""
    d = model.dim
    if not model.has_bias:
        return matrix[:, :d].reshape(-1)
    return np.concatenate([matrix[:, :d].reshape(-1), matrix[:, d]])


def _margins(model: GlmModel, xa: np.ndarray, theta: Optional[np.ndarray] = None) -> np.ndarray:
    matrix = to_matrix(model, model.theta if theta is None else theta)
    scores = xa @ matrix.T
    return scores[:, 0] if model.is_binary else scores


def class_scores(model: GlmModel, features: np.ndarray) -> np.ndarray:
    """
    计算各类别得分

    二分类返回 [0, m] 两列，使 argmax 与 σ(m) > 0.5 一致。

    Args:
        model: 模型
        features: n×d 特征矩阵

    Returns:
        np.ndarray: n×C 得分矩阵
    """
    features = np.asarray(features, dtype=float)
    if features.ndim != 2 or features.shape[1] != model.dim:
        raise DimensionMismatchError(f"特征形状 {features.shape} 与模型维度 {model.dim} 不一致")
    margins = _margins(model, augment(features, model.has_bias))
    if model.is_binary:
        return np.column_stack([np.zeros_like(margins), margins])
    return margins


def predict(model: GlmModel, data: Dataset) -> np.ndarray:
    """预测类别，得分相同时取较小的类别编号"""
    _check_data(model, data)
    return np.argmax(class_scores(model, data.features), axis=1)


def per_sample_loss(model: GlmModel, data: Dataset) -> np.ndarray:
    """逐样本交叉熵（不含权重与阻尼）"""
    _check_data(model, data)
    margins = _margins(model, augment(data.features, model.has_bias))
    if model.is_binary:
        return np.logaddexp(0.0, margins) - data.labels * margins
    return -log_softmax(margins, axis=1)[np.arange(data.n), data.labels]


def _margin_grad(model: GlmModel, data: Dataset, margins: np.ndarray) -> np.ndarray:
    if model.is_binary:
        return expit(margins) - data.labels
    probs = softmax(margins, axis=1)
    probs[np.arange(data.n), data.labels] -= 1.0
    return probs


def per_sample_grads(model: GlmModel, data: Dataset) -> np.ndarray:
    """
    逐样本损失梯度

    Args:
        model: 模型
        data: 数据集

    Returns:
        np.ndarray: n×p 梯度矩阵
    """
    _check_data(model, data)
    xa = augment(data.features, model.has_bias)
    g = _margin_grad(model, data, _margins(model, xa))
    if model.is_binary:
        return g[:, None] * xa
    outer = g[:, :, None] * xa[:, None, :]
    d = model.dim
    parts = [outer[:, :, :d].reshape(data.n, -1)]
    if model.has_bias:
        parts.append(outer[:, :, d])
    return np.hstack(parts)


def per_sample_grad_dot(model: GlmModel, data: Dataset, vector: np.ndarray) -> np.ndarray:
    """
    逐样本梯度与给定向量的内积 ∇L(z_i)ᵀvector，不构造 n×p 梯度矩阵

    Args:
        model: 模型
        data: 数据集
        vector: 参数空间向量

    Returns:
        np.ndarray: 长度 n 的内积
    """
    _check_data(model, data)
    vector = _check_vector(model, vector, "vector")
    if data.is_empty:
        return np.zeros(0)
    xa = augment(data.features, model.has_bias)
    g = _margin_grad(model, data, _margins(model, xa))
    projected = xa @ to_matrix(model, vector).T
    if model.is_binary:
        return g * projected[:, 0]
    return (g * projected).sum(axis=1)


def loss_grad_sum(model: GlmModel, data: Dataset, coef: Optional[np.ndarray] = None,
                  theta: Optional[np.ndarray] = None) -> Tuple[float, np.ndarray]:
    """
    系数加权的损失与梯度之和（不归一化，不含阻尼）

    Args:
        model: 模型
        data: 数据集
        coef: 每个样本的系数，为空时使用样本权重
        theta: 替代参数，为空时使用 model.theta

    Returns:
        Tuple[float, np.ndarray]: (Σ c_i L_i, Σ c_i ∇L_i)
    """
    _check_data(model, data)
    coef = _check_coef(data, coef)
    theta = model.theta if theta is None else theta
    if data.is_empty:
        return 0.0, np.zeros(model.p)
    xa = augment(data.features, model.has_bias)
    margins = _margins(model, xa, theta)
    if model.is_binary:
        losses = np.logaddexp(0.0, margins) - data.labels * margins
        g = coef * (expit(margins) - data.labels)
        return float(coef @ losses), g @ xa
    rows = np.arange(data.n)
    losses = logsumexp(margins, axis=1) - margins[rows, data.labels]
    g = softmax(margins, axis=1)
    g[rows, data.labels] -= 1.0
    return float(coef @ losses), to_theta(model, (coef[:, None] * g).T @ xa)


def hvp_sum(model: GlmModel, data: Dataset, v: np.ndarray, coef: Optional[np.ndarray] = None,
            theta: Optional[np.ndarray] = None) -> np.ndarray:
    """
    系数加权的 Hessian 向量积之和 Σ c_i ∇²L_i v（不归一化，不含阻尼）

    Args:
        model: 模型
        data: 数据集
        v: 参数空间向量
        coef: 每个样本的系数，为空时使用样本权重
        theta: 替代参数，为空时使用 model.theta

    Returns:
        np.ndarray: 长度 p 的向量
    """
    _check_data(model, data)
    v = _check_vector(model, v, "v")
    coef = _check_coef(data, coef)
    if data.is_empty:
        return np.zeros(model.p)
    theta = model.theta if theta is None else theta
    xa = augment(data.features, model.has_bias)
    margins = _margins(model, xa, theta)
    if model.is_binary:
        curvature = expit(margins) * expit(-margins)
        return (coef * curvature * (xa @ v)) @ xa
    probs = softmax(margins, axis=1)
    a = xa @ to_matrix(model, v).T
    pa = probs * a
    contracted = pa - probs * pa.sum(axis=1, keepdims=True)
    return to_theta(model, (coef[:, None] * contracted).T @ xa)


def third_sum(model: GlmModel, data: Dataset, u1: np.ndarray, u2: np.ndarray,
              coef: Optional[np.ndarray] = None) -> np.ndarray:
    """
    系数加权的三阶导数收缩之和，第 j 项为 Σ c_i u1ᵀ(∂∇²L_i/∂θ_j)u2

    Args:
        model: 模型
        data: 数据集
        u1: 参数空间向量
        u2: 参数空间向量
        coef: 每个样本的系数，为空时使用样本权重

    Returns:
        np.ndarray: 长度 p 的向量
    """
    _check_data(model, data)
    u1 = _check_vector(model, u1, "u1")
    u2 = _check_vector(model, u2, "u2")
    coef = _check_coef(data, coef)
    if data.is_empty:
        return np.zeros(model.p)
    xa = augment(data.features, model.has_bias)
    margins = _margins(model, xa)
    if model.is_binary:
        sig = expit(margins)
        third = sig * expit(-margins) * (1.0 - 2.0 * sig)
        return (coef * third * (xa @ u1) * (xa @ u2)) @ xa
    probs = softmax(margins, axis=1)
    a = xa @ to_matrix(model, u1).T
    b = xa @ to_matrix(model, u2).T
    pa = (probs * a).sum(axis=1, keepdims=True)
    pb = (probs * b).sum(axis=1, keepdims=True)
    pab = (probs * a * b).sum(axis=1, keepdims=True)
    t = probs * (a * b - pab - a * pb - b * pa + 2.0 * pa * pb)
    return to_theta(model, (coef[:, None] * t).T @ xa)


def _require_nonempty(data: Dataset) -> None:
    if data.is_empty:
        raise EmptyDatasetError("数据集为空")


def loss(model: GlmModel, data: Dataset, spec: LossSpec) -> float:
    """
    加权平均交叉熵损失

    Args:
        model: 模型
        data: 数据集（非空）
        spec: 损失配置

    Returns:
        float: 损失值
    """
    _require_nonempty(data)
    value, _ = loss_grad_sum(model, data)
    value /= data.n
    if spec.damp_in_loss:
        value += 0.5 * spec.l2_damp * float(model.theta @ model.theta)
    return value


def grad(model: GlmModel, data: Dataset, spec: LossSpec) -> np.ndarray:
    """
    损失对参数的梯度

    Args:
        model: 模型
        data: 数据集（非空）
        spec: 损失配置

    Returns:
        np.ndarray: 长度 p 的梯度
    """
    _require_nonempty(data)
    _, g = loss_grad_sum(model, data)
    g = g / data.n
    if spec.damp_in_loss:
        g = g + spec.l2_damp * model.theta
    return g


def hvp(model: GlmModel, data: Dataset, v: np.ndarray, spec: LossSpec) -> np.ndarray:
    """
    阻尼 Hessian 向量积 (H + λI)v，H 为训练集加权平均 Hessian

    空数据集时 H = 0，返回 λv。

    Args:
        model: 模型
        data: 训练集
        v: 参数空间向量
        spec: 损失配置

    Returns:
        np.ndarray: 长度 p 的向量
    """
    v = _check_vector(model, v, "v")
    _check_data(model, data)
    if data.is_empty:
        return spec.l2_damp * v
    return hvp_sum(model, data, v) / data.n + spec.l2_damp * v


def third_contract_grad(model: GlmModel, data: Dataset, u1: np.ndarray, u2: np.ndarray,
                        spec: LossSpec) -> np.ndarray:
    """
    三阶导数收缩 g_j = u1ᵀ(∂H/∂θ_j)u2，阻尼项贡献为零

    Args:
        model: 模型
        data: 训练集
        u1: 参数空间向量
        u2: 参数空间向量
        spec: 损失配置（仅为接口一致）

    Returns:
        np.ndarray: 长度 p 的向量
    """
    _check_data(model, data)
    if data.is_empty:
        _check_vector(model, u1, "u1")
        _check_vector(model, u2, "u2")
        return np.zeros(model.p)
    return third_sum(model, data, u1, u2) / data.n


def accuracy(model: GlmModel, data: Dataset) -> float:
    """
    分类准确率，得分相同时取较小的类别编号

    Args:
        model: 模型
        data: 数据集（非空）

    Returns:
        float: 准确率
    """
    _require_nonempty(data)
    return float(np.mean(predict(model, data) == data.labels))


def _objective(model: GlmModel, data: Dataset, spec: LossSpec, theta: np.ndarray) -> Tuple[float, np.ndarray]:
    value, g = loss_grad_sum(model, data, theta=theta)
    value /= data.n
    g = g / data.n
    if spec.damp_in_loss:
        value += 0.5 * spec.l2_damp * float(theta @ theta)
        g = g + spec.l2_damp * theta
    return value, g


def train_erm(data: Dataset, spec: LossSpec, cfg: TrainConfig, has_bias: bool = True,
              init: Optional[GlmModel] = None) -> TrainResult:
    """
    全批量梯度下降训练（BB/固定初始步长 + Armijo 回溯）

    Args:
        data: 训练集（非空，至少两个类别）
        spec: 损失配置
        cfg: 训练配置
        has_bias: 是否带偏置
        init: 初始模型，为空时从零开始

    Returns:
        TrainResult: 训练结果，未收敛时 converged 为 False

    Raises:
        ConvergenceError: cfg.strict 为真且未收敛
    """
    _require_nonempty(data)
    if np.unique(data.labels).size < 2:
        raise DatasetSchemaError("训练数据至少需要两个类别", column="label")

    model = init if init is not None else GlmModel.zeros(data.num_classes, data.dim, has_bias)
    _check_data(model, data)
    theta = np.array(model.theta, dtype=float)
    value, g = _objective(model, data, spec, theta)
    history = [value]
    prev_theta: Optional[np.ndarray] = None
    prev_g: Optional[np.ndarray] = None
    grad_norm = float(np.linalg.norm(g))
    converged = grad_norm <= cfg.grad_tol
    message = None
    iterations = 0

    while not converged and iterations < cfg.max_iters:
        step = cfg.initial_step
        if cfg.step_schedule == StepSchedule.BB and prev_theta is not None:
            s = theta - prev_theta
            y = g - prev_g
            sy = float(s @ y)
            if sy > 0:
                step = float(s @ s) / sy

        # Armijo 回溯
        while True:
            candidate = theta - step * g
            cand_value, cand_g = _objective(model, data, spec, candidate)
            if cand_value <= value - ARMIJO_C * step * grad_norm ** 2:
                break
            step *= 0.5
            if step < MIN_STEP:
                break
        if step < MIN_STEP:
            message = "回溯步长过小，提前停止"
            break

        prev_theta, prev_g = theta, g
        theta, value, g = candidate, cand_value, cand_g
        history.append(value)
        iterations += 1
        grad_norm = float(np.linalg.norm(g))
        converged = grad_norm <= cfg.grad_tol

    result = TrainResult(
        model=model.with_theta(theta),
        converged=converged,
        grad_norm=grad_norm,
        iterations=iterations,
        loss_history=history,
        message=message
    )
    if converged:
        logger.info(f"ERM 训练收敛: 迭代 {iterations} 次, 梯度范数 {grad_norm:.3e}, 损失 {value:.6f}")
    else:
        logger.warning(f"ERM 训练未收敛: 迭代 {iterations} 次, 梯度范数 {grad_norm:.3e}"
                       + (f", {message}" if message else ""))
        if cfg.strict:
            raise ConvergenceError(f"训练未收敛，梯度范数 {grad_norm:.3e}", grad_norm=grad_norm)
    return result
