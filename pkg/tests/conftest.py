"""
测试公共夹具与参照实现（逐样本循环、有限差分、稠密 Hessian）
"""
import numpy as np
import pytest
from scipy.special import expit, softmax

from src.core import glm
from src.models.dataset import Dataset
from src.models.glm import GlmModel, LossSpec
from src.services.synthetic import synth_biased_groups, synth_blobs


@pytest.fixture
def binary_data():
    """二分类小数据集"""
    return synth_blobs(40, 3, num_classes=2, separation=1.5, seed=1)


@pytest.fixture
def multi_data():
    """三分类小数据集"""
    return synth_blobs(45, 3, num_classes=3, separation=1.5, seed=2)


@pytest.fixture
def group_data():
    """带敏感属性的数据集"""
    return synth_biased_groups(120, 4, base_rate_gap=0.3, seed=3)


def random_model(data: Dataset, has_bias: bool = True, seed: int = 0, scale: float = 0.5) -> GlmModel:
    """随机参数模型"""
    model = GlmModel.zeros(data.num_classes, data.dim, has_bias)
    rng = np.random.default_rng(seed)
    return model.with_theta(scale * rng.normal(size=model.p))


def loop_loss(model: GlmModel, data: Dataset) -> float:
    """逐样本循环计算加权平均交叉熵"""
    matrix = glm.to_matrix(model, model.theta)
    total = 0.0
    for x, y, w in zip(data.features, data.labels, data.weights):
        xa = np.append(x, 1.0) if model.has_bias else x
        scores = matrix @ xa
        if model.is_binary:
            p = expit(scores[0])
            total += w * -(y * np.log(p) + (1 - y) * np.log(1 - p))
        else:
            total += w * -np.log(softmax(scores)[y])
    return total / data.n


def fd_grad(func, theta: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """中心差分梯度"""
    out = np.zeros(theta.size)
    for j in range(theta.size):
        step = np.zeros(theta.size)
        step[j] = eps
        out[j] = (func(theta + step) - func(theta - step)) / (2 * eps)
    return out


def dense_hessian(model: GlmModel, data: Dataset, l2_damp: float) -> np.ndarray:
    """由 hvp 逐列构造稠密 (H + λI)"""
    spec = LossSpec(l2_damp=l2_damp)
    eye = np.eye(model.p)
    columns = [glm.hvp(model, data, eye[j], spec) for j in range(model.p)]
    matrix = np.column_stack(columns)
    return 0.5 * (matrix + matrix.T)


def loop_influence(model: GlmModel, train: Dataset, test: Dataset, l2_damp: float) -> np.ndarray:
    """逐对循环与稠密求解计算影响分数"""
    h = dense_hessian(model, train, l2_damp)
    train_grads = glm.per_sample_grads(model, train)
    test_grads = glm.per_sample_grads(model, test)
    scores = np.zeros(train.n)
    for i in range(train.n):
        solved = np.linalg.solve(h, train_grads[i])
        scores[i] = sum(-float(g @ solved) for g in test_grads)
    return scores
