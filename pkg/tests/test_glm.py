import numpy as np
import pytest

from src.core import glm
from src.exceptions import ConvergenceError, DatasetSchemaError, DimensionMismatchError, EmptyDatasetError
from src.models.dataset import Dataset
from src.models.glm import GlmModel, LossSpec, StepSchedule, TrainConfig
from tests.conftest import fd_grad, loop_loss, random_model

SPEC = LossSpec(l2_damp=0.01)


@pytest.mark.parametrize("fixture", ["binary_data", "multi_data"])
@pytest.mark.parametrize("has_bias", [True, False])
def test_loss_matches_loop(request, fixture, has_bias):
    """测试损失与逐样本循环一致"""
    data = request.getfixturevalue(fixture)
    model = random_model(data, has_bias, seed=4)
    assert glm.loss(model, data, SPEC) == pytest.approx(loop_loss(model, data), rel=1e-12)


@pytest.mark.parametrize("fixture", ["binary_data", "multi_data"])
@pytest.mark.parametrize("has_bias", [True, False])
def test_grad_matches_finite_difference(request, fixture, has_bias):
    """测试梯度与有限差分一致"""
    data = request.getfixturevalue(fixture)
    model = random_model(data, has_bias, seed=5)
    spec = LossSpec(l2_damp=0.1, damp_in_loss=True)
    expected = fd_grad(lambda t: glm.loss(model.with_theta(t), data, spec), model.theta)
    np.testing.assert_allclose(glm.grad(model, data, spec), expected, rtol=1e-6, atol=1e-8)


@pytest.mark.parametrize("fixture", ["binary_data", "multi_data"])
def test_hvp_matches_grad_difference(request, fixture):
    """测试 Hessian 向量积与梯度差分一致"""
    data = request.getfixturevalue(fixture)
    model = random_model(data, seed=6)
    v = np.random.default_rng(0).normal(size=model.p)
    eps = 1e-5
    plus = glm.grad(model.with_theta(model.theta + eps * v), data, SPEC)
    minus = glm.grad(model.with_theta(model.theta - eps * v), data, SPEC)
    expected = (plus - minus) / (2 * eps) + SPEC.l2_damp * v
    np.testing.assert_allclose(glm.hvp(model, data, v, SPEC), expected, rtol=1e-5, atol=1e-8)


@pytest.mark.parametrize("fixture", ["binary_data", "multi_data"])
def test_third_contract_matches_hvp_difference(request, fixture):
    """测试三阶收缩与 Hessian 向量积差分一致"""
    data = request.getfixturevalue(fixture)
    model = random_model(data, seed=7)
    rng = np.random.default_rng(1)
    u1, u2 = rng.normal(size=model.p), rng.normal(size=model.p)
    expected = fd_grad(lambda t: float(u1 @ glm.hvp(model.with_theta(t), data, u2, SPEC)), model.theta, eps=1e-5)
    np.testing.assert_allclose(glm.third_contract_grad(model, data, u1, u2, SPEC), expected, rtol=1e-4, atol=1e-8)


def test_third_contract_zero_cases(binary_data):
    """测试 θ=0 的二分类与 u1=0 时三阶收缩为零"""
    zero = GlmModel.zeros(2, binary_data.dim)
    u = np.ones(zero.p)
    np.testing.assert_allclose(glm.third_contract_grad(zero, binary_data, u, u, SPEC), 0.0, atol=1e-15)
    model = random_model(binary_data)
    np.testing.assert_array_equal(glm.third_contract_grad(model, binary_data, np.zeros(model.p), u, SPEC), 0.0)


def test_per_sample_grads_sum(multi_data):
    """测试逐样本梯度之和与内积"""
    model = random_model(multi_data, seed=8)
    grads = glm.per_sample_grads(model, multi_data)
    _, total = glm.loss_grad_sum(model, multi_data)
    np.testing.assert_allclose(grads.sum(axis=0), total, rtol=1e-10, atol=1e-12)
    v = np.random.default_rng(2).normal(size=model.p)
    np.testing.assert_allclose(glm.per_sample_grad_dot(model, multi_data, v), grads @ v, rtol=1e-10, atol=1e-12)


def test_weighted_grad(binary_data):
    """测试样本权重按 Σ w_i ∇L_i / n 计入梯度"""
    model = random_model(binary_data, seed=9)
    weights = np.random.default_rng(3).uniform(size=binary_data.n)
    weighted = binary_data.with_weights(weights)
    expected = weights @ glm.per_sample_grads(model, binary_data) / binary_data.n
    np.testing.assert_allclose(glm.grad(model, weighted, SPEC), expected, rtol=1e-10)
    zero = binary_data.with_weights(np.zeros(binary_data.n))
    np.testing.assert_array_equal(glm.grad(model, zero, SPEC), 0.0)


def test_empty_dataset(binary_data):
    """测试空数据集"""
    model = random_model(binary_data)
    empty = Dataset.empty(binary_data.dim)
    v = np.arange(model.p, dtype=float)
    np.testing.assert_allclose(glm.hvp(model, empty, v, SPEC), SPEC.l2_damp * v)
    np.testing.assert_array_equal(glm.third_contract_grad(model, empty, v, v, SPEC), 0.0)
    with pytest.raises(EmptyDatasetError):
        glm.loss(model, empty, SPEC)
    with pytest.raises(EmptyDatasetError):
        glm.accuracy(model, empty)


def test_dimension_mismatch(binary_data):
    """测试维度不一致"""
    model = GlmModel.zeros(2, binary_data.dim + 1)
    with pytest.raises(DimensionMismatchError):
        glm.loss(model, binary_data, SPEC)
    with pytest.raises(DimensionMismatchError):
        glm.hvp(random_model(binary_data), binary_data, np.zeros(2), SPEC)


def test_zero_model_ties_to_lowest_class(multi_data):
    """测试得分相同时预测最小类别"""
    model = GlmModel.zeros(3, multi_data.dim)
    np.testing.assert_array_equal(glm.predict(model, multi_data), 0)
    assert glm.accuracy(model, multi_data) == pytest.approx(np.mean(multi_data.labels == 0))


def test_train_two_point_separable():
    """测试两点可分数据带阻尼时收敛"""
    data = Dataset(features=np.array([[1.0], [-1.0]]), labels=np.array([1, 0]))
    spec = LossSpec(l2_damp=0.1, damp_in_loss=True)
    result = glm.train_erm(data, spec, TrainConfig())
    assert result.converged
    assert np.linalg.norm(glm.grad(result.model, data, spec)) <= 1e-6


def test_train_symmetric_no_bias():
    """测试关于原点对称的数据上损失与取反参数的损失一致"""
    x = np.random.default_rng(4).normal(size=(10, 2))
    data = Dataset(features=np.vstack([x, -x]), labels=np.r_[np.ones(10), np.zeros(10)].astype(int))
    spec = LossSpec(l2_damp=0.01, damp_in_loss=True)
    model = glm.train_erm(data, spec, TrainConfig(), has_bias=False).model
    negated = model.with_theta(-model.theta)
    mirrored = Dataset(features=data.features, labels=1 - data.labels)
    assert glm.loss(model, data, spec) == pytest.approx(glm.loss(negated, mirrored, spec), abs=1e-9)


@pytest.mark.parametrize("schedule", [StepSchedule.BB, StepSchedule.CONSTANT])
def test_train_separable_blobs(schedule):
    """测试可分类簇训练准确率为 1 且损失单调不增"""
    rng = np.random.default_rng(0)
    labels = np.arange(200) % 2
    features = rng.normal(size=(200, 5))
    features[:, 0] += 6.0 * (2 * labels - 1)
    data = Dataset(features=features, labels=labels)
    spec = LossSpec(l2_damp=0.01, damp_in_loss=True)
    result = glm.train_erm(data, spec, TrainConfig(step_schedule=schedule))
    assert result.converged
    assert glm.accuracy(result.model, data) == 1.0
    assert all(b <= a + 1e-15 for a, b in zip(result.loss_history, result.loss_history[1:]))


def test_train_multiclass_converges(multi_data):
    """测试多分类训练收敛"""
    spec = LossSpec(l2_damp=0.01, damp_in_loss=True)
    result = glm.train_erm(multi_data, spec, TrainConfig())
    assert result.converged
    assert result.grad_norm <= 1e-6
    assert result.model.p == 3 * (multi_data.dim + 1)


def test_train_not_converged(binary_data):
    """测试未收敛的报告与严格模式"""
    cfg = TrainConfig(max_iters=1, grad_tol=1e-14)
    result = glm.train_erm(binary_data, SPEC, cfg)
    assert not result.converged
    assert result.iterations == 1
    with pytest.raises(ConvergenceError) as excinfo:
        glm.train_erm(binary_data, SPEC, TrainConfig(max_iters=1, grad_tol=1e-14, strict=True))
    assert excinfo.value.grad_norm == pytest.approx(result.grad_norm)


def test_train_requires_two_classes():
    """测试单类别数据"""
    data = Dataset(features=np.ones((3, 2)), labels=np.ones(3, dtype=int))
    with pytest.raises(DatasetSchemaError):
        glm.train_erm(data, SPEC, TrainConfig())
