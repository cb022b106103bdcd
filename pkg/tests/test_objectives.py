import numpy as np
import pytest

from src.core.influence import influence_set, influence_with_solution
from src.core.objectives import (
    attack_loss, build_backward_friendly, grad_backward_friendly, influence_grad_norm, linearize
)
from src.models.attack import ObjectiveVariant
from src.models.influence import IhvpConfig
from tests.conftest import dense_hessian, fd_grad, random_model

CFG = IhvpConfig(l2_damp=0.01, cg_tol=1e-10)
SCORES = np.array([5.0, 4.0, 3.0, 2.0, 1.0])


@pytest.mark.parametrize("variant, expected", [
    (ObjectiveVariant.MAX_TARGET, -2.0),
    (ObjectiveVariant.MAX_TARGET_MIN_HIGHER, 2.0),
    (ObjectiveVariant.MAX_TARGET_MIN_TOP_K, 2.5),
])
def test_attack_loss_variants(variant, expected):
    """测试三种目标函数的取值"""
    assert attack_loss(SCORES, [3], variant, k=2) == pytest.approx(expected)


def test_linearize_coefficients():
    """测试线性化系数"""
    u = linearize(SCORES, [3], ObjectiveVariant.MAX_TARGET_MIN_HIGHER, k=2).u
    np.testing.assert_allclose(u, [1 / 3, 1 / 3, 1 / 3, -1.0, 0.0])
    u = linearize(SCORES, [3], ObjectiveVariant.MAX_TARGET_MIN_TOP_K, k=2).u
    np.testing.assert_allclose(u, [0.5, 0.5, 0.0, -1.0, 0.0])


def test_higher_set_is_strict():
    """测试分数相同的样本不计入排名更高集合"""
    u = linearize(np.array([2.0, 2.0, 1.0]), [1], ObjectiveVariant.MAX_TARGET_MIN_HIGHER, k=1).u
    np.testing.assert_array_equal(u, [0.0, -1.0, 0.0])


def test_multi_target_loss_is_sum():
    """测试多目标损失为各目标损失之和"""
    for variant in ObjectiveVariant:
        combined = attack_loss(SCORES, [2, 4], variant, k=2)
        separate = attack_loss(SCORES, [2], variant, k=2) + attack_loss(SCORES, [4], variant, k=2)
        assert combined == pytest.approx(separate)


def test_linearize_validation():
    """测试非法参数"""
    with pytest.raises(ValueError):
        linearize(SCORES, [], ObjectiveVariant.MAX_TARGET, k=1)
    with pytest.raises(ValueError):
        linearize(SCORES, [5], ObjectiveVariant.MAX_TARGET, k=1)
    with pytest.raises(ValueError):
        linearize(SCORES, [0], ObjectiveVariant.MAX_TARGET, k=0)
    with pytest.raises(ValueError):
        linearize(SCORES, [0], ObjectiveVariant.MAX_TARGET, k=6)


@pytest.mark.parametrize("fixture", ["binary_data", "multi_data"])
def test_backward_friendly_value(request, fixture):
    """测试反向友好目标在当前参数处等于线性化攻击损失"""
    data = request.getfixturevalue(fixture)
    train, test = data.subset(range(30)), data.subset(range(30, data.n))
    model = random_model(data, seed=14)
    scores = influence_set(model, train, test, CFG)
    objective = linearize(scores, [7], ObjectiveVariant.MAX_TARGET_MIN_HIGHER, k=5)
    value, aux = build_backward_friendly(model, train, test, objective.u, CFG)
    assert value == pytest.approx(objective.value(scores.scores), rel=1e-7, abs=1e-10)
    h = dense_hessian(model, train, CFG.l2_damp)
    np.testing.assert_allclose(aux.u1, np.linalg.solve(h, aux.v1), rtol=1e-7, atol=1e-10)
    np.testing.assert_allclose(aux.u2, np.linalg.solve(h, aux.v2), rtol=1e-7, atol=1e-10)


@pytest.mark.parametrize("fixture", ["binary_data", "multi_data"])
@pytest.mark.parametrize("has_bias", [True, False])
def test_backward_friendly_gradient(request, fixture, has_bias):
    """测试冻结 u 时的梯度与 uᵀI(θ) 的有限差分一致"""
    data = request.getfixturevalue(fixture)
    train, test = data.subset(range(30)), data.subset(range(30, data.n))
    model = random_model(data, has_bias, seed=15)
    scores = influence_set(model, train, test, CFG)
    u = linearize(scores, [3, 11], ObjectiveVariant.MAX_TARGET_MIN_TOP_K, k=5).u
    _, aux = build_backward_friendly(model, train, test, u, CFG)
    gradient = grad_backward_friendly(model, train, test, u, aux)

    def _frozen_loss(theta):
        return float(u @ influence_set(model.with_theta(theta), train, test, CFG).scores)

    expected = fd_grad(_frozen_loss, model.theta, eps=1e-4)
    np.testing.assert_allclose(gradient, expected, rtol=1e-3, atol=1e-6 * np.linalg.norm(expected))


def test_reused_solution_matches(binary_data):
    """测试复用 s_test 与重新求解一致"""
    train, test = binary_data.subset(range(30)), binary_data.subset(range(30, 40))
    model = random_model(binary_data, seed=16)
    scores, s_test = influence_with_solution(model, train, test, CFG)
    u = linearize(scores, [0], ObjectiveVariant.MAX_TARGET, k=1).u
    value_a, aux_a = build_backward_friendly(model, train, test, u, CFG)
    value_b, aux_b = build_backward_friendly(model, train, test, u, CFG, s_test=s_test)
    assert value_a == pytest.approx(value_b, rel=1e-8)
    np.testing.assert_allclose(grad_backward_friendly(model, train, test, u, aux_a),
                               grad_backward_friendly(model, train, test, u, aux_b), rtol=1e-7, atol=1e-12)


def test_influence_grad_norm(binary_data):
    """测试影响梯度范数等于单样本目标梯度的范数"""
    train, test = binary_data.subset(range(30)), binary_data.subset(range(30, 40))
    model = random_model(binary_data, seed=17)
    u = np.zeros(train.n)
    u[5] = 1.0
    _, aux = build_backward_friendly(model, train, test, u, CFG)
    expected = np.linalg.norm(grad_backward_friendly(model, train, test, u, aux))
    assert influence_grad_norm(model, train, test, 5, CFG) == pytest.approx(expected)
    with pytest.raises(ValueError):
        influence_grad_norm(model, train, test, 30, CFG)
