import numpy as np
import pytest

from src.core import fairness as fairness_module
from src.core import glm
from src.core.fairness import (
    downstream_weights, dp_gap, dp_report, fairness_attack_eval, fairness_influence, reweigh,
    retrain_downstream, soft_dp, soft_dp_grad, utility_influence
)
from src.exceptions import DatasetSchemaError, DimensionMismatchError, EmptyDatasetError, LpInfeasibleError
from src.models.fairness import (
    FAIRNESS_PRESETS, FairnessConfig, ReweighProblem, ReweighWeights, SolverStatus, WeightMode
)
from src.models.glm import LossSpec, TrainConfig
from src.models.influence import IhvpConfig
from tests.conftest import dense_hessian, fd_grad, random_model

CFG = IhvpConfig(l2_damp=0.01, cg_tol=1e-10)


def test_dp_gap_counts():
    """测试 DP 差按计数计算"""
    groups = np.array([0, 0, 1, 1])
    assert dp_gap(np.array([1, 1, 0, 0]), groups) == 1.0
    assert dp_gap(np.array([1, 0, 1, 0]), groups) == 0.0
    assert dp_gap(np.array([1, 1, 1, 0]), groups) == pytest.approx(0.5)
    with pytest.raises(DatasetSchemaError):
        dp_gap(np.array([1, 0]), np.array([0, 0]))
    with pytest.raises(DimensionMismatchError):
        dp_gap(np.array([1, 0, 1]), np.array([0, 1]))


def test_dp_report(group_data):
    """测试 DP 报告与直接计数一致"""
    model = random_model(group_data, seed=30)
    report = dp_report(model, group_data)
    predictions = glm.predict(model, group_data)
    rate0 = predictions[group_data.groups == 0].mean()
    rate1 = predictions[group_data.groups == 1].mean()
    assert report.group_positive_rates == pytest.approx((rate0, rate1))
    assert report.dp_gap == pytest.approx(abs(rate0 - rate1))
    assert report.accuracy == glm.accuracy(model, group_data)


def test_fairness_requires_groups(binary_data, multi_data):
    """测试缺少分组或多分类模型"""
    with pytest.raises(DatasetSchemaError):
        dp_report(random_model(binary_data), binary_data)
    with pytest.raises(DimensionMismatchError):
        soft_dp(random_model(multi_data), multi_data)


def test_soft_dp_grad_matches_finite_difference(group_data):
    """测试软 DP 梯度与有限差分一致"""
    model = random_model(group_data, seed=31)
    for temperature in (1.0, 0.5):
        value = soft_dp(model, group_data, temperature)
        assert 0.0 < value <= 1.0
        expected = fd_grad(lambda t: soft_dp(model.with_theta(t), group_data, temperature), model.theta)
        np.testing.assert_allclose(soft_dp_grad(model, group_data, temperature), expected, rtol=1e-6, atol=1e-9)


def test_fairness_influence_matches_dense(group_data):
    """测试公平性影响与稠密求解一致"""
    train, val = group_data.subset(range(80)), group_data.subset(range(80, 120))
    model = random_model(group_data, seed=32)
    scores = fairness_influence(model, train, val, CFG)
    h = dense_hessian(model, train, CFG.l2_damp)
    expected = -glm.per_sample_grads(model, train) @ np.linalg.solve(h, soft_dp_grad(model, val))
    np.testing.assert_allclose(scores.scores, expected, rtol=1e-6, atol=1e-10)


def test_downstream_weight_modes(group_data):
    """测试下游权重约定"""
    w = np.linspace(0.0, 1.0, group_data.n)
    weights = ReweighWeights(w=w, status=SolverStatus.OPTIMAL, objective=float(w.sum()), residuals=(0.0, 0.0))
    np.testing.assert_allclose(downstream_weights(group_data, weights, WeightMode.KEEP), 1.0 - w)
    np.testing.assert_allclose(downstream_weights(group_data, weights, WeightMode.DIRECT), w)
    short = ReweighWeights(w=w[:5], status=SolverStatus.OPTIMAL, objective=0.0, residuals=(0.0, 0.0))
    with pytest.raises(DimensionMismatchError):
        downstream_weights(group_data, short, WeightMode.KEEP)


def test_retrain_downstream(group_data):
    """测试零权重重训练等于原训练，全零有效权重报错"""
    zero = ReweighWeights(w=np.zeros(group_data.n), status=SolverStatus.OPTIMAL, objective=0.0, residuals=(0.0, 0.0))
    retrained = retrain_downstream(group_data, zero, 0.01, TrainConfig())
    reference = glm.train_erm(group_data, LossSpec(l2_damp=0.01, damp_in_loss=True), TrainConfig()).model
    np.testing.assert_allclose(retrained.theta, reference.theta)
    with pytest.raises(EmptyDatasetError):
        retrain_downstream(group_data, zero, 0.01, TrainConfig(), mode=WeightMode.DIRECT)


@pytest.mark.parametrize("problem", [ReweighProblem.BASIC, ReweighProblem.ADVANCED])
def test_reweigh_solution_is_feasible(group_data, problem):
    """测试重加权解满足约束"""
    train, val = group_data.subset(range(80)), group_data.subset(range(80, 120))
    model = glm.train_erm(train, LossSpec(l2_damp=0.01, damp_in_loss=True), TrainConfig()).model
    fcfg = FairnessConfig(problem=problem)
    result = reweigh(model, train, val, fcfg, CFG)
    assert result.w.shape == (train.n,)
    if result.is_optimal:
        assert np.all((result.w >= 0) & (result.w <= 1))
        assert max(result.residuals) <= fcfg.solver_tol * (1 + 1e-6) + 1e-14
    else:
        assert result.certificate_residual > 0


def test_reweigh_feeds_influence_vectors(group_data, mocker):
    """测试线性规划系数即公平性影响与效用影响本身"""
    train, val = group_data.subset(range(80)), group_data.subset(range(80, 120))
    model = glm.train_erm(train, LossSpec(l2_damp=0.01, damp_in_loss=True), TrainConfig()).model
    solver = mocker.spy(fairness_module, "solve_reweigh_basic")
    reweigh(model, train, val, FairnessConfig(problem=ReweighProblem.BASIC), CFG)
    i_fair, i_util, f_val = solver.call_args.args[:3]
    np.testing.assert_allclose(i_fair, fairness_influence(model, train, val, CFG).scores)
    np.testing.assert_allclose(i_util, utility_influence(model, train, val, CFG).scores)
    assert f_val == pytest.approx(soft_dp(model, val))


def test_infeasible_rows_never_succeed(group_data, mocker):
    """测试线性规划不可行的行按零权重重训练但不计为成功"""
    train, val, pristine = group_data.subset(range(60)), group_data.subset(range(60, 90)), \
        group_data.subset(range(90, 120))
    infeasible = ReweighWeights(w=np.zeros(train.n), status=SolverStatus.INFEASIBLE, objective=0.0,
                                residuals=(0.5, 0.0), certificate_residual=0.5)
    mocker.patch("src.core.fairness.solve_reweigh_advanced", return_value=infeasible)
    report = fairness_attack_eval(train, val, pristine, [0.25, 4.0, 64.0], FairnessConfig(), TrainConfig())
    assert all(row.error is None for row in report.rows)
    assert all(row.solver_status == SolverStatus.INFEASIBLE.value for row in report.rows)
    assert not report.any_success


def test_presets():
    """测试命名预设"""
    cfg = FairnessConfig.from_preset("compas")
    assert (cfg.l2_reg, cfg.beta, cfg.gamma) == (37.0, 0.3, 0.1)
    assert FAIRNESS_PRESETS["adult"][3] == 102
    assert FairnessConfig.from_preset("german", beta=0.9).beta == 0.9
    with pytest.raises(ValueError):
        FairnessConfig.from_preset("unknown")


def test_fairness_attack_eval(group_data):
    """测试评估行按 λ 升序、包含 λ=1 且成功标记与判定规则一致"""
    train, val, pristine = group_data.subset(range(60)), group_data.subset(range(60, 90)), \
        group_data.subset(range(90, 120))
    fcfg = FairnessConfig()
    report = fairness_attack_eval(train, val, pristine, [4.0, 0.5], fcfg, TrainConfig(), cg_tol=1e-8, threads=2)
    assert [row.lam for row in report.rows] == [0.5, 1.0, 4.0]
    reference = report.rows[1]
    assert reference.success is False
    for row in report.rows:
        if row.error is None:
            assert 0.0 <= row.dp_gap <= 1.0
            expected = (row.lam != 1.0 and reference.error is None and row.dp_gap > reference.dp_gap
                        and row.solver_status == reference.solver_status == SolverStatus.OPTIMAL.value
                        and abs(row.accuracy - reference.accuracy) <= fcfg.acc_budget)
            assert row.success == expected
    with pytest.raises(ValueError):
        fairness_attack_eval(train, val, pristine, [-1.0], fcfg, TrainConfig())


def test_strict_lp_raises_on_infeasible(group_data, mocker):
    """测试严格模式下不可行线性规划抛出异常，评估行记为失败"""
    train, val = group_data.subset(range(80)), group_data.subset(range(80, 120))
    infeasible = ReweighWeights(w=np.zeros(train.n), status=SolverStatus.INFEASIBLE, objective=0.0,
                                residuals=(0.5, 0.0), certificate_residual=0.5)
    mocker.patch('src.core.fairness.solve_reweigh_advanced', return_value=infeasible)
    model = random_model(group_data, seed=33)
    assert reweigh(model, train, val, FairnessConfig(), CFG) is infeasible
    with pytest.raises(LpInfeasibleError) as excinfo:
        reweigh(model, train, val, FairnessConfig(strict_lp=True), CFG)
    assert excinfo.value.residual == 0.5
    report = fairness_attack_eval(train, val, val, [2.0], FairnessConfig(strict_lp=True), TrainConfig())
    assert all(row.error is not None and not row.success for row in report.rows)
