"""
公平性重加权流程模块

基础模型 → （缩放攻击）→ 公平性/效用影响 → 重加权线性规划 → 加权重训练下游模型 → DP 评估。
线性规划直接以公平性影响 I_fair 与效用影响 I_util 为系数；只有线性规划求得最优解的行才参与成功判定。
"""
from concurrent.futures import ThreadPoolExecutor
from typing import Iterable, List, Optional, Tuple

import numpy as np
from loguru import logger
from scipy.special import expit

from src.core import glm
from src.core.attack import scaling_attack
from src.core.influence import ihvp, influence_set
from src.core.lp_solver import solve_reweigh_advanced, solve_reweigh_basic
from src.exceptions import (
    DatasetSchemaError, DimensionMismatchError, EmptyDatasetError, InfluenceAttackError, LpInfeasibleError
)
from src.models.dataset import Dataset
from src.models.fairness import (
    DpReport, FairnessConfig, FairnessReport, FairnessRow, ReweighProblem, ReweighWeights, SolverStatus,
    WeightMode
)
from src.models.glm import GlmModel, LossSpec, TrainConfig
from src.models.influence import IhvpConfig, InfluenceVector


def dp_gap(predictions: np.ndarray, groups: np.ndarray) -> float:
    """
    人口统计均等差 |Pr(ŷ=1|a=0) − Pr(ŷ=1|a=1)|（直接计数）

    Args:
        predictions: 0/1 预测
        groups: 0/1 分组

    Returns:
        float: DP 差
    """
    rate0, rate1 = _positive_rates(predictions, groups)
    return abs(rate0 - rate1)


def _positive_rates(predictions: np.ndarray, groups: np.ndarray) -> Tuple[float, float]:
    predictions = np.asarray(predictions)
    groups = np.asarray(groups)
    if predictions.shape != groups.shape:
        raise DimensionMismatchError(f"预测长度 {predictions.shape} 与分组长度 {groups.shape} 不一致")
    rates = []
    for g in (0, 1):
        members = groups == g
        if not members.any():
            raise DatasetSchemaError(f"分组 {g} 没有样本", column="group")
        rates.append(float(np.count_nonzero(predictions[members] == 1)) / float(np.count_nonzero(members)))
    return rates[0], rates[1]


def _require_binary_groups(model: GlmModel, data: Dataset) -> None:
    if not model.is_binary:
        raise DimensionMismatchError("公平性计算仅支持二分类模型")
    if not data.has_groups:
        raise DatasetSchemaError("数据集缺少敏感属性分组", column="group")


def dp_report(model: GlmModel, data: Dataset) -> DpReport:
    """评估模型的 DP 差、两组正预测率与准确率"""
    _require_binary_groups(model, data)
    predictions = glm.predict(model, data)
    rates = _positive_rates(predictions, data.groups)
    return DpReport(
        dp_gap=abs(rates[0] - rates[1]),
        group_positive_rates=rates,
        accuracy=glm.accuracy(model, data)
    )


def _soft_rates(model: GlmModel, data: Dataset, temperature: float):
    xa = glm.augment(data.features, model.has_bias)
    margins = xa @ model.theta / temperature
    probs = expit(margins)
    masks = [data.groups == 0, data.groups == 1]
    for g, mask in enumerate(masks):
        if not mask.any():
            raise DatasetSchemaError(f"分组 {g} 没有样本", column="group")
    return xa, probs, masks


def soft_dp(model: GlmModel, data: Dataset, temperature: float = 1.0) -> float:
    """
    可微 DP 替代 |mean_{a=0} σ(m/T) − mean_{a=1} σ(m/T)|

    Args:
        model: 二分类模型
        data: 带分组的数据集
        temperature: sigmoid 温度

    Returns:
        float: 替代值，位于 [0, 1]
    """
    _require_binary_groups(model, data)
    _, probs, masks = _soft_rates(model, data, temperature)
    return abs(float(probs[masks[0]].mean() - probs[masks[1]].mean()))


def soft_dp_grad(model: GlmModel, data: Dataset, temperature: float = 1.0) -> np.ndarray:
    """soft_dp 对参数的梯度，绝对值在 0 处取零次梯度"""
    _require_binary_groups(model, data)
    xa, probs, masks = _soft_rates(model, data, temperature)
    diff = float(probs[masks[0]].mean() - probs[masks[1]].mean())
    slope = probs * (1.0 - probs) / temperature
    inner = (slope[masks[0]] @ xa[masks[0]]) / masks[0].sum() - (slope[masks[1]] @ xa[masks[1]]) / masks[1].sum()
    return float(np.sign(diff)) * inner


def fairness_influence(model: GlmModel, train: Dataset, val: Dataset, cfg: IhvpConfig,
                       temperature: float = 1.0) -> InfluenceVector:
    """
    公平性影响 I_fair(z) = −∇softDpᵀ(H+λI)⁻¹∇L(z)

    Args:
        model: 基础模型
        train: 训练集
        val: 带分组的验证集
        cfg: 求解配置
        temperature: sigmoid 温度

    Returns:
        InfluenceVector: 与训练集对齐的公平性影响
    """
    s = ihvp(model, train, soft_dp_grad(model, val, temperature), cfg)
    return InfluenceVector(-glm.per_sample_grad_dot(model, train, s))


def utility_influence(model: GlmModel, train: Dataset, val: Dataset, cfg: IhvpConfig) -> InfluenceVector:
    """效用影响，即以验证集为测试集的影响分数"""
    return influence_set(model, train, val, cfg)


def downstream_weights(train: Dataset, weights: ReweighWeights, mode: WeightMode) -> np.ndarray:
    """由线性规划解得到下游训练的样本权重"""
    w = np.clip(np.asarray(weights.w, dtype=float), 0.0, 1.0)
    if w.size != train.n:
        raise DimensionMismatchError(f"权重长度 {w.size} 与样本数 {train.n} 不一致")
    factor = 1.0 - w if mode == WeightMode.KEEP else w
    return train.weights * factor


def retrain_downstream(train: Dataset, weights: ReweighWeights, l2_reg: float, cfg: TrainConfig,
                       mode: WeightMode = WeightMode.KEEP, has_bias: bool = True) -> GlmModel:
    """
    按重加权结果从头训练下游模型

    Args:
        train: 训练集
        weights: 线性规划解
        l2_reg: ℓ2 正则（计入训练损失）
        cfg: 训练配置
        mode: 权重约定
        has_bias: 是否带偏置

    Returns:
        GlmModel: 下游模型
    """
    sample_weights = downstream_weights(train, weights, mode)
    if not np.any(sample_weights > 0):
        raise EmptyDatasetError("有效样本权重全为零")
    spec = LossSpec(l2_damp=l2_reg, damp_in_loss=True)
    return glm.train_erm(train.with_weights(sample_weights), spec, cfg, has_bias=has_bias).model


def reweigh(model: GlmModel, train: Dataset, val: Dataset, fcfg: FairnessConfig,
            ihvp_cfg: IhvpConfig) -> ReweighWeights:
    """
    计算影响向量并求解重加权线性规划

    Args:
        model: 基础模型（可能已被缩放）
        train: 训练集
        val: 验证集
        fcfg: 公平性配置
        ihvp_cfg: 求解配置

    Returns:
        ReweighWeights: 线性规划解

    Raises:
        LpInfeasibleError: fcfg.strict_lp 为真且线性规划不可行
    """
    i_fair = fairness_influence(model, train, val, ihvp_cfg, fcfg.surrogate_temperature).scores
    i_util = utility_influence(model, train, val, ihvp_cfg).scores
    f_val = soft_dp(model, val, fcfg.surrogate_temperature)
    if fcfg.problem == ReweighProblem.BASIC:
        weights = solve_reweigh_basic(i_fair, i_util, f_val, fcfg.solver_tol)
    else:
        weights = solve_reweigh_advanced(i_fair, i_util, f_val, fcfg.beta, fcfg.gamma, fcfg.solver_tol)
    if fcfg.strict_lp and not weights.is_optimal:
        raise LpInfeasibleError(f"重加权线性规划不可行，证书残差 {weights.certificate_residual:.3e}",
                                residual=weights.certificate_residual)
    return weights


def _evaluate_lambda(base: GlmModel, lam: float, train: Dataset, val: Dataset, pristine: Dataset,
                     fcfg: FairnessConfig, train_cfg: TrainConfig, ihvp_cfg: IhvpConfig,
                     has_bias: bool) -> FairnessRow:
    try:
        scaled = scaling_attack(base, lam)
        weights = reweigh(scaled, train, val, fcfg, ihvp_cfg)
        downstream = retrain_downstream(train, weights, fcfg.l2_reg, train_cfg, fcfg.weight_mode, has_bias)
        report = dp_report(downstream, pristine)
        logger.info(f"λ={lam}: 下游 DP 差 {report.dp_gap:.4f}, 准确率 {report.accuracy:.4f}, "
                    f"线性规划 {weights.status.value}")
        return FairnessRow(
            lam=lam,
            dp_gap=report.dp_gap,
            accuracy=report.accuracy,
            group_positive_rates=report.group_positive_rates,
            base_accuracy=glm.accuracy(scaled, pristine),
            solver_status=weights.status.value,
            solver_path=weights.path.value if weights.path else None,
            objective=weights.objective
        )
    except InfluenceAttackError as e:
        logger.error(f"λ={lam} 评估失败: {str(e)}", exc_info=True)
        return FairnessRow(
            lam=lam, dp_gap=None, accuracy=None, group_positive_rates=None, base_accuracy=None,
            solver_status=None, solver_path=None, objective=None, error=str(e)
        )


def fairness_attack_eval(train: Dataset, val: Dataset, pristine: Dataset, lambda_grid: Iterable[float],
                         fcfg: FairnessConfig, train_cfg: TrainConfig, cg_tol: float = 1e-8,
                         threads: int = 1, has_bias: bool = True,
                         base: Optional[GlmModel] = None) -> FairnessReport:
    """
    缩放攻击下的公平性重加权评估

    λ=1（不攻击）与网格中每个 λ 各跑一遍流程，结果按 λ 升序排列；
    成功条件为该行与 λ=1 的线性规划均为最优解、下游 DP 差严格高于 λ=1 且准确率差不超过预算。

    Args:
        train: 训练集
        val: 验证集
        pristine: 评估集
        lambda_grid: 缩放系数网格
        fcfg: 公平性配置
        train_cfg: 训练配置
        cg_tol: 共轭梯度容差
        threads: 并行数
        has_bias: 是否带偏置
        base: 基础模型，为空时在训练集上训练

    Returns:
        FairnessReport: 评估报告
    """
    lambdas = sorted({1.0} | {float(lam) for lam in lambda_grid})
    if any(lam <= 0 for lam in lambdas):
        raise ValueError(f"缩放系数必须为正数: {lambdas}")
    spec = LossSpec(l2_damp=fcfg.l2_reg, damp_in_loss=True)
    if base is None:
        base = glm.train_erm(train, spec, train_cfg, has_bias=has_bias).model
    ihvp_cfg = IhvpConfig(l2_damp=fcfg.l2_reg, cg_tol=cg_tol)

    def _job(lam: float) -> FairnessRow:
        return _evaluate_lambda(base, lam, train, val, pristine, fcfg, train_cfg, ihvp_cfg, has_bias)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            rows: List[FairnessRow] = list(executor.map(_job, lambdas))
    else:
        rows = [_job(lam) for lam in lambdas]

    reference = next(row for row in rows if row.lam == 1.0)
    optimal = SolverStatus.OPTIMAL.value
    for row in rows:
        row.success = (
            row.lam != 1.0
            and row.error is None
            and reference.error is None
            and row.solver_status == optimal
            and reference.solver_status == optimal
            and row.dp_gap > reference.dp_gap
            and abs(row.accuracy - reference.accuracy) <= fcfg.acc_budget
        )
    logger.info(f"公平性攻击评估完成: {len(rows)} 个 λ, 成功 {sum(r.success for r in rows)} 个")
    return FairnessReport(rows=rows)
