"""
攻击优化模块

目标攻击：对每个 (初始化, 学习率) 运行投影 Adam，每步重新计算影响分数、
线性化、构造反向友好目标并求梯度，最后投影回以 θ* 为中心的 L2 球。
另含损失重加权基线攻击、缩放攻击与攻击评估。
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from src.core import glm
from src.core.influence import influence_set, influence_with_solution, rank
from src.core.objectives import (
    attack_loss, build_backward_friendly, grad_backward_friendly, influence_grad_norm, linearize
)
from src.exceptions import NumericalError
from src.models.attack import (
    AdamState, AttackConfig, AttackMetrics, AttackResult, BaselineConfig, RunFailure
)
from src.models.dataset import Dataset
from src.models.glm import GlmModel, LossSpec
from src.models.influence import IhvpConfig


def radius(theta_star: np.ndarray, c: float, relative: bool = True) -> float:
    """操纵半径 R = C·‖θ*‖（相对）或 C（绝对）"""
    if c < 0:
        raise ValueError(f"C 必须 ≥ 0，实际 {c}")
    return c * float(np.linalg.norm(theta_star)) if relative else float(c)


def project_ball(theta: np.ndarray, theta_star: np.ndarray, c: float, relative: bool = True) -> np.ndarray:
    """
    投影到以 θ* 为中心的 L2 球

    Args:
        theta: 待投影参数
        theta_star: 球心
        c: 半径系数
        relative: 半径是否相对 ‖θ*‖

    Returns:
        np.ndarray: 投影后的参数
    """
    theta = np.asarray(theta, dtype=float)
    theta_star = np.asarray(theta_star, dtype=float)
    r = radius(theta_star, c, relative)
    diff = theta - theta_star
    dist = float(np.linalg.norm(diff))
    if dist <= r:
        return theta.copy()
    return theta_star + r * diff / dist


@dataclass
class _Candidate:
    theta: np.ndarray
    ranks: Tuple[int, ...]
    delta_acc: float

    def key(self, k: int) -> Tuple[int, int, float]:
        return (-sum(1 for r in self.ranks if r <= k), sum(self.ranks), self.delta_acc)


@dataclass
class _RunOutcome:
    init_index: int
    learning_rate: float
    best: Optional[_Candidate] = None
    best_budget: Optional[_Candidate] = None
    trajectory: List[float] = field(default_factory=list)
    failure: Optional[str] = None


class _AttackProblem:
    """单次攻击共享的数据与 θ* 处的结果"""

    def __init__(self, train: Dataset, test: Dataset, theta_star: GlmModel,
                 targets: Tuple[int, ...], cfg: AttackConfig):
        self.train = train
        self.test = test
        self.theta_star = theta_star
        self.targets = targets
        self.cfg = cfg
        self.acc_star = glm.accuracy(theta_star, test)

    def evaluate(self, theta: np.ndarray):
        """计算影响分数、攻击损失、目标排名与精度差"""
        model = self.theta_star.with_theta(theta)
        scores, s_test = influence_with_solution(model, self.train, self.test, self.cfg.ihvp)
        ranking = rank(scores)
        ranks = tuple(ranking.rank_of(t) for t in self.targets)
        loss = attack_loss(scores, self.targets, self.cfg.variant, self.cfg.k)
        delta_acc = self.acc_star - glm.accuracy(model, self.test)
        return model, scores, s_test, loss, _Candidate(np.array(theta), ranks, delta_acc)

    def better(self, a: Optional[_Candidate], b: _Candidate) -> bool:
        return a is None or b.key(self.cfg.k) < a.key(self.cfg.k)


def _run(problem: _AttackProblem, start: _Candidate, init_index: int, lr_index: int) -> _RunOutcome:
    cfg = problem.cfg
    lr = cfg.learning_rates[lr_index]
    outcome = _RunOutcome(init_index=init_index, learning_rate=lr, best=start, best_budget=start)
    theta_star = problem.theta_star.theta
    p = theta_star.size

    rng = np.random.default_rng([cfg.seed, init_index])
    noise_std = cfg.init_noise_scale * float(np.linalg.norm(theta_star)) / np.sqrt(p)
    theta = project_ball(theta_star + rng.normal(0.0, 1.0, p) * noise_std, theta_star, cfg.c, cfg.relative)
    adam = AdamState.zeros(p)

    try:
        for step in range(cfg.steps + 1):
            model, scores, s_test, loss, candidate = problem.evaluate(theta)
            if not np.isfinite(loss):
                raise NumericalError(f"攻击损失非有限: {loss}")
            outcome.trajectory.append(loss)
            if problem.better(outcome.best, candidate):
                outcome.best = candidate
            if candidate.delta_acc <= cfg.acc_budget and problem.better(outcome.best_budget, candidate):
                outcome.best_budget = candidate
            if step == cfg.steps:
                break
            objective = linearize(scores, problem.targets, cfg.variant, cfg.k)
            _, aux = build_backward_friendly(model, problem.train, problem.test, objective.u,
                                             cfg.ihvp, s_test=s_test)
            gradient = grad_backward_friendly(model, problem.train, problem.test, objective.u, aux)
            theta = project_ball(theta + adam.step(gradient, lr), theta_star, cfg.c, cfg.relative)
    except NumericalError as e:
        logger.warning(f"攻击运行失败: 初始化 {init_index}, 学习率 {lr}, {str(e)}")
        outcome.failure = str(e)
    return outcome


def multi_target_attack(train: Dataset, test: Dataset, theta_star: GlmModel,
                        targets: Sequence[int], cfg: AttackConfig) -> AttackResult:
    """
    多目标攻击：在一次优化中最小化各目标攻击损失之和

    每次运行把 θ* 作为第 0 步候选，按 (进入前 k 名目标数, 排名和, 精度差) 选取最优迭代；
    同时记录精度差不超过预算的最优迭代。运行间按 (初始化, 学习率) 顺序比较。

    Args:
        train: 训练集
        test: 攻击者测试集
        theta_star: 诚实模型
        targets: 目标样本下标
        cfg: 攻击配置

    Returns:
        AttackResult: 攻击结果
    """
    targets = tuple(int(t) for t in targets)
    if not targets:
        raise ValueError("目标集合不能为空")
    if len(set(targets)) != len(targets):
        raise ValueError("目标集合包含重复下标")
    problem = _AttackProblem(train, test, theta_star, targets, cfg)
    _, _, _, loss_star, start = problem.evaluate(theta_star.theta)
    initial_ranks = start.ranks

    def _result(best: _Candidate, budget: _Candidate, trajectory: List[float], init_index: int,
                lr: Optional[float], failures: List[RunFailure]) -> AttackResult:
        return AttackResult(
            theta_prime=theta_star.with_theta(best.theta),
            targets=targets,
            k=cfg.k,
            initial_ranks=initial_ranks,
            final_ranks=best.ranks,
            delta_acc=best.delta_acc,
            loss_trajectory=trajectory,
            chosen_init=init_index,
            chosen_lr=lr,
            budget_theta=theta_star.with_theta(budget.theta),
            budget_final_ranks=budget.ranks,
            budget_delta_acc=budget.delta_acc,
            failed_runs=failures
        )

    r = radius(theta_star.theta, cfg.c, cfg.relative)
    if all(rk <= cfg.k for rk in initial_ranks) or r == 0.0:
        logger.info(f"无需优化: 初始排名 {initial_ranks}, 半径 {r:.3e}")
        return _result(start, start, [loss_star] * (cfg.steps + 1), -1, None, [])

    jobs = [(i, j) for i in range(cfg.num_inits) for j in range(len(cfg.learning_rates))]
    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as executor:
            outcomes = list(executor.map(lambda job: _run(problem, start, *job), jobs))
    else:
        outcomes = [_run(problem, start, i, j) for i, j in jobs]

    failures = [RunFailure(o.init_index, o.learning_rate, o.failure) for o in outcomes if o.failure]
    completed = [o for o in outcomes if not o.failure]
    if not completed:
        logger.error(f"全部 {len(outcomes)} 次攻击运行失败")
        return _result(start, start, [loss_star] * (cfg.steps + 1), -1, None, failures)

    chosen = completed[0]
    budget = completed[0].best_budget
    for o in completed[1:]:
        if problem.better(chosen.best, o.best):
            chosen = o
        if problem.better(budget, o.best_budget):
            budget = o.best_budget
    logger.info(
        f"攻击完成: 目标 {len(targets)} 个, 初始排名和 {sum(initial_ranks)}, "
        f"最终排名和 {sum(chosen.best.ranks)}, 初始化 {chosen.init_index}, 学习率 {chosen.learning_rate}"
    )
    return _result(chosen.best, budget, chosen.trajectory, chosen.init_index, chosen.learning_rate, failures)


def single_target_attack(train: Dataset, test: Dataset, theta_star: GlmModel, target_idx: int,
                         cfg: AttackConfig) -> AttackResult:
    """
    单目标攻击

    Args:
        train: 训练集
        test: 攻击者测试集
        theta_star: 诚实模型
        target_idx: 目标样本下标
        cfg: 攻击配置

    Returns:
        AttackResult: 攻击结果
    """
    if not 0 <= target_idx < train.n:
        raise ValueError(f"目标下标越界: {target_idx}")
    return multi_target_attack(train, test, theta_star, [target_idx], cfg)


def _sampling_probabilities(n: int, target_idx: int, lambda_weight: float) -> np.ndarray:
    weights = np.ones(n)
    weights[target_idx] = lambda_weight
    total = weights.sum()
    if total <= 0:
        raise ValueError("采样权重全为零")
    return weights / total


def baseline_reweigh_attack(train: Dataset, target_idx: int, lambda_weight: float, cfg: BaselineConfig,
                            spec: LossSpec, has_bias: bool = True) -> GlmModel:
    """
    损失重加权基线：按目标样本权重 λ 加权采样的小批量 Adam 训练

    Args:
        train: 训练集
        target_idx: 目标样本下标
        lambda_weight: 目标样本采样权重（其余为 1）
        cfg: 基线配置
        spec: 损失配置
        has_bias: 是否带偏置

    Returns:
        GlmModel: 训练得到的模型
    """
    if lambda_weight < 0:
        raise ValueError(f"λ 必须 ≥ 0，实际 {lambda_weight}")
    if not 0 <= target_idx < train.n:
        raise ValueError(f"目标下标越界: {target_idx}")
    probs = _sampling_probabilities(train.n, target_idx, lambda_weight)
    rng = np.random.default_rng(cfg.seed)
    model = GlmModel.zeros(train.num_classes, train.dim, has_bias)
    theta = np.array(model.theta)
    adam = AdamState.zeros(model.p)
    for _ in range(cfg.steps):
        batch = rng.choice(train.n, size=cfg.batch_size, replace=True, p=probs)
        counts = np.bincount(batch, minlength=train.n).astype(float)
        _, g = glm.loss_grad_sum(model, train, coef=counts / cfg.batch_size, theta=theta)
        if spec.damp_in_loss:
            g = g + spec.l2_damp * theta
        theta = theta + adam.step(g, cfg.learning_rate)
    logger.info(f"基线攻击训练完成: 目标 {target_idx}, λ={lambda_weight}, 步数 {cfg.steps}")
    return model.with_theta(theta)


def scaling_attack(model: GlmModel, lam: float) -> GlmModel:
    """
    缩放攻击 θ′ = λθ（含偏置），预测类别不变

    Args:
        model: 原模型
        lam: 缩放系数（> 0）

    Returns:
        GlmModel: 缩放后的模型
    """
    if not lam > 0 or not np.isfinite(lam):
        raise ValueError(f"缩放系数必须为正数，实际 {lam}")
    return model.with_theta(lam * model.theta)


def evaluate_attack(theta_prime: GlmModel, theta_star: GlmModel, train: Dataset, test: Dataset,
                    pristine: Dataset, targets: Sequence[int], k: int, acc_budget: float,
                    cfg: IhvpConfig) -> AttackMetrics:
    """
    攻击评估

    精度差在未知测试集上计算；迁移排名以未知测试集作为影响计算的测试集；
    影响梯度范数在 θ* 处计算。

    Args:
        theta_prime: 操纵模型
        theta_star: 诚实模型
        train: 训练集
        test: 攻击者测试集
        pristine: 未知测试集
        targets: 目标样本下标
        k: 目标排名
        acc_budget: 精度差预算
        cfg: 求解配置

    Returns:
        AttackMetrics: 评估指标
    """
    targets = tuple(int(t) for t in targets)
    if not targets:
        raise ValueError("目标集合不能为空")
    final = rank(influence_set(theta_prime, train, test, cfg))
    transfer = rank(influence_set(theta_prime, train, pristine, cfg))
    final_ranks = tuple(final.rank_of(t) for t in targets)
    transfer_ranks = tuple(transfer.rank_of(t) for t in targets)
    delta_acc = glm.accuracy(theta_star, pristine) - glm.accuracy(theta_prime, pristine)
    success_rate = sum(1 for r in final_ranks if r <= k) / len(targets)
    return AttackMetrics(
        final_ranks=final_ranks,
        transfer_ranks=transfer_ranks,
        success_rate=success_rate,
        success_rate_budget=success_rate if delta_acc <= acc_budget else 0.0,
        transfer_success_rate=sum(1 for r in transfer_ranks if r <= k) / len(targets),
        delta_acc=delta_acc,
        influence_grad_norms=tuple(influence_grad_norm(theta_star, train, test, t, cfg) for t in targets)
    )
