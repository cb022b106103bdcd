"""
实验编排服务

每个命令读取实验配置，生成或加载数据，运行对应流程并原子写出 JSON 报告。
报告内容在相同配置与种子下逐字节一致；耗时单独写入 `<报告>.timings.json`。
"""
import io
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from loguru import logger

from src.config import config
from src.core import glm
from src.core.attack import (
    baseline_reweigh_attack, evaluate_attack, multi_target_attack, scaling_attack, single_target_attack
)
from src.core.fairness import fairness_attack_eval
from src.core.influence import influence_set, rank, rank_correlation, top_k_overlap
from src.exceptions import DataError, DatasetSchemaError, DimensionMismatchError, ReportIntegrityError
from src.models.attack import AttackConfig, BaselineConfig, ObjectiveVariant
from src.models.dataset import Dataset
from src.models.experiment import ExperimentConfig
from src.models.fairness import FAIRNESS_PRESETS, FairnessConfig, ReweighProblem, WeightMode
from src.models.glm import GlmModel, LossSpec, StepSchedule, TrainConfig
from src.models.influence import IhvpConfig
from src.services.data_io import load_dataset, load_model, save_model, split_halves_stratified
from src.services.synthetic import impossibility_dataset, synth_biased_groups, synth_blobs
from src.utils.file_lock import atomic_write_text

_FLOAT_TOL = 1e-12


@dataclass
class DataBundle:
    """一次实验使用的数据"""
    train: Dataset
    test: Dataset  # 完整测试集
    attacker: Dataset  # 攻击者可见的一半
    pristine: Dataset  # 未知的一半
    target_idx: Optional[int] = None  # 不可能性构造的目标样本
    bar_indices: List[int] = field(default_factory=list)  # 不可能性构造的重复样本


class ExperimentService:
    """实验服务"""

    def __init__(self, cfg: ExperimentConfig, threads: int = 1):
        """
        初始化实验服务

        Args:
            cfg: 实验配置
            threads: 扫描单元并行数
        """
        self.cfg = cfg
        self.threads = max(1, int(threads))
        self.out_dir = Path(cfg.out_dir)
        self._data: Optional[DataBundle] = None

    # ------------------------------------------------------------------
    # 数据与模型
    # ------------------------------------------------------------------
    @property
    def has_bias(self) -> bool:
        """不可能性构造固定使用无偏置模型"""
        return self.cfg.model.has_bias and self.cfg.data.generator != 'impossibility'

    def load_data(self) -> DataBundle:
        """按配置加载或生成数据"""
        if self._data is not None:
            return self._data
        spec = self.cfg.data
        seed = self.cfg.seed
        target_idx, bar_indices = None, []
        if spec.generator == 'impossibility':
            train, test, target_idx, bar_indices = impossibility_dataset(
                spec.dim, spec.duplicates, seed=seed, fix_labels=spec.fix_labels)
        elif spec.generator is not None:
            total = spec.n_train + spec.n_test
            if spec.generator == 'blobs':
                full = synth_blobs(total, spec.dim, spec.num_classes, spec.separation, seed)
            else:
                full = synth_biased_groups(total, spec.dim, spec.base_rate_gap, seed)
            train = full.subset(range(spec.n_train))
            test = full.subset(range(spec.n_train, total))
        else:
            train = load_dataset(spec.train_path)
            test = load_dataset(spec.test_path)
            num_classes = max(train.num_classes, test.num_classes, spec.num_classes)
            train = Dataset(train.features, train.labels, train.groups, None, num_classes, train.name)
            test = Dataset(test.features, test.labels, test.groups, None, num_classes, test.name)
            if train.dim != test.dim:
                raise DatasetSchemaError(f"训练集维度 {train.dim} 与测试集维度 {test.dim} 不一致")

        if test.n >= 2 * test.num_classes and np.all(np.bincount(test.labels) != 1):
            attacker, pristine = split_halves_stratified(test, seed)
        else:
            # 测试集过小时攻击者与评估方共用
            attacker, pristine = test, test
        self._data = DataBundle(train, test, attacker, pristine, target_idx, bar_indices)
        logger.info(f"数据准备完成: 训练 {train.n}, 测试 {test.n}, 维度 {train.dim}, 类别 {train.num_classes}")
        return self._data

    def loss_spec(self) -> LossSpec:
        """模型损失配置"""
        return LossSpec(l2_damp=self.cfg.model.l2_damp, damp_in_loss=self.cfg.model.damp_in_loss)

    def train_config(self) -> TrainConfig:
        """训练配置"""
        spec = self.cfg.model
        return TrainConfig(
            max_iters=spec.max_iters,
            grad_tol=spec.grad_tol,
            step_schedule=StepSchedule(spec.step_schedule),
            seed=self.cfg.seed
        )

    def ihvp_config(self) -> IhvpConfig:
        """求解配置"""
        return IhvpConfig(l2_damp=self.cfg.model.l2_damp, cg_tol=self.cfg.model.cg_tol)

    def base_model(self) -> GlmModel:
        """加载或训练诚实模型"""
        data = self.load_data()
        if self.cfg.model.path:
            model = load_model(self.cfg.model.path)
            if model.dim != data.train.dim or model.num_classes != data.train.num_classes:
                raise DataError(f"模型结构与数据不一致: 模型维度 {model.dim}, 数据维度 {data.train.dim}")
            return model
        return glm.train_erm(data.train, self.loss_spec(), self.train_config(), has_bias=self.has_bias).model

    # ------------------------------------------------------------------
    # 报告
    # ------------------------------------------------------------------
    def _payload(self, command: str, rows: list, summary: list) -> dict:
        return {
            "command": command,
            "seed": self.cfg.seed,
            "config": self.cfg.model_dump(mode='json', exclude={'out_dir'}),
            "rows": rows,
            "summary": summary,
        }

    def _write(self, name: str, payload: dict, timings: Dict[str, float]) -> Path:
        path = self.out_dir / f"{name}.json"
        write_report(path, payload, timings)
        logger.info(f"报告已写入: {path}")
        return path

    def _map(self, func: Callable, cells: Sequence) -> Tuple[list, Dict[str, float]]:
        def _timed(cell):
            start = time.perf_counter()
            result = func(cell)
            return result, time.perf_counter() - start

        if self.threads > 1:
            with ThreadPoolExecutor(max_workers=self.threads) as executor:
                outcomes = list(executor.map(_timed, cells))
        else:
            outcomes = [_timed(cell) for cell in cells]
        timings = {str(cell): seconds for cell, (_, seconds) in zip(cells, outcomes)}
        return [result for result, _ in outcomes], timings

    def _attack_config(self, c: float, k: int) -> AttackConfig:
        spec = self.cfg.attack
        return AttackConfig(
            c=c,
            k=k,
            learning_rates=tuple(spec.learning_rates),
            steps=spec.steps,
            num_inits=spec.num_inits,
            init_noise_scale=spec.init_noise_scale,
            variant=ObjectiveVariant(spec.variant),
            acc_budget=spec.acc_budget,
            seed=self.cfg.seed,
            relative=spec.relative,
            ihvp=self.ihvp_config()
        )

    def _target_pool(self, model: GlmModel, data: DataBundle) -> np.ndarray:
        """θ* 下排名在最大 k 之外的训练样本"""
        ranking = rank(influence_set(model, data.train, data.attacker, self.ihvp_config()))
        pool = np.flatnonzero(ranking.ranks > max(self.cfg.attack.k_grid))
        if pool.size == 0:
            raise DataError("没有排名在前 k 名之外的候选目标")
        return pool

    def _single_targets(self, model: GlmModel, data: DataBundle) -> List[int]:
        spec = self.cfg.attack
        if spec.targets is not None:
            bad = [t for t in spec.targets if not 0 <= t < data.train.n]
            if bad:
                raise DataError(f"目标下标越界: {bad}")
            return list(spec.targets)
        if data.target_idx is not None:
            return [data.target_idx]
        pool = self._target_pool(model, data)
        rng = np.random.default_rng([self.cfg.seed, 1])
        count = min(spec.num_targets, pool.size)
        return sorted(int(t) for t in rng.choice(pool, size=count, replace=False))

    # ------------------------------------------------------------------
    # 命令
    # ------------------------------------------------------------------
    def cmd_train(self) -> Path:
        """训练诚实模型，写出模型文件与训练报告"""
        data = self.load_data()
        start = time.perf_counter()
        result = glm.train_erm(data.train, self.loss_spec(), self.train_config(), has_bias=self.has_bias)
        elapsed = time.perf_counter() - start
        save_model(result.model, self.out_dir / "model.json")
        row = {
            "converged": result.converged,
            "gradNorm": result.grad_norm,
            "iterations": result.iterations,
            "finalLoss": result.loss_history[-1],
            "trainAccuracy": glm.accuracy(result.model, data.train),
            "testAccuracy": glm.accuracy(result.model, data.test),
        }
        return self._write("train", self._payload("train", [row], []), {"train": elapsed})

    def cmd_influence(self) -> Path:
        """计算影响分数，写出 CSV（index, score, rank）"""
        data = self.load_data()
        model = self.base_model()
        start = time.perf_counter()
        scores = influence_set(model, data.train, data.test, self.ihvp_config())
        ranking = rank(scores)
        frame = pd.DataFrame({
            "index": np.arange(data.train.n),
            "score": scores.scores,
            "rank": ranking.ranks,
        })
        buffer = io.StringIO()
        frame.to_csv(buffer, index=False, float_format="%.17g", lineterminator="\n")
        path = atomic_write_text(self.out_dir / "influence.csv", buffer.getvalue())
        write_timings(path, {"influence": time.perf_counter() - start})
        logger.info(f"影响分数已写入: {path}")
        return path

    def cmd_attack_target(self) -> Path:
        """单目标攻击扫描（C × k × 目标）"""
        data = self.load_data()
        model = self.base_model()
        targets = self._single_targets(model, data)
        cells = [(c, k, t) for c in self.cfg.attack.c_grid for k in self.cfg.attack.k_grid for t in targets]
        budget = self.cfg.attack.acc_budget

        def _cell(cell):
            c, k, target = cell
            result = single_target_attack(data.train, data.attacker, model, target, self._attack_config(c, k))
            metrics = evaluate_attack(result.theta_prime, model, data.train, data.attacker, data.pristine,
                                      [target], k, budget, self.ihvp_config())
            return {
                "C": c,
                "k": k,
                "target": target,
                "seed": self.cfg.seed,
                "initialRank": result.initial_rank,
                "finalRank": result.final_rank,
                "finalRankBudget": result.budget_final_ranks[0],
                "deltaAcc": result.delta_acc,
                "deltaAccBudget": result.budget_delta_acc,
                "success": result.final_rank <= k,
                "successBudget": result.budget_final_ranks[0] <= k and result.budget_delta_acc <= budget,
                "transferRank": metrics.transfer_ranks[0],
                "deltaAccPristine": metrics.delta_acc,
                "influenceGradNorm": metrics.influence_grad_norms[0],
                "chosenInit": result.chosen_init,
                "chosenLr": result.chosen_lr,
                "failedRuns": len(result.failed_runs),
            }

        rows, timings = self._map(_cell, cells)
        summary = []
        for c in self.cfg.attack.c_grid:
            for k in self.cfg.attack.k_grid:
                group = [r for r in rows if r["C"] == c and r["k"] == k]
                summary.append({
                    "C": c,
                    "k": k,
                    "numTargets": len(group),
                    "successRate": float(np.mean([r["success"] for r in group])),
                    "successRateBudget": float(np.mean([r["successBudget"] for r in group])),
                    "transferSuccessRate": float(np.mean([r["transferRank"] <= k for r in group])),
                    "deltaAcc": float(np.mean([r["deltaAcc"] for r in group])),
                    "rankImprovedRate": float(np.mean([r["finalRank"] < r["initialRank"] for r in group])),
                })
        payload = self._payload("attack-target", rows, summary)
        if self.cfg.attack.baseline is not None:
            payload["baseline"] = self._baseline_rows(model, data, targets)
        return self._write("attack_target", payload, timings)

    def _baseline_rows(self, model: GlmModel, data: DataBundle, targets: List[int]) -> list:
        spec = self.cfg.attack.baseline
        cfg = BaselineConfig(steps=spec.steps, batch_size=spec.batch_size,
                             learning_rate=spec.learning_rate, seed=self.cfg.seed)
        honest = rank(influence_set(model, data.train, data.attacker, self.ihvp_config()))
        acc_star = glm.accuracy(model, data.attacker)
        rows = []
        for target in targets:
            attacked = baseline_reweigh_attack(data.train, target, spec.lambda_weight, cfg,
                                               self.loss_spec(), self.has_bias)
            ranking = rank(influence_set(attacked, data.train, data.attacker, self.ihvp_config()))
            rows.append({
                "target": target,
                "lambdaWeight": spec.lambda_weight,
                "initialRank": honest.rank_of(target),
                "finalRank": ranking.rank_of(target),
                "deltaAcc": acc_star - glm.accuracy(attacked, data.attacker),
            })
        return rows

    def cmd_attack_multi(self) -> Path:
        """多目标攻击扫描（C × k × 目标集合大小）"""
        data = self.load_data()
        model = self.base_model()
        pool = self._target_pool(model, data)
        spec = self.cfg.attack
        target_sets = {}
        for size in spec.target_sizes:
            rng = np.random.default_rng([self.cfg.seed, 2, size])
            target_sets[size] = sorted(int(t) for t in rng.choice(pool, size=min(size, pool.size), replace=False))
        cells = [(c, k, size) for c in spec.c_grid for k in spec.k_grid for size in spec.target_sizes]

        def _cell(cell):
            c, k, size = cell
            result = multi_target_attack(data.train, data.attacker, model, target_sets[size],
                                         self._attack_config(c, k))
            return {
                "C": c,
                "k": k,
                "targetSize": size,
                "seed": self.cfg.seed,
                "targets": list(result.targets),
                "initialRanks": list(result.initial_ranks),
                "finalRanks": list(result.final_ranks),
                "finalRanksBudget": list(result.budget_final_ranks),
                "successRate": result.success_rate,
                "slotSuccessRate": result.slot_success_rate,
                "successRateBudget": result.budget_success_rate if result.budget_delta_acc <= spec.acc_budget else 0.0,
                "deltaAcc": result.delta_acc,
                "deltaAccBudget": result.budget_delta_acc,
                "failedRuns": len(result.failed_runs),
            }

        rows, timings = self._map(_cell, cells)
        return self._write("attack_multi", self._payload("attack-multi", rows, []), timings)

    def cmd_attack_scale(self) -> Path:
        """缩放攻击：预测不变性与影响排名扭曲"""
        data = self.load_data()
        model = self.base_model()
        cfg = self.ihvp_config()
        honest = influence_set(model, data.train, data.attacker, cfg)
        predictions = glm.predict(model, data.pristine)
        acc = glm.accuracy(model, data.pristine)
        k = self.cfg.attack.k_grid[0]

        def _cell(lam):
            scaled = scaling_attack(model, lam)
            scores = influence_set(scaled, data.train, data.attacker, cfg)
            return {
                "lambda": lam,
                "accuracy": glm.accuracy(scaled, data.pristine),
                "accuracyOriginal": acc,
                "predictionsIdentical": bool(np.array_equal(glm.predict(scaled, data.pristine), predictions)),
                "spearman": rank_correlation(honest, scores),
                "topKOverlap": top_k_overlap(honest, scores, k),
            }

        rows, timings = self._map(_cell, list(self.cfg.attack.scale_lambdas))
        return self._write("attack_scale", self._payload("attack-scale", rows, []), timings)

    def fairness_config(self) -> FairnessConfig:
        """公平性配置（命名预设 + 显式覆盖）"""
        spec = self.cfg.fairness
        overrides = dict(
            solver_tol=spec.solver_tol,
            surrogate_temperature=spec.surrogate_temperature,
            problem=ReweighProblem(spec.problem),
            weight_mode=WeightMode(spec.weight_mode),
            acc_budget=spec.acc_budget,
            strict_lp=spec.strict_lp,
        )
        explicit = {key: getattr(spec, key) for key in ('l2_reg', 'beta', 'gamma') if getattr(spec, key) is not None}
        if spec.preset:
            return FairnessConfig.from_preset(spec.preset, **overrides, **explicit)
        defaults = {
            'l2_reg': config.get('fairness.l2_reg', 0.01),
            'beta': config.get('fairness.beta', 0.5),
            'gamma': config.get('fairness.gamma', 0.0),
        }
        defaults.update(explicit)
        return FairnessConfig(**defaults, **overrides)

    def cmd_fairness(self) -> Path:
        """公平性重加权下的缩放攻击评估"""
        data = self.load_data()
        for name, dataset in (("训练集", data.train), ("测试集", data.test)):
            if not dataset.has_groups:
                raise DatasetSchemaError(f"{name}缺少 group 列", column="group")
        preset = self.cfg.fairness.preset
        if preset and data.train.dim != FAIRNESS_PRESETS[preset][3]:
            raise DimensionMismatchError(
                f"预设 {preset} 要求 {FAIRNESS_PRESETS[preset][3]} 维特征，训练集为 {data.train.dim} 维")
        fcfg = self.fairness_config()
        base = self.base_model() if self.cfg.model.path else None
        start = time.perf_counter()
        report = fairness_attack_eval(
            data.train, data.attacker, data.pristine, self.cfg.fairness.lambda_grid, fcfg,
            self.train_config(), cg_tol=self.cfg.model.cg_tol, threads=self.threads,
            has_bias=self.has_bias, base=base
        )
        rows = [{
            "lambda": row.lam,
            "dpGap": row.dp_gap,
            "accuracy": row.accuracy,
            "groupPositiveRates": list(row.group_positive_rates) if row.group_positive_rates else None,
            "baseAccuracy": row.base_accuracy,
            "solverStatus": row.solver_status,
            "solverPath": row.solver_path,
            "objective": row.objective,
            "success": row.success,
            "error": row.error,
        } for row in report.rows]
        summary = [{"anySuccess": report.any_success, "numLambdas": len(rows)}]
        return self._write("fairness", self._payload("fairness", rows, summary),
                           {"fairness": time.perf_counter() - start})


# ----------------------------------------------------------------------
# 报告读写与聚合
# ----------------------------------------------------------------------
def _dumps(payload) -> str:
    return json.dumps(payload, indent=config.get('data.json_indent', 2), sort_keys=True, ensure_ascii=False) + "\n"


def write_timings(path: Union[str, Path], timings: Dict[str, float]) -> Path:
    """写出耗时文件 `<path>.timings.json`"""
    path = Path(path)
    return atomic_write_text(path.with_name(path.name + ".timings.json"), _dumps(timings))


def write_report(path: Union[str, Path], payload: dict, timings: Optional[Dict[str, float]] = None) -> Path:
    """原子写出报告，耗时写入旁路文件"""
    path = atomic_write_text(path, _dumps(payload))
    if timings is not None:
        write_timings(path, timings)
    return path


def validate_report(payload: dict) -> None:
    """
    报告自洽性校验：每行的成功标记须能由该行字段重新算出

    Raises:
        ReportIntegrityError: 校验失败
    """
    command = payload.get("command")
    rows = payload.get("rows")
    if command is None or not isinstance(rows, list):
        raise ReportIntegrityError("报告缺少 command 或 rows")
    budget = payload.get("config", {}).get("attack", {}).get("acc_budget", 0.03)

    if command == "attack-target":
        for i, row in enumerate(rows):
            success = row["finalRank"] <= row["k"]
            success_budget = row["finalRankBudget"] <= row["k"] and row["deltaAccBudget"] <= budget
            if row["success"] != success or row["successBudget"] != success_budget:
                raise ReportIntegrityError(f"第 {i} 行成功标记与排名/精度差不一致")
    elif command == "attack-multi":
        for i, row in enumerate(rows):
            rate = sum(1 for r in row["finalRanks"] if r <= row["k"]) / len(row["targets"])
            if abs(rate - row["successRate"]) > _FLOAT_TOL:
                raise ReportIntegrityError(f"第 {i} 行成功率与排名不一致")
    elif command == "fairness":
        fairness_budget = payload.get("config", {}).get("fairness", {}).get("acc_budget", 0.03)
        reference = next((r for r in rows if r["lambda"] == 1.0), None)
        if reference is None:
            raise ReportIntegrityError("公平性报告缺少 λ=1 行")
        for i, row in enumerate(rows):
            expected = (
                row["lambda"] != 1.0
                and row["error"] is None
                and reference["error"] is None
                and row["dpGap"] > reference["dpGap"]
                and abs(row["accuracy"] - reference["accuracy"]) <= fairness_budget
            )
            if row["success"] != expected:
                raise ReportIntegrityError(f"第 {i} 行成功标记与 DP 差/准确率不一致")


def load_report(path: Union[str, Path]) -> dict:
    """读取报告并做自洽性校验"""
    path = Path(path)
    if not path.exists():
        raise ReportIntegrityError(f"报告文件不存在: {path}")
    try:
        payload = json.loads(path.read_text(encoding=config.get('data.file_encoding', 'utf-8')))
    except json.JSONDecodeError as e:
        raise ReportIntegrityError(f"报告解析失败: {path}, {str(e)}")
    if not isinstance(payload, dict):
        raise ReportIntegrityError(f"报告顶层必须为对象: {path}")
    validate_report(payload)
    return payload


def cmd_report(report_paths: Sequence[Union[str, Path]], out_dir: Union[str, Path]) -> Tuple[Path, Path]:
    """
    聚合报告为作图用 CSV

    Args:
        report_paths: 报告文件
        out_dir: 输出目录

    Returns:
        Tuple[Path, Path]: (attack_curve.csv, fairness_curve.csv)
    """
    attack_rows, fairness_rows = [], []
    for path in report_paths:
        payload = load_report(path)
        if payload["command"] == "attack-target":
            for row in payload["summary"]:
                attack_rows.append({
                    "C": row["C"],
                    "k": row["k"],
                    "successRate": row["successRate"],
                    "successRateBudget": row["successRateBudget"],
                    "deltaAcc": row["deltaAcc"],
                })
        elif payload["command"] == "fairness":
            for row in payload["rows"]:
                fairness_rows.append({
                    "lambda": row["lambda"],
                    "dpGap": row["dpGap"],
                    "accuracy": row["accuracy"],
                    "success": row["success"],
                })

    out_dir = Path(out_dir)
    attack = pd.DataFrame(attack_rows, columns=["C", "k", "successRate", "successRateBudget", "deltaAcc"])
    attack = attack.sort_values(["C", "k"], kind="stable")
    fairness = pd.DataFrame(fairness_rows, columns=["lambda", "dpGap", "accuracy", "success"])
    fairness = fairness.sort_values(["lambda"], kind="stable")
    paths = []
    for name, frame in (("attack_curve.csv", attack), ("fairness_curve.csv", fairness)):
        buffer = io.StringIO()
        frame.to_csv(buffer, index=False, float_format="%.17g", lineterminator="\n")
        paths.append(atomic_write_text(out_dir / name, buffer.getvalue()))
    logger.info(f"聚合完成: 攻击 {len(attack_rows)} 行, 公平性 {len(fairness_rows)} 行")
    return paths[0], paths[1]
