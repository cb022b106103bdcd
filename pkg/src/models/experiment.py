"""
实验配置数据模型

实验配置为 YAML 文档，使用 pydantic 校验；未知键、类型错误或越界值均抛出 ConfigError。
未给出的字段取 config/config.yaml 中的默认值。
"""
from pathlib import Path
from typing import List, Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from src.config import config
from src.exceptions import ConfigError


def _default(key: str, fallback):
    return lambda: config.get(key, fallback)


class _Strict(BaseModel):
    model_config = ConfigDict(extra='forbid', frozen=True)


class DataSpec(_Strict):
    """数据来源：CSV 文件或合成生成器"""
    train_path: Optional[str] = None
    test_path: Optional[str] = None
    generator: Optional[Literal['blobs', 'biased_groups', 'impossibility']] = None
    n_train: int = Field(default=300, ge=1)
    n_test: int = Field(default=200, ge=2)
    dim: int = Field(default=8, ge=1)
    num_classes: int = Field(default=2, ge=2)
    separation: float = Field(default=2.0, ge=0)
    base_rate_gap: float = Field(default=0.2, ge=0, le=1)
    duplicates: int = Field(default=1, ge=1)
    fix_labels: bool = False

    @model_validator(mode='after')
    def _check_source(self) -> 'DataSpec':
        has_files = self.train_path is not None
        if has_files == (self.generator is not None):
            raise ValueError("train_path 与 generator 必须且只能指定一个")
        if has_files and self.test_path is None:
            raise ValueError("使用文件数据时必须指定 test_path")
        return self


class ModelSpec(_Strict):
    """模型与训练参数"""
    path: Optional[str] = None  # 已训练模型文件，为空时现场训练
    has_bias: bool = True
    l2_damp: float = Field(default_factory=_default('numerics.l2_damp', 0.01), ge=0)
    damp_in_loss: bool = False
    max_iters: int = Field(default_factory=_default('numerics.max_iters', 5000), ge=1)
    grad_tol: float = Field(default_factory=_default('numerics.grad_tol', 1e-6), gt=0)
    step_schedule: Literal['bb', 'constant'] = Field(default_factory=_default('numerics.step_schedule', 'bb'))
    cg_tol: float = Field(default_factory=_default('numerics.cg_tol', 1e-8), gt=0)


class BaselineSpec(_Strict):
    """损失重加权基线"""
    lambda_weight: float = Field(default=1e4, ge=0)
    steps: int = Field(default_factory=_default('baseline.steps', 1400), ge=1)
    batch_size: int = Field(default_factory=_default('baseline.batch_size', 256), ge=1)
    learning_rate: float = Field(default_factory=_default('baseline.learning_rate', 0.01), gt=0)


class AttackSpec(_Strict):
    """目标攻击、多目标攻击与缩放攻击参数"""
    c_grid: List[float] = Field(default_factory=_default('attack.c_grid', [0.05, 0.1, 0.2, 0.5]), min_length=1)
    k_grid: List[int] = Field(default_factory=_default('attack.k_grid', [10]), min_length=1)
    learning_rates: List[float] = Field(default_factory=_default('attack.learning_rates', [0.01, 0.1]),
                                        min_length=1)
    steps: int = Field(default_factory=_default('attack.steps', 100), ge=1)
    num_inits: int = Field(default_factory=_default('attack.num_inits', 5), ge=1)
    init_noise_scale: float = Field(default_factory=_default('attack.init_noise_scale', 0.01), ge=0)
    variant: Literal['max_target', 'max_target_min_top_k', 'max_target_min_higher'] = Field(
        default_factory=_default('attack.variant', 'max_target_min_higher'))
    acc_budget: float = Field(default_factory=_default('attack.acc_budget', 0.03), ge=0, le=1)
    relative: bool = True
    targets: Optional[List[int]] = None  # 指定目标下标，为空时随机抽取
    num_targets: int = Field(default=20, ge=1)
    target_sizes: List[int] = Field(default_factory=lambda: [10, 50], min_length=1)
    scale_lambdas: List[float] = Field(default_factory=lambda: [0.25, 1.0, 64.0], min_length=1)
    baseline: Optional[BaselineSpec] = None

    @field_validator('c_grid', 'learning_rates', 'scale_lambdas')
    @classmethod
    def _check_positive(cls, values: List[float], info):
        if info.field_name == 'c_grid':
            bad = [v for v in values if v < 0]
        else:
            bad = [v for v in values if v <= 0]
        if bad:
            raise ValueError(f"取值越界: {bad}")
        return values

    @field_validator('k_grid', 'target_sizes')
    @classmethod
    def _check_counts(cls, values: List[int]):
        if any(v < 1 for v in values):
            raise ValueError(f"取值必须 ≥ 1: {values}")
        return values


class FairnessSpec(_Strict):
    """公平性流程参数"""
    preset: Optional[Literal['adult', 'compas', 'german']] = None
    lambda_grid: List[float] = Field(default_factory=_default(
        'fairness.lambda_grid', [0.25, 0.5, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0]))
    l2_reg: Optional[float] = Field(default=None, ge=0)
    beta: Optional[float] = Field(default=None, ge=0, le=1)
    gamma: Optional[float] = Field(default=None, ge=0, le=1)
    solver_tol: float = Field(default_factory=_default('fairness.solver_tol', 1e-8), gt=0)
    surrogate_temperature: float = Field(default=1.0, gt=0)
    problem: Literal['basic', 'advanced'] = Field(default_factory=_default('fairness.problem', 'advanced'))
    weight_mode: Literal['keep', 'direct'] = Field(default_factory=_default('fairness.weight_mode', 'keep'))
    acc_budget: float = Field(default_factory=_default('attack.acc_budget', 0.03), ge=0, le=1)
    strict_lp: bool = False

    @field_validator('lambda_grid')
    @classmethod
    def _check_lambdas(cls, values: List[float]):
        if any(v <= 0 for v in values):
            raise ValueError(f"缩放系数必须为正数: {values}")
        return values


class ExperimentConfig(_Strict):
    """实验配置"""
    seed: int = 0
    out_dir: str = "outputs"
    data: DataSpec
    model: ModelSpec = Field(default_factory=ModelSpec)
    attack: AttackSpec = Field(default_factory=AttackSpec)
    fairness: FairnessSpec = Field(default_factory=FairnessSpec)

    def with_overrides(self, seed: Optional[int] = None, out_dir: Optional[str] = None) -> 'ExperimentConfig':
        """命令行参数覆盖"""
        updates = {}
        if seed is not None:
            updates['seed'] = seed
        if out_dir is not None:
            updates['out_dir'] = out_dir
        return self.model_copy(update=updates)


def parse_experiment_config(payload) -> ExperimentConfig:
    """
    校验实验配置

    Args:
        payload: YAML 解析结果

    Returns:
        ExperimentConfig: 配置对象

    Raises:
        ConfigError: 校验失败，消息与 key 指明出错的键路径
    """
    if not isinstance(payload, dict):
        raise ConfigError("实验配置顶层必须为映射")
    try:
        return ExperimentConfig.model_validate(payload)
    except ValidationError as e:
        error = e.errors()[0]
        key = ".".join(str(part) for part in error.get('loc', ()))
        if error.get('type') == 'extra_forbidden':
            raise ConfigError(f"未知配置项: {key}", key=key)
        raise ConfigError(f"配置项 {key or '<root>'} 非法: {error.get('msg')}", key=key or None)


def load_experiment_config(path: Union[str, Path]) -> ExperimentConfig:
    """读取并校验 YAML 实验配置"""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"实验配置文件不存在: {path}")
    try:
        payload = yaml.safe_load(path.read_text(encoding=config.get('data.file_encoding', 'utf-8')))
    except yaml.YAMLError as e:
        raise ConfigError(f"实验配置解析失败: {str(e)}")
    return parse_experiment_config(payload)
