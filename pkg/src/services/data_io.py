"""
数据与模型读写服务

数据集为 CSV（列 f0..f{d-1}, label, 可选 group），实数按 17 位有效数字写出；
模型为 JSON（numClasses, dim, hasBias, theta）。写入均为原子写。
"""
import io
import json
import re
from pathlib import Path
from typing import Tuple, Union

import numpy as np
import pandas as pd
from loguru import logger

from src.config import config
from src.exceptions import DatasetSchemaError, ModelFileError, SplitError
from src.models.dataset import Dataset
from src.models.glm import GlmModel, param_count
from src.utils.file_lock import atomic_write_text

_FEATURE_COLUMN = re.compile(r"^f(\d+)$")


def load_dataset(path: Union[str, Path], num_classes: int = None) -> Dataset:
    """
    读取 CSV 数据集

    Args:
        path: 文件路径
        num_classes: 类别数，为空时由标签推断

    Returns:
        Dataset: 数据集

    Raises:
        DatasetSchemaError: 文件格式不符（携带行/列位置）
    """
    path = Path(path)
    if not path.exists():
        raise DatasetSchemaError(f"数据文件不存在: {path}")
    try:
        frame = pd.read_csv(path, float_precision='round_trip', encoding=config.get('data.file_encoding', 'utf-8'))
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise DatasetSchemaError(f"数据文件解析失败: {path}, {str(e)}")

    columns = list(frame.columns)
    if "label" not in columns:
        raise DatasetSchemaError(f"缺少列 label: {path}", column="label")
    feature_columns = [c for c in columns if c not in ("label", "group")]
    for i, column in enumerate(feature_columns):
        match = _FEATURE_COLUMN.match(str(column))
        if not match or int(match.group(1)) != i:
            raise DatasetSchemaError(f"特征列名应为 f{i}，实际 {column}", column=str(column))
    if not feature_columns:
        raise DatasetSchemaError("数据文件没有特征列", column="f0")

    missing = frame.isna()
    if missing.values.any():
        row, col = np.argwhere(missing.values)[0]
        raise DatasetSchemaError(f"第 {row + 1} 行 {columns[col]} 列缺失", row=int(row) + 1, column=str(columns[col]))

    try:
        features = frame[feature_columns].to_numpy(dtype=float)
    except ValueError as e:
        raise DatasetSchemaError(f"特征列包含非数值: {str(e)}")

    labels = _integer_column(frame, "label")
    groups = None
    if "group" in columns:
        groups = _integer_column(frame, "group")
        bad = np.flatnonzero(~np.isin(groups, (0, 1)))
        if bad.size:
            raise DatasetSchemaError(f"第 {bad[0] + 1} 行 group 取值必须为 0/1", row=int(bad[0]) + 1, column="group")

    data = Dataset(features=features, labels=labels, groups=groups, num_classes=num_classes, name=path.stem)
    logger.debug(f"已读取数据集: {path}, n={data.n}, d={data.dim}")
    return data


def _integer_column(frame: pd.DataFrame, column: str) -> np.ndarray:
    values = pd.to_numeric(frame[column], errors='coerce').to_numpy(dtype=float)
    bad = np.flatnonzero(~np.isfinite(values) | (np.mod(values, 1) != 0))
    if bad.size:
        raise DatasetSchemaError(f"第 {bad[0] + 1} 行 {column} 必须为整数", row=int(bad[0]) + 1, column=column)
    return values.astype(np.int64)


def dataset_to_csv(data: Dataset) -> str:
    """数据集序列化为 CSV 文本"""
    frame = pd.DataFrame(data.features, columns=[f"f{i}" for i in range(data.dim)])
    frame["label"] = data.labels
    if data.has_groups:
        frame["group"] = data.groups
    buffer = io.StringIO()
    frame.to_csv(buffer, index=False, float_format="%.17g", lineterminator="\n")
    return buffer.getvalue()


def save_dataset(data: Dataset, path: Union[str, Path]) -> Path:
    """
    保存数据集为 CSV

    Args:
        data: 数据集
        path: 文件路径

    Returns:
        Path: 写入路径
    """
    return atomic_write_text(path, dataset_to_csv(data))


def model_to_dict(model: GlmModel) -> dict:
    """模型序列化为字典"""
    return {
        "numClasses": model.num_classes,
        "dim": model.dim,
        "hasBias": model.has_bias,
        "theta": [float(x) for x in model.theta],
    }


def model_from_dict(payload: dict) -> GlmModel:
    """由字典构造模型，校验字段与参数长度"""
    for key in ("numClasses", "dim", "hasBias", "theta"):
        if key not in payload:
            raise ModelFileError(f"模型文件缺少字段 {key}")
    try:
        num_classes = int(payload["numClasses"])
        dim = int(payload["dim"])
        has_bias = bool(payload["hasBias"])
        theta = np.asarray(payload["theta"], dtype=float)
    except (TypeError, ValueError) as e:
        raise ModelFileError(f"模型文件字段类型错误: {str(e)}")
    if num_classes < 2 or dim < 1:
        raise ModelFileError(f"模型结构非法: numClasses={num_classes}, dim={dim}")
    expected = param_count(num_classes, dim, has_bias)
    if theta.ndim != 1 or theta.size != expected:
        raise ModelFileError(f"theta 长度 {theta.size} 与期望 {expected} 不一致")
    if not np.all(np.isfinite(theta)):
        raise ModelFileError("theta 包含非有限值")
    return GlmModel(theta=theta, num_classes=num_classes, dim=dim, has_bias=has_bias)


def save_model(model: GlmModel, path: Union[str, Path]) -> Path:
    """保存模型为 JSON（float 以 repr 写出，可逐位还原）"""
    text = json.dumps(model_to_dict(model), indent=config.get('data.json_indent', 2), sort_keys=True)
    return atomic_write_text(path, text + "\n")


def load_model(path: Union[str, Path]) -> GlmModel:
    """
    读取 JSON 模型

    Args:
        path: 文件路径

    Returns:
        GlmModel: 模型

    Raises:
        ModelFileError: 文件不存在、格式错误或长度不一致
    """
    path = Path(path)
    if not path.exists():
        raise ModelFileError(f"模型文件不存在: {path}")
    try:
        payload = json.loads(path.read_text(encoding=config.get('data.file_encoding', 'utf-8')))
    except json.JSONDecodeError as e:
        raise ModelFileError(f"模型文件解析失败: {path}, {str(e)}")
    if not isinstance(payload, dict):
        raise ModelFileError(f"模型文件顶层必须为对象: {path}")
    return model_from_dict(payload)


def split_halves_stratified(data: Dataset, seed: int) -> Tuple[Dataset, Dataset]:
    """
    按类别分层对半划分

    每个类别内随机打乱后平分，奇数个样本的类别轮流把多出的一个分给两半，
    使每类计数差 ≤ 1 且两半总数尽量均衡。

    Args:
        data: 数据集
        seed: 随机种子

    Returns:
        Tuple[Dataset, Dataset]: 两个不相交且并集为原集的子集
    """
    rng = np.random.default_rng(seed)
    first, second = [], []
    extra_to_first = True
    for label in range(data.num_classes):
        members = np.flatnonzero(data.labels == label)
        if members.size == 0:
            continue
        if members.size < 2:
            raise SplitError(f"类别 {label} 只有 {members.size} 个样本，无法划分")
        members = rng.permutation(members)
        half = members.size // 2
        if members.size % 2:
            cut = half + 1 if extra_to_first else half
            extra_to_first = not extra_to_first
        else:
            cut = half
        first.extend(members[:cut].tolist())
        second.extend(members[cut:].tolist())
    return data.subset(sorted(first)), data.subset(sorted(second))
