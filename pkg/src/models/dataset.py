"""数据集数据模型"""
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from src.exceptions import DatasetSchemaError, DimensionMismatchError


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class Dataset:
    """数据集数据类"""
    features: np.ndarray  # 特征矩阵 n×d
    labels: np.ndarray  # 标签，取值 [0, num_classes)
    groups: Optional[np.ndarray] = None  # 敏感属性分组（0/1）
    sample_weights: Optional[np.ndarray] = None  # 样本权重，默认全 1
    num_classes: Optional[int] = None  # 类别数，为空时由标签推断
    name: str = field(default="", compare=False)  # 数据集名称

    def __post_init__(self):
        features = np.asarray(self.features, dtype=float)
        if features.ndim == 1 and features.size == 0:
            features = features.reshape(0, 1)
        if features.ndim != 2 or features.shape[1] < 1:
            raise DimensionMismatchError(f"特征矩阵必须为二维且维度 ≥ 1，实际形状 {features.shape}")
        n = features.shape[0]

        labels = np.asarray(self.labels)
        if labels.shape != (n,):
            raise DimensionMismatchError(f"标签长度 {labels.shape} 与样本数 {n} 不一致")
        if n and not np.all(np.equal(np.mod(labels, 1), 0)):
            raise DatasetSchemaError("标签必须为整数", column="label")
        labels = labels.astype(np.int64)
        if n and labels.min() < 0:
            raise DatasetSchemaError("标签不能为负数", column="label")

        num_classes = self.num_classes
        if num_classes is None:
            num_classes = max(2, int(labels.max()) + 1) if n else 2
        if n and labels.max() >= num_classes:
            raise DatasetSchemaError(f"标签超出类别数 {num_classes}", column="label")

        groups = self.groups
        if groups is not None:
            groups = np.asarray(groups)
            if groups.shape != (n,):
                raise DimensionMismatchError(f"分组长度 {groups.shape} 与样本数 {n} 不一致")
            if n and not np.isin(groups, (0, 1)).all():
                raise DatasetSchemaError("分组只能取 0 或 1", column="group")
            groups = _frozen(groups.astype(np.int64))

        weights = self.sample_weights
        if weights is not None:
            weights = np.asarray(weights, dtype=float)
            if weights.shape != (n,):
                raise DimensionMismatchError(f"样本权重长度 {weights.shape} 与样本数 {n} 不一致")
            if not np.all(np.isfinite(weights)) or np.any(weights < 0):
                raise DatasetSchemaError("样本权重必须为有限非负数", column="weight")
            weights = _frozen(weights)

        object.__setattr__(self, 'features', _frozen(features))
        object.__setattr__(self, 'labels', _frozen(labels))
        object.__setattr__(self, 'groups', groups)
        object.__setattr__(self, 'sample_weights', weights)
        object.__setattr__(self, 'num_classes', int(num_classes))

    @property
    def n(self) -> int:
        """样本数"""
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        """特征维度"""
        return self.features.shape[1]

    @property
    def is_empty(self) -> bool:
        """是否为空数据集"""
        return self.n == 0

    @property
    def has_groups(self) -> bool:
        """是否包含敏感属性"""
        return self.groups is not None

    @property
    def weights(self) -> np.ndarray:
        """有效样本权重"""
        if self.sample_weights is None:
            return np.ones(self.n)
        return np.asarray(self.sample_weights)

    def __len__(self) -> int:
        return self.n

    def subset(self, indices: Sequence[int]) -> 'Dataset':
        """
        按索引取子集

        Args:
            indices: 样本索引

        Returns:
            Dataset: 子数据集
        """
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            features=self.features[idx],
            labels=self.labels[idx],
            groups=None if self.groups is None else self.groups[idx],
            sample_weights=None if self.sample_weights is None else self.sample_weights[idx],
            num_classes=self.num_classes,
            name=self.name
        )

    def with_weights(self, weights: Optional[np.ndarray]) -> 'Dataset':
        """
        替换样本权重

        Args:
            weights: 新的样本权重，None 表示全 1

        Returns:
            Dataset: 新数据集
        """
        return Dataset(
            features=self.features,
            labels=self.labels,
            groups=self.groups,
            sample_weights=weights,
            num_classes=self.num_classes,
            name=self.name
        )

    @classmethod
    def empty(cls, dim: int, num_classes: int = 2) -> 'Dataset':
        """
        创建空数据集

        Args:
            dim: 特征维度
            num_classes: 类别数

        Returns:
            Dataset: 空数据集
        """
        return cls(features=np.zeros((0, dim)), labels=np.zeros(0, dtype=np.int64), num_classes=num_classes)
