"""
合成数据生成服务

所有生成器在固定种子下逐位确定。
"""
from typing import List, Tuple

import numpy as np

from src.models.dataset import Dataset


def synth_blobs(n: int, d: int, num_classes: int = 2, separation: float = 2.0, seed: int = 0) -> Dataset:
    """
    高斯类簇数据

    各类均值为随机单位向量乘以 separation，类别数量均衡，噪声为标准正态。

    Args:
        n: 样本数
        d: 特征维度
        num_classes: 类别数
        separation: 类均值到原点的距离
        seed: 随机种子

    Returns:
        Dataset: 数据集
    """
    if num_classes < 2:
        raise ValueError(f"num_classes 必须 ≥ 2，实际 {num_classes}")
    if n < num_classes or d < 1:
        raise ValueError(f"样本数必须 ≥ 类别数且维度 ≥ 1，实际 n={n}, d={d}")
    if separation < 0:
        raise ValueError(f"separation 必须 ≥ 0，实际 {separation}")
    rng = np.random.default_rng(seed)
    directions = rng.normal(size=(num_classes, d))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    means = separation * directions
    labels = rng.permutation(np.arange(n) % num_classes)
    features = means[labels] + rng.normal(size=(n, d))
    return Dataset(features=features, labels=labels, num_classes=num_classes, name="blobs")


def synth_biased_groups(n: int, d: int, base_rate_gap: float = 0.2, seed: int = 0,
                        signal: float = 1.0, group_shift: float = 1.0) -> Dataset:
    """
    带敏感属性的二分类数据，两组正例率相差 base_rate_gap

    两组各占一半；组 0 正例率 0.5 + gap/2，组 1 正例率 0.5 − gap/2，正例数按比例精确取整。
    前 d−1 维携带标签信号，最后一维与分组相关。

    Args:
        n: 样本数
        d: 特征维度（≥ 2）
        base_rate_gap: 两组正例率之差
        seed: 随机种子
        signal: 标签信号强度
        group_shift: 分组特征偏移

    Returns:
        Dataset: 带 group 列的数据集
    """
    if n < 4 or d < 2:
        raise ValueError(f"需要 n ≥ 4 且 d ≥ 2，实际 n={n}, d={d}")
    if not 0 <= base_rate_gap <= 1:
        raise ValueError(f"base_rate_gap 必须位于 [0, 1]，实际 {base_rate_gap}")
    rng = np.random.default_rng(seed)
    sizes = (n // 2, n - n // 2)
    rates = (0.5 + base_rate_gap / 2, 0.5 - base_rate_gap / 2)
    groups, labels = [], []
    for g, (size, rate) in enumerate(zip(sizes, rates)):
        positives = int(round(rate * size))
        groups.append(np.full(size, g))
        labels.append(rng.permutation(np.r_[np.ones(positives), np.zeros(size - positives)]))
    groups = np.concatenate(groups).astype(np.int64)
    labels = np.concatenate(labels).astype(np.int64)
    order = rng.permutation(n)
    groups, labels = groups[order], labels[order]

    direction = rng.normal(size=d - 1)
    direction /= np.linalg.norm(direction)
    features = np.empty((n, d))
    features[:, :d - 1] = np.outer(2 * labels - 1, signal * direction) + rng.normal(size=(n, d - 1))
    features[:, d - 1] = group_shift * (2 * groups - 1) + rng.normal(size=n)
    return Dataset(features=features, labels=labels, groups=groups, num_classes=2, name="biased_groups")


def impossibility_dataset(d: int, k: int, seed: int = 0,
                          fix_labels: bool = False) -> Tuple[Dataset, Dataset, int, List[int]]:
    """
    目标样本无法进入前 k 名的单位向量构造

    训练集依次为 (e_2, y_2) … (e_d, y_d)、目标 (e_1, +1)、k 个 (−e_1, +1)；测试集为 {(e_1, +1)}。
    y_i 由种子从 {+1, −1} 抽取（fix_labels 时全为 +1），+1/−1 映射为标签 1/0。
    配套使用无偏置二分类模型。

    Args:
        d: 维度（≥ 2）
        k: 重复样本个数（≥ 1）
        seed: 随机种子
        fix_labels: 是否固定 y_i = +1

    Returns:
        Tuple[Dataset, Dataset, int, List[int]]: (训练集, 测试集, 目标下标, 重复样本下标)
    """
    if d < 2 or k < 1:
        raise ValueError(f"需要 d ≥ 2 且 k ≥ 1，实际 d={d}, k={k}")
    rng = np.random.default_rng(seed)
    eye = np.eye(d)
    other_labels = np.ones(d - 1, dtype=np.int64) if fix_labels else rng.integers(0, 2, size=d - 1)
    features = np.vstack([eye[1:], eye[:1], np.repeat(-eye[:1], k, axis=0)])
    labels = np.concatenate([other_labels, np.ones(1 + k, dtype=np.int64)])
    train = Dataset(features=features, labels=labels, num_classes=2, name="impossibility_train")
    test = Dataset(features=eye[:1], labels=np.ones(1, dtype=np.int64), num_classes=2, name="impossibility_test")
    target_idx = d - 1
    return train, test, target_idx, list(range(d, d + k))
