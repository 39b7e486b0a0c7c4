#!/usr/bin/env python3
"""
变点后验之间的 Wasserstein-1 距离与相异度矩阵

整数支撑上的 W1 等于两个CDF之差的绝对值之和：W1 = sum_s |F1(s) - F2(s)|。
最大支撑点之后两个CDF都等于1，求和天然有限。
"""

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.stats import wasserstein_distance

from .cp_errors import CPInputError

MASS_TOLERANCE = 1e-9


@dataclass(frozen=True)
class SparsePmf:
    """整数支撑上的稀疏概率质量函数"""
    support: np.ndarray           # 严格递增的非负整数
    probs: np.ndarray             # 对应概率（>0）

    def __post_init__(self):
        support = np.asarray(self.support)
        probs = np.asarray(self.probs, dtype=float)
        if support.ndim != 1 or support.shape != probs.shape or support.size == 0:
            raise CPInputError("pmf 的支撑与概率必须是等长的非空一维序列")
        if not np.all(np.equal(np.mod(support, 1), 0)) or np.any(support < 0):
            raise CPInputError("pmf 支撑必须为非负整数")
        if np.any(np.diff(support) <= 0):
            raise CPInputError("pmf 支撑必须严格递增")
        if not np.all(np.isfinite(probs)) or np.any(probs <= 0):
            raise CPInputError("pmf 概率必须为正的有限数")
        mass = probs.sum()
        if abs(mass - 1.0) > MASS_TOLERANCE:
            raise CPInputError(f"pmf 总质量偏离1过多: {mass!r}")
        object.__setattr__(self, "support", support.astype(np.int64))
        object.__setattr__(self, "probs", probs / mass)

    @classmethod
    def dirac(cls, s: int) -> "SparsePmf":
        return cls(np.array([s]), np.array([1.0]))

    def cdf(self, s: np.ndarray) -> np.ndarray:
        """F(s) = P(tau <= s)"""
        cum = np.cumsum(self.probs)
        idx = np.searchsorted(self.support, s, side="right")
        return np.where(idx > 0, cum[np.maximum(idx - 1, 0)], 0.0)

    def shift(self, k: int) -> "SparsePmf":
        return SparsePmf(self.support + k, self.probs)

    def to_dict(self) -> Dict[str, list]:
        return {"support": self.support.tolist(), "probs": self.probs.tolist()}


def w1(p: SparsePmf, q: SparsePmf) -> float:
    """W1(p, q)：合并两者支撑后累加 |dCDF| x 间隔长度"""
    return float(wasserstein_distance(p.support, q.support, p.probs, q.probs))


@dataclass(frozen=True)
class DissimilarityMatrix:
    """固定时刻的两两 W1 距离矩阵"""
    labels: Tuple[str, ...]       # 序列标识
    values: np.ndarray            # m x m

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        m = len(self.labels)
        if values.shape != (m, m):
            raise CPInputError(f"矩阵形状 {values.shape} 与标签数 {m} 不符")
        if len(set(self.labels)) != m:
            raise CPInputError("序列标签重复")
        object.__setattr__(self, "labels", tuple(str(x) for x in self.labels))
        object.__setattr__(self, "values", values)

    @property
    def m(self) -> int:
        return len(self.labels)

    def reorder(self, order: Sequence[int]) -> "DissimilarityMatrix":
        order = np.asarray(order)
        return DissimilarityMatrix(tuple(self.labels[i] for i in order), self.values[np.ix_(order, order)])

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.values, index=list(self.labels), columns=list(self.labels))
        frame.index.name = "label"
        return frame

    def to_csv(self, path: str) -> None:
        """表头为标签行，随后每个序列一行（标签 + m 个17位有效数字的数值）"""
        self.to_frame().to_csv(path, float_format="%.17g")

    @classmethod
    def read_csv(cls, path: str) -> "DissimilarityMatrix":
        try:
            frame = pd.read_csv(path, dtype=str, keep_default_na=False)
        except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
            raise CPInputError(f"相异度矩阵CSV格式错误: {e}") from e
        labels = list(frame.iloc[:, 0])
        if labels != list(frame.columns[1:]):
            raise CPInputError("相异度矩阵的行标签与表头不一致")
        try:
            values = frame.iloc[:, 1:].to_numpy().astype(float)
        except ValueError as e:
            raise CPInputError(f"相异度矩阵包含非数值: {e}") from e
        if not np.all(np.isfinite(values)):
            raise CPInputError("相异度矩阵包含缺失或非有限值")
        return cls(tuple(labels), values)


def pairwise(pmfs: Sequence[Tuple[str, SparsePmf]]) -> DissimilarityMatrix:
    """两两 W1；各元素互相独立，结果与计算顺序无关"""
    pmfs = list(pmfs)
    if len(pmfs) < 2:
        raise CPInputError("至少需要两个 pmf")
    labels = [label for label, _ in pmfs]
    if len(set(labels)) != len(labels):
        raise CPInputError("序列标签重复")
    m = len(pmfs)
    values = np.zeros((m, m))
    for i in range(m):
        for j in range(i + 1, m):
            values[i, j] = values[j, i] = w1(pmfs[i][1], pmfs[j][1])
    return DissimilarityMatrix(tuple(labels), values)


def validate_dissimilarity(d: DissimilarityMatrix, tol: float = 1e-9,
                           triples: Optional[int] = 1000, seed: int = 0) -> List[str]:
    """
    检查度量公理，返回问题描述列表（空列表表示通过）

    Args:
        d: 相异度矩阵
        tol: 容差
        triples: 随机抽查的三元组数量；None 表示检查全部三元组
        seed: 抽查用随机种子
    """
    v = d.values
    problems = []
    if np.any(v < 0):
        problems.append("存在负值")
    if np.max(np.abs(v - v.T)) > 1e-12:
        problems.append("矩阵不对称")
    if np.any(np.diag(v) != 0):
        problems.append("对角线非零")
    m = d.m
    if triples is None:
        i, j, k = (a.ravel() for a in np.meshgrid(np.arange(m), np.arange(m), np.arange(m), indexing="ij"))
    else:
        rng = np.random.default_rng(seed)
        i, j, k = rng.integers(0, m, size=(3, triples))
    if np.any(v[i, k] > v[i, j] + v[j, k] + tol):
        problems.append("违反三角不等式")
    return problems
