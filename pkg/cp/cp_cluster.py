#!/usr/bin/env python3
"""
平均连接(UPGMA)层次聚类

叶子编号 0..m-1，第 i 次合并产生簇 m+i。
簇间距离为所有跨簇样本对的非加权平均；实现上维护跨簇距离之和
S(u+v, w) = S(u, w) + S(v, w)（Lance-Williams 按大小加权更新的非归一化形式），
高度 = S / (|u| |w|)。并列时取簇编号对（小, 大）字典序最小的一对；
记录合并时含最小叶子编号的簇放在左边，叶序中每棵子树都以其最小叶子开头。
"""

import json
from dataclasses import dataclass
from typing import List, NamedTuple, Tuple

import numpy as np
import pandas as pd

from .cp_errors import CPInputError, CPNumericError
from .cp_metric import DissimilarityMatrix

MONOTONE_TOLERANCE = 1e-12


class Merge(NamedTuple):
    """一次合并"""
    left: int                     # 含最小叶子编号的簇
    right: int                    # 另一个簇
    height: float                 # 合并高度（平均跨簇距离）
    size: int                     # 新簇的叶子数


@dataclass(frozen=True)
class Dendrogram:
    """平均连接树状图"""
    m: int
    merges: Tuple[Merge, ...]

    def __post_init__(self):
        if len(self.merges) != self.m - 1:
            raise CPInputError(f"{self.m} 个叶子需要 {self.m - 1} 次合并，实际 {len(self.merges)}")
        sizes = [1] * self.m
        for i, mg in enumerate(self.merges):
            if not (0 <= mg.left < self.m + i and 0 <= mg.right < self.m + i):
                raise CPInputError(f"第 {i} 次合并引用了不存在的簇")
            if mg.size != sizes[mg.left] + sizes[mg.right]:
                raise CPInputError(f"第 {i} 次合并的大小不一致")
            sizes.append(mg.size)
        heights = np.array([mg.height for mg in self.merges])
        drops = heights[:-1] - heights[1:]
        if np.any(drops > MONOTONE_TOLERANCE * np.maximum(1.0, np.abs(heights[:-1]))):
            raise CPNumericError("树状图高度不单调")

    def to_dict(self) -> dict:
        return {"m": self.m, "merges": [[mg.left, mg.right, mg.height, mg.size] for mg in self.merges]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "Dendrogram":
        doc = json.loads(text)
        return cls(int(doc["m"]), tuple(Merge(int(l), int(r), float(h), int(s)) for l, r, h, s in doc["merges"]))


def _check_matrix(d: DissimilarityMatrix) -> np.ndarray:
    v = d.values
    if d.m < 2:
        raise CPInputError("至少需要两个序列才能聚类")
    if np.any(v < 0):
        raise CPInputError("相异度矩阵存在负值")
    if np.max(np.abs(v - v.T)) > 1e-12:
        raise CPInputError("相异度矩阵不对称")
    return v


def average_linkage(d: DissimilarityMatrix) -> Dendrogram:
    """朴素 O(m^3) UPGMA：每步扫描所有活跃簇对的最小平均距离"""
    v = _check_matrix(d)
    m = d.m
    sums = v.astype(float).copy()        # 槽位之间的跨簇距离之和
    sizes = np.ones(m)
    ids = np.arange(m)                   # 槽位当前对应的簇编号
    min_leaf = np.arange(m)              # 槽位中最小的叶子编号，决定左右
    active = np.ones(m, dtype=bool)
    merges: List[Merge] = []

    for k in range(m - 1):
        slots = np.flatnonzero(active)
        sub = sums[np.ix_(slots, slots)] / np.outer(sizes[slots], sizes[slots])
        sub[np.tril_indices(len(slots))] = np.inf
        height = sub.min()
        ii, jj = np.nonzero(sub == height)
        pairs = sorted((min(ids[slots[a]], ids[slots[b]]), max(ids[slots[a]], ids[slots[b]]), slots[a], slots[b])
                       for a, b in zip(ii, jj))
        _, _, a, b = pairs[0]
        if min_leaf[b] < min_leaf[a]:
            a, b = b, a
        merges.append(Merge(int(ids[a]), int(ids[b]), float(height), int(sizes[a] + sizes[b])))

        # 合并结果放入槽位 a，槽位 b 失效
        sums[a, :] += sums[b, :]
        sums[:, a] = sums[a, :]
        sums[a, a] = 0.0
        sizes[a] += sizes[b]
        ids[a] = m + k
        min_leaf[a] = min(min_leaf[a], min_leaf[b])
        active[b] = False

    return Dendrogram(m, tuple(merges))


def leaf_order(dgm: Dendrogram) -> List[int]:
    """从根开始先左后右遍历叶子"""
    m = dgm.m
    order: List[int] = []
    stack = [2 * m - 2]
    while stack:
        node = stack.pop()
        if node < m:
            order.append(node)
        else:
            mg = dgm.merges[node - m]
            stack.append(mg.right)
            stack.append(mg.left)
    return order


def cut(dgm: Dendrogram, k: int) -> np.ndarray:
    """撤销最后 k-1 次合并得到 k 个簇；簇号按叶序首次出现的顺序编为 0..k-1"""
    m = dgm.m
    if not (1 <= k <= m):
        raise CPInputError(f"簇数 k 必须在 [1, {m}] 内，当前为 {k}")
    parent = list(range(2 * m - 1))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for i, mg in enumerate(dgm.merges[: m - k]):
        parent[find(mg.left)] = m + i
        parent[find(mg.right)] = m + i

    labels = np.full(m, -1, dtype=np.int64)
    seen = {}
    for leaf in leaf_order(dgm):
        root = find(leaf)
        if root not in seen:
            seen[root] = len(seen)
        labels[leaf] = seen[root]
    return labels


def clusters_frame(d: DissimilarityMatrix, labels: np.ndarray) -> pd.DataFrame:
    """平切结果表 (label, cluster)，行顺序与矩阵一致"""
    return pd.DataFrame({"label": list(d.labels), "cluster": labels})
