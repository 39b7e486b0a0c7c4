#!/usr/bin/env python3
"""
正态-逆伽马(NIG)共轭AR(1)分段模型

每个候选分段(最近变点为 s)的收益率满足
    y_t = mu + alpha * y_{t-1} + sigma * eps_t,   eps_t ~ N(0, 1)
先验为零均值NIG：sigma^2 ~ IG(a, b)，beta=[mu alpha]^T | sigma^2 ~ N(0, sigma^2 V0)，
V0 = diag(delta0^2, delta1^2)（省略 mu 时 V0 = delta1^2）。

充分统计量 (V, y_tilde, ||y||^2, count) 用 Sherman-Morrison 秩一更新递推，
不保存 V 的逆，每次更新代价固定。

Student-t 约定：StudentT.scale_sq 是尺度参数的平方（NIG后验预测的标准形式）。
"""

from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np
from scipy import stats
from scipy.special import gammaln

from .cp_errors import CPInputError


@dataclass(frozen=True)
class Hyperparams:
    """NIG先验超参数（默认值取自标普500实验设置）"""
    a: float = 5e-4               # 逆伽马形状参数
    b: float = 5e-4               # 逆伽马尺度参数
    delta0: float = 10.0          # 截距 mu 的先验尺度
    delta1: float = 0.02          # AR系数 alpha 的先验尺度
    include_mu: bool = True       # 是否建模截距 mu

    def __post_init__(self):
        for name in ("a", "b", "delta0", "delta1"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise CPInputError(f"超参数 {name} 必须为正的有限数，当前为 {value}")

    @property
    def dim(self) -> int:
        """回归向量维数：含 mu 时为2，否则为1"""
        return 2 if self.include_mu else 1

    @property
    def V0(self) -> np.ndarray:
        if self.include_mu:
            return np.diag([self.delta0 ** 2, self.delta1 ** 2])
        return np.array([[self.delta1 ** 2]])


@dataclass(frozen=True)
class SegmentStats:
    """单个候选分段的充分统计量"""
    V: np.ndarray                 # 后验设计协方差因子 V_{s,t}（d x d）
    y_tilde: np.ndarray           # sum_i y_i h_i^T（d 维）
    sum_sq: float                 # ||y_{s+1:t}||^2
    count: int                    # 自候选变点以来吸收的观测数 t - s

    @property
    def w(self) -> np.ndarray:
        """后验均值 w = V y_tilde"""
        return self.V @ self.y_tilde


@dataclass(frozen=True)
class StudentT:
    """位置-尺度 Student-t 分布"""
    dof: float                    # 自由度
    loc: float                    # 中心
    scale_sq: float               # 尺度参数的平方

    def __post_init__(self):
        if not (self.dof > 0 and self.scale_sq > 0):
            raise CPInputError(f"非法Student-t参数: dof={self.dof}, scale_sq={self.scale_sq}")

    @property
    def scale(self) -> float:
        return float(np.sqrt(self.scale_sq))


@dataclass(frozen=True)
class BivStudentT:
    """二维 Student-t（beta=[mu alpha]^T 的后验）"""
    dof: float
    loc: np.ndarray
    shape: np.ndarray             # 尺度矩阵 (b/a) V

    def marginal(self, i: int) -> StudentT:
        """第 i 个分量的边缘分布：同自由度的一维 Student-t"""
        return StudentT(self.dof, float(self.loc[i]), float(self.shape[i, i]))


@dataclass(frozen=True)
class InverseGamma:
    """逆伽马分布 IG(shape, scale)"""
    shape: float
    scale: float

    def __post_init__(self):
        if not (self.shape > 0 and self.scale > 0):
            raise CPInputError(f"非法逆伽马参数: shape={self.shape}, scale={self.scale}")

    @property
    def mode(self) -> float:
        return self.scale / (self.shape + 1.0)


Distribution = Union[StudentT, InverseGamma]


def regressor(y_prev: float, dim: int) -> np.ndarray:
    """回归行向量 h = [1, y_prev]（省略 mu 时为 [y_prev]）"""
    if dim == 2:
        return np.array([1.0, y_prev])
    return np.array([y_prev])


def _check_finite(*values: float) -> None:
    for v in values:
        if not np.isfinite(v):
            raise CPInputError(f"输入必须为有限数，当前为 {v}")


# ============ 批量统计量（滤波器每步对所有支撑点一次性更新） ============

@dataclass(frozen=True)
class SegmentBatch:
    """k 个分段统计量的堆叠表示，行顺序与滤波器支撑点一致"""
    V: np.ndarray                 # (k, d, d)
    y_tilde: np.ndarray           # (k, d)
    sum_sq: np.ndarray            # (k,)
    count: np.ndarray             # (k,) int64

    @classmethod
    def prior(cls, h: Hyperparams, k: int = 1) -> "SegmentBatch":
        d = h.dim
        return cls(
            V=np.broadcast_to(h.V0, (k, d, d)).copy(),
            y_tilde=np.zeros((k, d)),
            sum_sq=np.zeros(k),
            count=np.zeros(k, dtype=np.int64),
        )

    @classmethod
    def from_stats(cls, items) -> "SegmentBatch":
        items = list(items)
        return cls(
            V=np.stack([s.V for s in items]),
            y_tilde=np.stack([s.y_tilde for s in items]),
            sum_sq=np.array([s.sum_sq for s in items], dtype=float),
            count=np.array([s.count for s in items], dtype=np.int64),
        )

    def __len__(self) -> int:
        return self.sum_sq.shape[0]

    @property
    def dim(self) -> int:
        return self.V.shape[-1]

    def stats(self, i: int) -> SegmentStats:
        return SegmentStats(self.V[i].copy(), self.y_tilde[i].copy(),
                            float(self.sum_sq[i]), int(self.count[i]))

    def take(self, idx: np.ndarray) -> "SegmentBatch":
        return SegmentBatch(self.V[idx], self.y_tilde[idx], self.sum_sq[idx], self.count[idx])

    def concat(self, other: "SegmentBatch") -> "SegmentBatch":
        return SegmentBatch(
            np.concatenate([self.V, other.V]),
            np.concatenate([self.y_tilde, other.y_tilde]),
            np.concatenate([self.sum_sq, other.sum_sq]),
            np.concatenate([self.count, other.count]),
        )

    def update(self, y_new: float, y_prev: float) -> "SegmentBatch":
        """所有分段吸收 (y_new, y_prev)：Sherman-Morrison 秩一更新"""
        _check_finite(y_new, y_prev)
        hv = regressor(y_prev, self.dim)
        Vh = np.einsum("kij,j->ki", self.V, hv)
        denom = 1.0 + Vh @ hv
        V = self.V - Vh[:, :, None] * Vh[:, None, :] / denom[:, None, None]
        V = 0.5 * (V + np.swapaxes(V, 1, 2))
        return SegmentBatch(
            V=V,
            y_tilde=self.y_tilde + y_new * hv,
            sum_sq=self.sum_sq + y_new * y_new,
            count=self.count + 1,
        )

    def shape_scale(self, h: Hyperparams) -> Tuple[np.ndarray, np.ndarray]:
        """(a_st, b_st)；残差在0处截断以吸收舍入误差"""
        w = np.einsum("kij,kj->ki", self.V, self.y_tilde)
        resid = self.sum_sq - np.einsum("ki,ki->k", w, self.y_tilde)
        a_st = h.a + 0.5 * self.count
        b_st = h.b + 0.5 * np.maximum(resid, 0.0)
        return a_st, b_st

    def predictive(self, h: Hyperparams, y_prev: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """每个分段下一期收益的后验预测 (dof, loc, scale_sq)"""
        _check_finite(y_prev)
        hv = regressor(y_prev, self.dim)
        a_st, b_st = self.shape_scale(h)
        w = np.einsum("kij,kj->ki", self.V, self.y_tilde)
        Vh = np.einsum("kij,j->ki", self.V, hv)
        dof = 2.0 * a_st
        loc = w @ hv
        scale_sq = (b_st / a_st) * (1.0 + Vh @ hv)
        return dof, loc, scale_sq


def student_t_logpdf(y: float, dof, loc, scale_sq) -> np.ndarray:
    """向量化的位置-尺度 Student-t 对数密度"""
    return stats.t.logpdf(y, dof, loc=loc, scale=np.sqrt(scale_sq))


# ============ 单分段操作 ============

def seg_init(h: Hyperparams) -> SegmentStats:
    """空分段：V = V0，y_tilde = 0"""
    return SegmentStats(h.V0.copy(), np.zeros(h.dim), 0.0, 0)


def seg_update(s: SegmentStats, y_new: float, y_prev: float) -> SegmentStats:
    """吸收一个观测；回归维数由 V 的形状决定"""
    return SegmentBatch.from_stats([s]).update(y_new, y_prev).stats(0)


def seg_shape_scale(s: SegmentStats, h: Hyperparams) -> Tuple[float, float]:
    a_st, b_st = SegmentBatch.from_stats([s]).shape_scale(h)
    return float(a_st[0]), float(b_st[0])


def predictive(s: SegmentStats, h: Hyperparams, y_prev: float) -> StudentT:
    """给定最近变点时下一期收益的后验预测分布"""
    dof, loc, scale_sq = SegmentBatch.from_stats([s]).predictive(h, y_prev)
    return StudentT(float(dof[0]), float(loc[0]), float(scale_sq[0]))


def logpdf(st: StudentT, y: float) -> float:
    return float(student_t_logpdf(y, st.dof, st.loc, st.scale_sq))


def param_posterior(s: SegmentStats, h: Hyperparams) -> BivStudentT:
    """beta=[mu alpha]^T 的后验；要求建模 mu"""
    if not h.include_mu or s.V.shape != (2, 2):
        raise CPInputError("param_posterior 需要包含 mu 的二维模型")
    a_st, b_st = seg_shape_scale(s, h)
    return BivStudentT(2.0 * a_st, s.w, (b_st / a_st) * s.V)


def sigma2_posterior(s: SegmentStats, h: Hyperparams) -> InverseGamma:
    a_st, b_st = seg_shape_scale(s, h)
    return InverseGamma(a_st, b_st)


def coefficient_marginal(s: SegmentStats, h: Hyperparams, i: int) -> StudentT:
    """回归系数第 i 个分量的边缘后验（省略 mu 时也可用于 alpha）"""
    a_st, b_st = seg_shape_scale(s, h)
    return StudentT(2.0 * a_st, float(s.w[i]), (b_st / a_st) * float(s.V[i, i]))


def _check_level(q: float) -> None:
    if not (0.0 < q < 1.0):
        raise CPInputError(f"分位点必须在 (0, 1) 内，当前为 {q}")


def cdf(dist: Distribution, x: float) -> float:
    if isinstance(dist, StudentT):
        return float(stats.t.cdf(x, dist.dof, loc=dist.loc, scale=dist.scale))
    return float(stats.invgamma.cdf(x, dist.shape, scale=dist.scale))


def quantile(dist: Distribution, q: float) -> float:
    """分位数：正则化不完全beta/gamma函数的数值反函数"""
    _check_level(q)
    if isinstance(dist, StudentT):
        return float(stats.t.ppf(q, dist.dof, loc=dist.loc, scale=dist.scale))
    return float(stats.invgamma.ppf(q, dist.shape, scale=dist.scale))


def segment_log_evidence(y: np.ndarray, y_prev: np.ndarray, h: Hyperparams) -> float:
    """
    分段边际似然 log p(y_{s+1:t} | y_s) 的闭式解（显式组装设计矩阵 H）

    Args:
        y: 分段观测 y_{s+1..t}
        y_prev: 对应的滞后值 y_{s..t-1}
        h: 超参数
    """
    y = np.asarray(y, dtype=float)
    H = np.column_stack([np.ones_like(y), y_prev]) if h.include_mu else np.asarray(y_prev, float)[:, None]
    V0_inv = np.linalg.inv(h.V0)
    Vn = np.linalg.inv(V0_inv + H.T @ H)
    wn = Vn @ (H.T @ y)
    an = h.a + 0.5 * len(y)
    bn = h.b + 0.5 * (y @ y - wn @ np.linalg.solve(Vn, wn))
    _, logdet_n = np.linalg.slogdet(Vn)
    _, logdet_0 = np.linalg.slogdet(h.V0)
    return float(
        -0.5 * len(y) * np.log(2.0 * np.pi)
        + 0.5 * (logdet_n - logdet_0)
        + h.a * np.log(h.b) - an * np.log(bn)
        + gammaln(an) - gammaln(h.a)
    )
