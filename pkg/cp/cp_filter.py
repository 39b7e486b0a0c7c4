#!/usr/bin/env python3
"""
最近变点后验滤波器

对每条收益率序列维护 pi_t(s) = p(tau_t = s | y_{0:t})：
风险函数加权传播 -> 后验预测重加权 -> 对数空间归一化 -> 剪枝到 n 个支撑点。
剪枝时按概率保留前 n 个支撑点，概率相同时保留更大的 s（更近的变点）。

时间约定：tau = s 的支撑点在观测 y_{s+1} 的那一步创建，该步使用先验预测，
随后立即吸收 y_{s+1}，因此步进到时刻 t 后每个支撑点都有 count == t - s。
"""

import json
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Any, Dict, Iterator, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import stats
from scipy.optimize import brentq
from scipy.special import logsumexp

from .cp_errors import CPInputError, CPNumericError
from .cp_metric import SparsePmf
from .cp_model import (
    Hyperparams, SegmentBatch, SegmentStats, StudentT,
    coefficient_marginal, quantile, sigma2_posterior, student_t_logpdf,
)

STATE_FORMAT = "cp.filter_state"
STATE_VERSION = 1


class HazardKind(Enum):
    """变点间隔分布类型"""
    SHIFTED_GEOMETRIC = "shifted_geometric"   # 支撑为 {1,2,...} 的几何分布
    TABULATED = "tabulated"                   # 表格化的间隔CDF G(0), G(1), ...


@dataclass(frozen=True)
class HazardModel:
    """变点间隔分布 G 及其风险函数"""
    kind: HazardKind
    p: float = 0.0                            # 几何分布参数
    G: Tuple[float, ...] = ()                 # 表格化CDF，G[0] = 0

    def __post_init__(self):
        if self.kind is HazardKind.SHIFTED_GEOMETRIC:
            if not (0.0 < self.p < 1.0):
                raise CPInputError(f"几何分布参数必须在 (0, 1) 内，当前为 {self.p}")
        else:
            g = np.asarray(self.G, dtype=float)
            if g.size < 2 or g[0] != 0.0:
                raise CPInputError("表格化 G 至少两项且 G(0) = 0")
            if np.any(np.diff(g) < 0) or np.any(g < 0) or np.any(g > 1):
                raise CPInputError("表格化 G 必须单调不减且取值在 [0, 1]")

    @classmethod
    def shifted_geometric(cls, p: float) -> "HazardModel":
        return cls(HazardKind.SHIFTED_GEOMETRIC, p=float(p))

    @classmethod
    def tabulated(cls, G: Sequence[float]) -> "HazardModel":
        return cls(HazardKind.TABULATED, G=tuple(float(g) for g in G))

    def cdf(self, k: int) -> float:
        """G(k)；表格之外 G(k) = G[-1]"""
        if self.kind is HazardKind.SHIFTED_GEOMETRIC:
            return 1.0 - (1.0 - self.p) ** k
        return self.G[min(k, len(self.G) - 1)]

    @cached_property
    def _table(self) -> np.ndarray:
        # table[k] = 间隔 k 的风险值，k = 1..len(G)；支撑耗尽处为 NaN
        g = np.asarray(self.G, dtype=float)
        k = np.arange(1, len(g) + 1)
        prev = g[k - 1]
        cur = g[np.minimum(k, len(g) - 1)]
        with np.errstate(divide="ignore", invalid="ignore"):
            haz = np.where(prev < 1.0, (cur - prev) / (1.0 - prev), np.nan)
        return np.concatenate([[np.nan], haz])

    def hazards(self, gaps: np.ndarray) -> np.ndarray:
        """向量化风险函数 [G(gap) - G(gap-1)] / [1 - G(gap-1)]"""
        gaps = np.asarray(gaps, dtype=np.int64)
        if np.any(gaps < 1):
            raise CPInputError("间隔必须为正整数")
        if self.kind is HazardKind.SHIFTED_GEOMETRIC:
            return np.full(gaps.shape, self.p)
        haz = self._table[np.minimum(gaps, len(self.G))]
        if np.any(np.isnan(haz)):
            raise CPNumericError(f"风险函数支撑已耗尽: 间隔 {int(gaps[np.isnan(haz)][0])} 处 G = 1")
        return haz

    def to_dict(self) -> Dict[str, Any]:
        if self.kind is HazardKind.SHIFTED_GEOMETRIC:
            return {"kind": self.kind.value, "p": self.p}
        return {"kind": self.kind.value, "G": list(self.G)}

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "HazardModel":
        kind = HazardKind(d["kind"])
        if kind is HazardKind.SHIFTED_GEOMETRIC:
            return cls.shifted_geometric(d["p"])
        return cls.tabulated(d["G"])


def hazard(hm: HazardModel, gap: int) -> float:
    return float(hm.hazards(np.array([gap]))[0])


@dataclass(frozen=True)
class FilterConfig:
    """滤波配置：超参数、风险模型与支撑点上限（None 表示不剪枝）"""
    hyper: Hyperparams = field(default_factory=Hyperparams)
    hazard: HazardModel = field(default_factory=lambda: HazardModel.shifted_geometric(0.02))
    max_support: Optional[int] = 100

    def __post_init__(self):
        if self.max_support is not None and self.max_support < 1:
            raise CPInputError(f"max_support 必须 >= 1，当前为 {self.max_support}")


@dataclass(frozen=True)
class SupportAtom:
    """一个最近变点假设 tau = s"""
    s: int                        # 候选变点时刻
    log_weight: float             # 归一化对数后验质量
    stats: SegmentStats           # y_{s+1:t} 的统计量


@dataclass(frozen=True)
class FilterState:
    """单条序列在时刻 t 的滤波状态"""
    t: int                        # 已观测的 y_0 之后的收益数
    last_y: float                 # y_t，下一步的回归输入
    config: FilterConfig
    support: np.ndarray           # 支撑点 s，严格递增
    log_weights: np.ndarray       # 归一化对数权重
    segments: SegmentBatch        # 与 support 对齐的分段统计量

    @property
    def atoms(self) -> Tuple[SupportAtom, ...]:
        return tuple(
            SupportAtom(int(s), float(lw), self.segments.stats(i))
            for i, (s, lw) in enumerate(zip(self.support, self.log_weights))
        )

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_weights)


def _check_finite(y: float) -> None:
    if not np.isfinite(y):
        raise CPInputError(f"收益率必须为有限数，当前为 {y}")


def _require_started(state: FilterState) -> None:
    if state.t < 1:
        raise CPInputError("滤波器尚未观测任何收益（t = 0）")


def init(y0: float, config: Optional[FilterConfig] = None) -> FilterState:
    """t = 0 状态：只记录 y0，第一次 step 产生 pi_1 = delta_0"""
    _check_finite(y0)
    config = config or FilterConfig()
    return FilterState(
        t=0,
        last_y=float(y0),
        config=config,
        support=np.zeros(0, dtype=np.int64),
        log_weights=np.zeros(0),
        segments=SegmentBatch.prior(config.hyper, 0),
    )


def _normalize(log_weights: np.ndarray) -> np.ndarray:
    if np.any(np.isnan(log_weights)) or not np.any(np.isfinite(log_weights)):
        raise CPNumericError("所有支撑点权重均为零或非数")
    return log_weights - logsumexp(log_weights)


def step(state: FilterState, y_next: float) -> FilterState:
    """观测 y_{t+1}，返回 t+1 时刻的新状态"""
    _check_finite(y_next)
    cfg = state.config
    h = cfg.hyper
    t = state.t

    if t == 0:
        support = np.zeros(1, dtype=np.int64)
        log_w = np.zeros(1)
        segments = SegmentBatch.prior(h, 1)
    else:
        haz = cfg.hazard.hazards(t - state.support)
        with np.errstate(divide="ignore"):
            log_new = logsumexp(state.log_weights + np.log(haz))
            log_grow = state.log_weights + np.log1p(-haz)
        support = np.append(state.support, t)
        log_w = np.append(log_grow, log_new)
        segments = state.segments.concat(SegmentBatch.prior(h, 1))

    dof, loc, scale_sq = segments.predictive(h, state.last_y)
    log_w = log_w + student_t_logpdf(y_next, dof, loc, scale_sq)
    segments = segments.update(y_next, state.last_y)

    # 强制变点（风险为1）的支撑点权重为零，直接丢弃
    alive = np.isfinite(log_w) | np.isnan(log_w)
    if not np.all(alive):
        support, log_w, segments = support[alive], log_w[alive], segments.take(alive)
    log_w = _normalize(log_w)

    n = cfg.max_support
    if n is not None and len(support) > n:
        order = np.lexsort((support, log_w))
        keep = np.sort(order[-n:])
        support, segments = support[keep], segments.take(keep)
        log_w = _normalize(log_w[keep])

    return FilterState(t + 1, float(y_next), cfg, support, log_w, segments)


def run(y: Sequence[float], config: Optional[FilterConfig] = None) -> Iterator[FilterState]:
    """对 y_0, y_1, ... 依次滤波，产出 t = 1, 2, ... 的状态"""
    y = np.asarray(y, dtype=float)
    state = init(y[0], config)
    for value in y[1:]:
        state = step(state, value)
        yield state


def posterior(state: FilterState) -> SparsePmf:
    """pi_t 的稀疏表示；下溢为零的支撑点被省略"""
    _require_started(state)
    probs = state.probs
    positive = probs > 0
    return SparsePmf(state.support[positive], probs[positive])


def map_changepoint(state: FilterState) -> int:
    """最大后验最近变点；并列时取更大的 s"""
    _require_started(state)
    top = state.log_weights == state.log_weights.max()
    return int(state.support[top].max())


class ParamTarget(Enum):
    MU = "mu"
    ALPHA = "alpha"
    LOG_SIGMA = "log_sigma"


class ParamSummary(NamedTuple):
    point: float
    lo: float
    hi: float


def param_summary(state: FilterState, target: Union[ParamTarget, str], level: float = 0.95) -> ParamSummary:
    """
    以MAP最近变点为条件的参数摘要

    mu / alpha: 后验均值与等尾可信区间（Student-t 边缘分布）
    log_sigma: 逆伽马众数与等尾区间，经 x -> log(x)/2 映射
    """
    _require_started(state)
    if not (0.0 < level < 1.0):
        raise CPInputError(f"可信水平必须在 (0, 1) 内，当前为 {level}")
    target = ParamTarget(target)
    h = state.config.hyper
    idx = int(np.flatnonzero(state.support == map_changepoint(state))[0])
    seg = state.segments.stats(idx)
    tail = 0.5 * (1.0 - level)

    if target is ParamTarget.LOG_SIGMA:
        ig = sigma2_posterior(seg, h)
        return ParamSummary(0.5 * np.log(ig.mode),
                            0.5 * np.log(quantile(ig, tail)),
                            0.5 * np.log(quantile(ig, 1.0 - tail)))

    if target is ParamTarget.MU and not h.include_mu:
        raise CPInputError("模型未包含 mu，无法给出 mu 的摘要")
    i = 0 if target is ParamTarget.MU or not h.include_mu else 1
    marginal = coefficient_marginal(seg, h, i)
    return ParamSummary(marginal.loc, quantile(marginal, tail), quantile(marginal, 1.0 - tail))


def map_predictive(state: FilterState) -> StudentT:
    """以MAP最近变点为条件的一步预测分布"""
    _require_started(state)
    idx = int(np.flatnonzero(state.support == map_changepoint(state))[0])
    dof, loc, scale_sq = state.segments.take([idx]).predictive(state.config.hyper, state.last_y)
    return StudentT(float(dof[0]), float(loc[0]), float(scale_sq[0]))


@dataclass(frozen=True)
class PredictiveMixture:
    """p(y_{t+1} | y_{0:t})：以 p(tau_{t+1} = s | y_{0:t}) 为权重的 Student-t 混合"""
    support: np.ndarray           # s 值，最后一项为新变点 s = t
    weights: np.ndarray
    dof: np.ndarray
    loc: np.ndarray
    scale_sq: np.ndarray

    @property
    def components(self) -> Tuple[StudentT, ...]:
        return tuple(StudentT(float(d), float(m), float(v))
                     for d, m, v in zip(self.dof, self.loc, self.scale_sq))

    def logpdf(self, y: float) -> float:
        with np.errstate(divide="ignore"):
            return float(logsumexp(student_t_logpdf(y, self.dof, self.loc, self.scale_sq) + np.log(self.weights)))

    def cdf(self, x: float) -> float:
        return float(self.weights @ stats.t.cdf(x, self.dof, loc=self.loc, scale=np.sqrt(self.scale_sq)))

    def quantile(self, q: float) -> float:
        if not (0.0 < q < 1.0):
            raise CPInputError(f"分位点必须在 (0, 1) 内，当前为 {q}")
        lo, hi = float(self.loc.min()), float(self.loc.max())
        lo, hi = self._expand(lo, q, -1.0), self._expand(hi, q, 1.0)
        return float(brentq(lambda x: self.cdf(x) - q, lo, hi, xtol=1e-14, maxiter=500))

    def _expand(self, x: float, q: float, direction: float) -> float:
        width = float(np.sqrt(self.scale_sq.min()))
        for _ in range(2100):
            if (direction < 0 and self.cdf(x) <= q) or (direction > 0 and self.cdf(x) >= q):
                return x
            x += direction * width
            width *= 2.0
        raise CPNumericError("无法为混合分布分位数找到有效区间")

    def interval(self, level: float = 0.95) -> Tuple[float, float]:
        tail = 0.5 * (1.0 - level)
        return self.quantile(tail), self.quantile(1.0 - tail)


def predictive_mixture(state: FilterState) -> PredictiveMixture:
    """一步预测混合分布：现有支撑点按 1-风险 传播，新变点分量取先验预测"""
    _require_started(state)
    cfg = state.config
    haz = cfg.hazard.hazards(state.t - state.support)
    probs = state.probs
    weights = np.append(probs * (1.0 - haz), probs @ haz)
    weights = weights / weights.sum()
    segments = state.segments.concat(SegmentBatch.prior(cfg.hyper, 1))
    dof, loc, scale_sq = segments.predictive(cfg.hyper, state.last_y)
    keep = weights > 0
    return PredictiveMixture(np.append(state.support, state.t)[keep], weights[keep],
                             dof[keep], loc[keep], scale_sq[keep])


# ============ 状态快照（检查点与恢复） ============

def state_to_dict(state: FilterState) -> Dict[str, Any]:
    h = state.config.hyper
    return {
        "format": STATE_FORMAT,
        "version": STATE_VERSION,
        "t": state.t,
        "last_y": state.last_y,
        "config": {
            "hyperparams": {"a": h.a, "b": h.b, "delta0": h.delta0, "delta1": h.delta1,
                            "include_mu": h.include_mu},
            "hazard": state.config.hazard.to_dict(),
            "max_support": state.config.max_support,
        },
        "atoms": [
            {
                "s": atom.s,
                "log_weight": atom.log_weight,
                "stats": {
                    "V": atom.stats.V.tolist(),
                    "y_tilde": atom.stats.y_tilde.tolist(),
                    "sum_sq": atom.stats.sum_sq,
                    "count": atom.stats.count,
                },
            }
            for atom in state.atoms
        ],
    }


def state_from_dict(doc: Dict[str, Any]) -> FilterState:
    if doc.get("format") != STATE_FORMAT or doc.get("version") != STATE_VERSION:
        raise CPInputError(f"不支持的状态快照: format={doc.get('format')}, version={doc.get('version')}")
    c = doc["config"]
    config = FilterConfig(Hyperparams(**c["hyperparams"]), HazardModel.from_dict(c["hazard"]), c["max_support"])
    atoms = doc["atoms"]
    if atoms:
        segments = SegmentBatch.from_stats(
            SegmentStats(np.array(a["stats"]["V"], dtype=float), np.array(a["stats"]["y_tilde"], dtype=float),
                         float(a["stats"]["sum_sq"]), int(a["stats"]["count"]))
            for a in atoms
        )
    else:
        segments = SegmentBatch.prior(config.hyper, 0)
    return FilterState(
        t=int(doc["t"]),
        last_y=float(doc["last_y"]),
        config=config,
        support=np.array([a["s"] for a in atoms], dtype=np.int64),
        log_weights=np.array([a["log_weight"] for a in atoms], dtype=float),
        segments=segments,
    )


def state_to_json(state: FilterState) -> str:
    return json.dumps(state_to_dict(state), indent=2)


def state_from_json(text: str) -> FilterState:
    return state_from_dict(json.loads(text))
