#!/usr/bin/env python3
"""
模型一致的合成收益率序列

    y_t = mu_n + alpha_n * y_{t-1} + sigma_n * eps_t,   eps_t ~ N(0, 1)

其中 n 为 t 时刻所在分段的编号。变点 T_0 = 0 < T_1 < ...，
间隔独立同分布于 G；分段 n 覆盖 t = T_n+1 .. T_{n+1}。

随机数：numpy PCG64，按 SeedSequence(seed, spawn_key) 划分子流，
    (0, series)       -> 变点间隔
    (1, series, n)    -> 第 n 段参数（from_prior）
    (2, series, n)    -> 第 n 段噪声
每段独立子流，结果与分段数量无关且跨平台可复现。
"""

from dataclasses import dataclass, field
from typing import Any, Dict, List, NamedTuple, Optional, Tuple, Union

import numpy as np
from scipy import stats

from .cp_errors import CPInputError
from .cp_filter import HazardKind, HazardModel
from .cp_model import Hyperparams

STREAM_CHANGEPOINTS = 0
STREAM_PARAMS = 1
STREAM_NOISE = 2


class SegmentParams(NamedTuple):
    """一个分段的真实参数"""
    mu: float
    alpha: float
    sigma: float


@dataclass(frozen=True)
class SynthSpec:
    """
    合成序列规格

    params 为 Hyperparams 时每段参数从NIG先验抽取（a = b = 5e-4 时 sigma^2 尾部极重，不做截断）；
    为 SegmentParams 序列时按顺序用于各分段。
    changepoints 给定时不再抽样变点（0 会自动补上）。
    """
    length: int
    hazard: HazardModel = field(default_factory=lambda: HazardModel.shifted_geometric(0.02))
    params: Union[Hyperparams, Tuple[SegmentParams, ...]] = field(default_factory=Hyperparams)
    y0: float = 0.0
    seed: int = 0
    changepoints: Optional[Tuple[int, ...]] = None

    def __post_init__(self):
        if self.length < 2:
            raise CPInputError(f"序列长度必须 >= 2，当前为 {self.length}")
        if self.seed < 0:
            raise CPInputError("随机种子必须为非负整数")
        if not np.isfinite(self.y0):
            raise CPInputError("y0 必须为有限数")
        if not isinstance(self.params, Hyperparams):
            segs = tuple(SegmentParams(*map(float, p)) for p in self.params)
            if not segs:
                raise CPInputError("显式参数列表为空")
            for p in segs:
                if not (p.sigma > 0 and np.isfinite([p.mu, p.alpha, p.sigma]).all()):
                    raise CPInputError(f"非法分段参数: {p}")
            object.__setattr__(self, "params", segs)
        if self.changepoints is not None:
            cps = sorted(set([0, *map(int, self.changepoints)]))
            if cps[0] < 0 or cps[-1] >= self.length - 1:
                raise CPInputError(f"变点必须在 [0, {self.length - 2}] 内")
            object.__setattr__(self, "changepoints", tuple(cps))


@dataclass(frozen=True)
class SynthTruth:
    """真实变点与分段参数"""
    changepoints: Tuple[int, ...]
    segments: Tuple[SegmentParams, ...]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "changepoints": list(self.changepoints),
            "segments": [p._asdict() for p in self.segments],
        }


def substream(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


def sample_changepoints(hm: HazardModel, T: int, rng: np.random.Generator) -> List[int]:
    """
    从 T_0 = 0 开始按 G 抽取间隔，保留 T_n <= T - 2 的变点（每段至少一个观测）

    表格化 G：逆CDF抽样；G[-1] < 1 时可能抽到无穷间隔，变点序列就此结束。
    """
    cps = [0]
    while True:
        if hm.kind is HazardKind.SHIFTED_GEOMETRIC:
            gap = int(rng.geometric(hm.p))
        else:
            gap = int(np.searchsorted(hm.G, rng.random(), side="right"))
            if gap >= len(hm.G):
                break
        nxt = cps[-1] + gap
        if nxt > T - 2:
            break
        cps.append(nxt)
    return cps


def _prior_params(h: Hyperparams, rng: np.random.Generator) -> SegmentParams:
    sigma2 = float(stats.invgamma.rvs(h.a, scale=h.b, random_state=rng))
    beta = np.sqrt(sigma2) * np.sqrt(np.diag(h.V0)) * rng.standard_normal(h.dim)
    if h.include_mu:
        return SegmentParams(float(beta[0]), float(beta[1]), float(np.sqrt(sigma2)))
    return SegmentParams(0.0, float(beta[0]), float(np.sqrt(sigma2)))


def generate(spec: SynthSpec, series: int = 0) -> Tuple[np.ndarray, SynthTruth]:
    """
    生成长度为 length 的序列 y_0..y_{T-1}（y_0 = spec.y0）

    Args:
        spec: 合成规格
        series: 序列编号，多序列模拟时区分子流

    Returns:
        (y, truth)
    """
    T = spec.length
    if spec.changepoints is not None:
        cps = list(spec.changepoints)
    else:
        cps = sample_changepoints(spec.hazard, T, substream(spec.seed, STREAM_CHANGEPOINTS, series))

    if isinstance(spec.params, Hyperparams):
        segments = [_prior_params(spec.params, substream(spec.seed, STREAM_PARAMS, series, n))
                    for n in range(len(cps))]
    else:
        if len(spec.params) < len(cps):
            raise CPInputError(f"显式参数只有 {len(spec.params)} 段，但抽到了 {len(cps)} 段")
        segments = list(spec.params[: len(cps)])

    y = np.empty(T)
    y[0] = spec.y0
    bounds = cps + [T - 1]
    for n, p in enumerate(segments):
        start, stop = bounds[n] + 1, bounds[n + 1]
        eps = substream(spec.seed, STREAM_NOISE, series, n).standard_normal(stop - start + 1)
        for i, t in enumerate(range(start, stop + 1)):
            y[t] = p.mu + p.alpha * y[t - 1] + p.sigma * eps[i]
    return y, SynthTruth(tuple(cps), tuple(segments))


def parse_segments(text: str) -> Tuple[SegmentParams, ...]:
    """解析 "mu:alpha:sigma,mu:alpha:sigma,..." 形式的显式参数"""
    segs = []
    for item in filter(None, (s.strip() for s in text.split(","))):
        parts = item.split(":")
        if len(parts) != 3:
            raise CPInputError(f"分段参数格式应为 mu:alpha:sigma，当前为 '{item}'")
        try:
            segs.append(SegmentParams(*(float(x) for x in parts)))
        except ValueError as e:
            raise CPInputError(f"分段参数无法解析: '{item}'") from e
    return tuple(segs)


def parse_changepoints(text: str) -> Tuple[int, ...]:
    try:
        return tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError as e:
        raise CPInputError(f"变点列表无法解析: '{text}'") from e


def simulate_many(spec: SynthSpec, m: int) -> Tuple[np.ndarray, Dict[str, SynthTruth]]:
    """m 条独立序列（标签 S000, S001, ...），返回 (T x m 矩阵, 标签 -> 真值)"""
    if m < 1:
        raise CPInputError("序列数必须 >= 1")
    width = max(3, len(str(m - 1)))
    cols, truths = [], {}
    for i in range(m):
        y, truth = generate(spec, series=i)
        cols.append(y)
        truths[f"S{i:0{width}d}"] = truth
    return np.column_stack(cols), truths
