#!/usr/bin/env python3
"""
最近变点滤波器测试
小规模对照穷举、剪枝一致性、变点恢复与预测校准
"""

import sys
import os
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

import itertools
import time

import numpy as np
import pytest
from scipy import integrate

from cp.cp_errors import CPInputError, CPNumericError
from cp.cp_filter import (
    FilterConfig, FilterState, HazardModel, ParamTarget,
    hazard, init, map_changepoint, map_predictive, param_summary, posterior,
    predictive_mixture, run, state_from_json, state_to_json, step,
)
from cp.cp_model import (
    Hyperparams, SegmentBatch, cdf, coefficient_marginal, logpdf, predictive, quantile,
    seg_init, seg_update, segment_log_evidence,
)
from cp.cp_synth import SegmentParams, SynthSpec, generate


def _last(y, config):
    state = None
    for state in run(y, config):
        pass
    return state


def _enumerate(y, config):
    """穷举全部变点配置，返回 p(tau_T = s | y) 字典"""
    T = len(y) - 1
    hm, h = config.hazard, config.hyper
    logp = {}
    for k in range(T):
        for cps in itertools.combinations(range(1, T), k):
            bounds = [0, *cps]
            lp = 0.0
            last = 0
            for t in range(1, T):
                haz = hazard(hm, t - last)
                if t in cps:
                    lp += np.log(haz) if haz > 0 else -np.inf
                    last = t
                else:
                    lp += np.log1p(-haz) if haz < 1 else -np.inf
            if not np.isfinite(lp):
                continue
            for start, stop in zip(bounds, bounds[1:] + [T]):
                lp += segment_log_evidence(y[start + 1: stop + 1], y[start: stop], h)
            s = bounds[-1]
            logp[s] = np.logaddexp(logp.get(s, -np.inf), lp)
    total = np.logaddexp.reduce(list(logp.values()))
    return {s: np.exp(v - total) for s, v in logp.items()}


class TestHazard:
    def test_geometric_is_constant(self):
        hm = HazardModel.shifted_geometric(0.02)
        assert all(hazard(hm, g) == 0.02 for g in (1, 2, 50, 1000))

    def test_tabulated_forced_change(self):
        hm = HazardModel.tabulated([0.0, 1.0])
        assert hazard(hm, 1) == 1.0
        with pytest.raises(CPNumericError):
            hazard(hm, 2)

    def test_tabulated_arithmetic(self):
        hm = HazardModel.tabulated([0.0, 0.3, 0.8, 1.0])
        assert hazard(hm, 2) == pytest.approx(5 / 7)

    def test_beyond_table_is_flat(self):
        hm = HazardModel.tabulated([0.0, 0.3, 0.5])
        assert hazard(hm, 3) == 0.0
        assert hazard(hm, 40) == 0.0

    def test_cdf_matches_hazard(self):
        """G(k) = 1 - prod(1 - 风险)，表格之外保持 G[-1]"""
        for hm in (HazardModel.shifted_geometric(0.1), HazardModel.tabulated([0.0, 0.3, 0.5])):
            survival = 1.0
            for k in range(1, 8):
                survival *= 1.0 - hazard(hm, k)
                assert hm.cdf(k) == pytest.approx(1.0 - survival, abs=1e-12)
        assert HazardModel.tabulated([0.0, 0.3, 0.5]).cdf(100) == 0.5

    def test_invalid_models(self):
        with pytest.raises(CPInputError):
            HazardModel.shifted_geometric(1.0)
        with pytest.raises(CPInputError):
            HazardModel.tabulated([0.1, 0.5])
        with pytest.raises(CPInputError):
            HazardModel.tabulated([0.0, 0.6, 0.5])
        with pytest.raises(CPInputError):
            hazard(HazardModel.shifted_geometric(0.5), 0)


class TestStep:
    def test_first_step_is_dirac_at_zero(self):
        state = step(init(0.01), 0.02)
        assert state.t == 1
        pmf = posterior(state)
        assert pmf.support.tolist() == [0] and pmf.probs.tolist() == [1.0]
        assert map_changepoint(state) == 0

    def test_support_grows_by_one(self):
        state = step(step(init(0.01), 0.02), -0.01)
        assert state.support.tolist() == [0, 1]
        assert state.probs.sum() == pytest.approx(1.0, abs=1e-12)

    def test_two_hypothesis_ratio(self):
        h = Hyperparams()
        p = 0.1
        cfg = FilterConfig(h, HazardModel.shifted_geometric(p), None)
        y0, y1, y2 = 0.01, -0.02, 0.035
        state = step(step(init(y0, cfg), y1), y2)
        after_one = seg_update(seg_init(h), y1, y0)
        f_old = np.exp(logpdf(predictive(after_one, h, y1), y2))
        f_new = np.exp(logpdf(predictive(seg_init(h), h, y1), y2))
        ratio = state.probs[1] / state.probs[0]
        assert ratio == pytest.approx((p * f_new) / ((1 - p) * f_old), rel=1e-12)

    def test_counts_track_segment_length(self):
        rng = np.random.default_rng(4)
        y = rng.normal(0, 0.01, 60)
        cfg = FilterConfig(max_support=20)
        for state in run(y, cfg):
            assert len(state.support) <= 20
            assert np.all(np.diff(state.support) > 0)
            assert np.all(state.support < state.t)
            assert np.array_equal(state.segments.count, state.t - state.support)
            assert state.probs.sum() == pytest.approx(1.0, abs=1e-12)

    def test_rejects_non_finite(self):
        with pytest.raises(CPInputError):
            init(np.nan)
        with pytest.raises(CPInputError):
            step(init(0.0), np.inf)

    def test_forced_change_every_step(self):
        cfg = FilterConfig(hazard=HazardModel.tabulated([0.0, 1.0]), max_support=None)
        rng = np.random.default_rng(8)
        for state in run(rng.normal(0, 0.01, 10), cfg):
            assert posterior(state).support.tolist() == [state.t - 1]

    def test_queries_require_a_step(self):
        state = init(0.0)
        for query in (posterior, map_changepoint, map_predictive, predictive_mixture):
            with pytest.raises(CPInputError):
                query(state)


class TestExactness:
    def test_matches_enumeration(self):
        """20 条随机短序列：不剪枝的滤波后验 = 穷举结果"""
        rng = np.random.default_rng(12345)
        for i in range(20):
            T = int(rng.integers(2, 11))
            if i % 4 == 3:
                hm = HazardModel.tabulated([0.0, 0.2, 0.5, 0.6, 0.9])
            else:
                hm = HazardModel.shifted_geometric(float(rng.uniform(0.05, 0.5)))
            cfg = FilterConfig(Hyperparams(include_mu=bool(i % 2)), hm, None)
            sigma = np.where(np.arange(T + 1) < T // 2, 0.01, 0.05)
            y = rng.normal(0, 1, T + 1) * sigma
            state = _last(y, cfg)
            exact = _enumerate(y, cfg)
            got = dict(zip(state.support.tolist(), state.probs.tolist()))
            for s in set(exact) | set(got):
                assert got.get(s, 0.0) == pytest.approx(exact.get(s, 0.0), abs=1e-10)

    def test_pruning_is_noop_when_support_fits(self):
        rng = np.random.default_rng(99)
        y = rng.normal(0, 0.02, 201)
        T = len(y) - 1
        for pruned, exact in zip(run(y, FilterConfig(max_support=T)), run(y, FilterConfig(max_support=None))):
            assert np.array_equal(pruned.support, exact.support)
            assert np.allclose(pruned.log_weights, exact.log_weights, rtol=0, atol=1e-14)

    def test_pruning_keeps_top_atoms(self):
        rng = np.random.default_rng(17)
        y = rng.normal(0, 0.02, 40)
        full = _last(y[:-1], FilterConfig(max_support=None))
        nxt_full = step(full, y[-1])
        capped = FilterState(full.t, full.last_y, FilterConfig(max_support=5), full.support,
                             full.log_weights, full.segments)
        nxt = step(capped, y[-1])
        top = np.sort(nxt_full.support[np.argsort(nxt_full.log_weights)[-5:]])
        assert nxt.support.tolist() == top.tolist()
        assert nxt.probs.sum() == pytest.approx(1.0, abs=1e-12)


class TestQueries:
    def _state(self, n=50, seed=6):
        rng = np.random.default_rng(seed)
        return _last(rng.normal(0, 0.02, n), FilterConfig())

    def test_map_tie_prefers_recent(self):
        h = Hyperparams()
        state = FilterState(8, 0.0, FilterConfig(), np.array([3, 7]), np.log([0.5, 0.5]), SegmentBatch.prior(h, 2))
        assert map_changepoint(state) == 7

    def test_param_summary_interval_endpoints(self):
        state = self._state()
        idx = int(np.flatnonzero(state.support == map_changepoint(state))[0])
        seg = state.segments.stats(idx)
        for target, i in ((ParamTarget.MU, 0), (ParamTarget.ALPHA, 1)):
            point, lo, hi = param_summary(state, target, 0.95)
            marginal = coefficient_marginal(seg, state.config.hyper, i)
            assert point == marginal.loc
            assert cdf(marginal, lo) == pytest.approx(0.025, abs=1e-8)
            assert cdf(marginal, hi) == pytest.approx(0.975, abs=1e-8)

    def test_log_sigma_point_is_mode(self):
        state = self._state()
        idx = int(np.flatnonzero(state.support == map_changepoint(state))[0])
        seg = state.segments.stats(idx)
        a_st = state.config.hyper.a + seg.count / 2
        b_st = state.config.hyper.b + 0.5 * max(0.0, seg.sum_sq - seg.w @ seg.y_tilde)
        point, lo, hi = param_summary(state, "log_sigma")
        assert point == pytest.approx(0.5 * np.log(b_st / (a_st + 1)), rel=1e-10)
        assert lo < point < hi

    def test_mu_interval_centered_for_fresh_atom(self):
        cfg = FilterConfig(hazard=HazardModel.tabulated([0.0, 1.0]), max_support=None)
        state = step(step(init(0.0, cfg), 0.0), 0.0)
        point, lo, hi = param_summary(state, ParamTarget.MU)
        assert point == 0.0
        assert lo == pytest.approx(-hi)

    def test_mu_summary_requires_mu(self):
        cfg = FilterConfig(hyper=Hyperparams(include_mu=False))
        state = step(init(0.0, cfg), 0.01)
        with pytest.raises(CPInputError):
            param_summary(state, ParamTarget.MU)
        assert len(param_summary(state, ParamTarget.ALPHA)) == 3
        with pytest.raises(CPInputError):
            param_summary(state, ParamTarget.ALPHA, level=1.5)

    def test_mixture_at_first_step(self):
        p = 0.3
        cfg = FilterConfig(hazard=HazardModel.shifted_geometric(p))
        mix = predictive_mixture(step(init(0.01, cfg), 0.02))
        assert mix.support.tolist() == [0, 1]
        assert mix.weights.tolist() == pytest.approx([1 - p, p], abs=1e-15)

    def test_mixture_normalization(self):
        rng = np.random.default_rng(21)
        y = np.concatenate([rng.normal(0, 0.01, 40), rng.normal(0, 0.05, 20)])
        # a = 2 保证每个分量自由度 >= 4，尾部可被数值积分
        cfg = FilterConfig(hyper=Hyperparams(a=2.0, b=1e-3))
        mix = predictive_mixture(_last(y, cfg))
        assert mix.weights.sum() == pytest.approx(1.0, abs=1e-12)
        # 分量尺度差异大：按各分量中心分段积分
        centers = np.sort(mix.loc)
        width = np.sqrt(mix.scale_sq.max())
        lo, hi = centers[0] - 200 * width, centers[-1] + 200 * width
        density = lambda x: np.exp(mix.logpdf(x))
        total = integrate.quad(density, -np.inf, lo, limit=200)[0]
        total += integrate.quad(density, lo, hi, points=list(centers[:40]), limit=500)[0]
        total += integrate.quad(density, hi, np.inf, limit=200)[0]
        assert total == pytest.approx(1.0, abs=1e-6)

    def test_mixture_components_match_cdf(self):
        mix = predictive_mixture(self._state())
        parts = mix.components
        assert len(parts) == len(mix.weights)
        for x in (-0.05, 0.0, 0.03):
            assert mix.cdf(x) == pytest.approx(sum(w * cdf(st, x) for w, st in zip(mix.weights, parts)), abs=1e-12)
        assert np.exp(mix.logpdf(0.01)) == pytest.approx(
            sum(w * np.exp(logpdf(st, 0.01)) for w, st in zip(mix.weights, parts)), rel=1e-9)

    def test_mixture_quantile_inverts_cdf(self):
        mix = predictive_mixture(self._state())
        for q in (0.025, 0.5, 0.975):
            assert mix.cdf(mix.quantile(q)) == pytest.approx(q, abs=1e-9)
        lo, hi = mix.interval(0.95)
        assert lo < hi

    def test_snapshot_resume(self):
        rng = np.random.default_rng(30)
        y = rng.normal(0, 0.02, 60)
        cfg = FilterConfig(hazard=HazardModel.tabulated([0.0, 0.1, 0.3, 0.6]), max_support=15)
        states = list(run(y[:40], cfg))
        restored = state_from_json(state_to_json(states[-1]))
        a, b = states[-1], restored
        for value in y[40:]:
            a, b = step(a, value), step(b, value)
        assert b.t == a.t and b.last_y == a.last_y
        assert np.array_equal(a.support, b.support)
        assert np.array_equal(a.log_weights, b.log_weights)
        assert b.config == a.config

    def test_snapshot_rejects_unknown_format(self):
        with pytest.raises(CPInputError):
            state_from_json('{"format": "other", "version": 1}')


class TestRecovery:
    def test_single_variance_break(self):
        """sigma 0.01 -> 0.05 于 t = 300；t = 320 时 MAP 落在 [295, 310]"""
        hits = 0
        spec_params = (SegmentParams(0.0, 0.0, 0.01), SegmentParams(0.0, 0.0, 0.05))
        for seed in range(100):
            y, _ = generate(SynthSpec(length=600, params=spec_params, seed=seed, changepoints=(300,)))
            state = _last(y[:321], FilterConfig())
            assert state.t == 320
            hits += 295 <= map_changepoint(state) <= 310
        assert hits >= 90

    def test_predictive_calibration(self):
        """模型一致数据上 95% 预测区间的覆盖率在 [0.90, 0.99]"""
        sigmas = [0.01, 0.05] * 4
        params = tuple(SegmentParams(0.0, 0.0, s) for s in sigmas)
        cps = tuple(range(0, 2400, 300))
        y, _ = generate(SynthSpec(length=2401, params=params, seed=77, changepoints=cps))
        covered_map = covered_mix = n_mix = 0
        state = init(y[0], FilterConfig())
        steps = 0
        for t in range(1, len(y) - 1):
            state = step(state, y[t])
            st = map_predictive(state)
            covered_map += quantile(st, 0.025) <= y[t + 1] <= quantile(st, 0.975)
            steps += 1
            if t % 4 == 0:
                lo, hi = predictive_mixture(state).interval(0.95)
                covered_mix += lo <= y[t + 1] <= hi
                n_mix += 1
        assert steps >= 2000
        assert 0.90 <= covered_map / steps <= 0.99
        assert 0.90 <= covered_mix / n_mix <= 0.99


class TestCost:
    def test_step_cost_is_flat(self):
        rng = np.random.default_rng(0)
        y = rng.normal(0, 0.01, 10_001)
        state = init(y[0], FilterConfig(max_support=100))
        early, late = [], []
        for t in range(1, len(y)):
            start = time.perf_counter()
            state = step(state, y[t])
            elapsed = time.perf_counter() - start
            if 1000 <= t < 1200:
                early.append(elapsed)
            elif t >= 9800:
                late.append(elapsed)
        assert np.median(late) <= 1.5 * np.median(early)
