#!/usr/bin/env python3
"""
波动率变点聚类 - 命令行入口
simulate / returns / fit / distance / cluster 五个子命令，全部输出为数据文件
"""

import argparse
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from cp.cp_cluster import average_linkage, clusters_frame, cut, leaf_order
from cp.cp_config import RunConfig, load_config
from cp.cp_data_reader import (
    DATE_FORMAT, CP_DataReader, PriceTable, ReturnsTable, log_returns, write_returns,
)
from cp.cp_errors import CPInputError, CPNumericError
from cp.cp_filter import (
    FilterState, ParamTarget, init, map_changepoint, map_predictive,
    param_summary, posterior, predictive_mixture, state_to_json, step,
)
from cp.cp_metric import DissimilarityMatrix, SparsePmf, pairwise, validate_dissimilarity
from cp.cp_model import quantile
from cp.cp_synth import SynthSpec, parse_changepoints, parse_segments, simulate_many

FLOAT_FORMAT = "%.17g"
LEVEL = 0.95
SYNTH_START = "2000-01-03"


# ============ 单序列滤波 ============

@dataclass
class SeriesFit:
    """一条序列的滤波输出"""
    ticker: str
    map_trace: pd.DataFrame
    params: pd.DataFrame
    predictive: pd.DataFrame
    snapshots: Dict[str, SparsePmf] = field(default_factory=dict)
    final_state: Optional[FilterState] = None


def fit_series(ticker: str, y: np.ndarray, dates: Sequence[str], cfg: RunConfig,
               snapshot_dates: Sequence[str] = (), prices: Optional[np.ndarray] = None) -> SeriesFit:
    """
    对一条序列逐日滤波；第0行只作为 y_0，输出从第1行开始

    prices 与 y 逐行对齐时，predictive 额外给出下一日价格的MAP区间 p_t*exp(lo), p_t*exp(hi)
    """
    fcfg = cfg.filter_config()
    include_mu = fcfg.hyper.include_mu
    tail = 0.5 * (1.0 - LEVEL)
    wanted = set(snapshot_dates)
    trace, params, pred = [], [], []
    snapshots: Dict[str, SparsePmf] = {}

    state = init(y[0], fcfg)
    for t in range(1, len(y)):
        state = step(state, y[t])
        date = dates[t]
        trace.append((date, t - map_changepoint(state)))

        row = [date]
        targets = [ParamTarget.MU] if include_mu else []
        for target in targets + [ParamTarget.ALPHA, ParamTarget.LOG_SIGMA]:
            row.extend(param_summary(state, target, LEVEL))
        params.append(row)

        st = map_predictive(state)
        lo, hi = quantile(st, tail), quantile(st, 1.0 - tail)
        mix_lo, mix_hi = predictive_mixture(state).interval(LEVEL)
        row = [date, st.loc, lo, hi, mix_lo, mix_hi]
        if prices is not None:
            row += [prices[t] * np.exp(lo), prices[t] * np.exp(hi)]
        pred.append(row)

        if date in wanted:
            snapshots[date] = posterior(state)

    param_cols = ["date"]
    for name, point in (("mu", "mean"), ("alpha", "mean"), ("log_sigma", "point")):
        if name == "mu" and not include_mu:
            continue
        param_cols += [f"{name}_{point}", f"{name}_lo", f"{name}_hi"]
    pred_cols = ["date", "map_loc", "map_lo", "map_hi", "mix_lo", "mix_hi"]
    if prices is not None:
        pred_cols += ["price_lo", "price_hi"]
    return SeriesFit(
        ticker=ticker,
        map_trace=pd.DataFrame(trace, columns=["date", "gap"]),
        params=pd.DataFrame(params, columns=param_cols),
        predictive=pd.DataFrame(pred, columns=pred_cols),
        snapshots=snapshots,
        final_state=state,
    )


def posterior_at(ticker: str, y: np.ndarray, row: int, cfg: RunConfig) -> SparsePmf:
    """滤波到第 row 行并返回最近变点后验"""
    state = init(y[0], cfg.filter_config())
    for value in y[1: row + 1]:
        state = step(state, value)
    return posterior(state)


def _pool_map(cfg: RunConfig, fn, items):
    """序列级并行；结果按输入顺序返回"""
    with ThreadPoolExecutor(max_workers=cfg.worker_count()) as pool:
        return list(pool.map(fn, items))


# ============ 输出 ============

def _prepare_out(out: str, cfg: RunConfig) -> None:
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "config_used.json"), "w", encoding="utf-8") as f:
        f.write(cfg.to_json())


def _write_json(path: str, doc) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps(doc, indent=2) + "\n")


def _write_csv(frame: pd.DataFrame, path: str) -> None:
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)


def _snapshot_rows(table: ReturnsTable, dates: Sequence[str]) -> List[str]:
    normalized = []
    for d in dates:
        row = table.row_of(d)
        if row < 1:
            raise CPInputError(f"日期 {d} 是第一行收益，尚无变点后验")
        normalized.append(table.dates[row])
    return normalized


def _aligned_prices(prices: PriceTable, table: ReturnsTable) -> pd.DataFrame:
    """价格按收益率表的日期与代码对齐；每个收益日期都必须有价格"""
    missing = [tk for tk in table.tickers if tk not in prices.tickers]
    if missing:
        raise CPInputError(f"价格表缺少代码: {','.join(missing)}")
    frame = prices.frame.reindex(index=table.frame.index, columns=table.tickers)
    absent = frame.isna().any(axis=1)
    if absent.any():
        raise CPInputError(f"价格表缺少日期: {frame.index[absent][0].strftime(DATE_FORMAT)}")
    return frame


# ============ 子命令 ============

def cmd_simulate(args, cfg: RunConfig) -> None:
    if args.segments:
        params = parse_segments(args.segments)
    else:
        params = cfg.hyperparams()
    spec = SynthSpec(
        length=args.length,
        hazard=cfg.filter_config().hazard,
        params=params,
        y0=args.y0,
        seed=cfg.seed,
        changepoints=parse_changepoints(args.changepoints) if args.changepoints else None,
    )
    print(f"⏳ 模拟 {args.series} 条序列，长度 {args.length}，种子 {cfg.seed}")
    y, truths = simulate_many(spec, args.series)

    _prepare_out(args.out, cfg)
    index = pd.bdate_range(SYNTH_START, periods=args.length, name="date")
    write_returns(ReturnsTable(pd.DataFrame(y, index=index, columns=list(truths))),
                  os.path.join(args.out, "returns.csv"))
    if args.series == 1:
        doc = {"seed": cfg.seed, **next(iter(truths.values())).to_dict()}
    else:
        doc = {"seed": cfg.seed, "series": {label: tr.to_dict() for label, tr in truths.items()}}
    _write_json(os.path.join(args.out, "truth.json"), doc)
    print(f"✅ 已写入 {args.out}/returns.csv 与 truth.json")


def cmd_returns(args, cfg: RunConfig) -> None:
    reader = CP_DataReader(verbose=True)
    prices = reader.read_prices(args.prices, cfg.missing_policy, args.long_format)
    table = log_returns(prices)
    _prepare_out(args.out, cfg)
    write_returns(table, os.path.join(args.out, "returns.csv"))
    with open(os.path.join(args.out, "load_report.txt"), "w", encoding="utf-8") as f:
        f.write(prices.report.to_text())
    print(f"✅ 收益率: {len(table.dates)} 行 x {len(table.tickers)} 个序列 -> {args.out}/returns.csv")


def cmd_fit(args, cfg: RunConfig) -> None:
    table = CP_DataReader(verbose=True).read_returns(args.returns)
    snapshot_dates = _snapshot_rows(table, args.snapshot_dates.split(",")) if args.snapshot_dates else []
    prices = None
    if args.prices:
        prices = _aligned_prices(CP_DataReader(verbose=True).read_prices(args.prices, cfg.missing_policy), table)
    print(f"⏳ 滤波 {len(table.tickers)} 条序列（n = {cfg.max_support}）")
    start = time.time()
    dates = table.dates
    fits = _pool_map(
        cfg,
        lambda tk: fit_series(tk, table.series(tk), dates, cfg, snapshot_dates,
                              None if prices is None else prices[tk].to_numpy(dtype=float)),
        table.tickers,
    )

    _prepare_out(args.out, cfg)
    for fit in fits:
        sub = os.path.join(args.out, fit.ticker)
        _prepare_out(sub, cfg)
        _write_csv(fit.map_trace, os.path.join(sub, "map_trace.csv"))
        _write_csv(fit.params, os.path.join(sub, "params.csv"))
        _write_csv(fit.predictive, os.path.join(sub, "predictive.csv"))
        for date, pmf in fit.snapshots.items():
            _write_json(os.path.join(sub, f"posterior_{date}.json"), {"date": date, **pmf.to_dict()})
        with open(os.path.join(sub, "filter_state.json"), "w", encoding="utf-8") as f:
            f.write(state_to_json(fit.final_state) + "\n")
    print(f"✅ 完成，用时 {time.time() - start:.1f}s -> {args.out}")


def cmd_distance(args, cfg: RunConfig) -> None:
    if not args.date:
        raise CPInputError("distance 需要 --date")
    table = CP_DataReader(verbose=True).read_returns(args.returns)
    if len(table.tickers) < 2:
        raise CPInputError("至少需要两个序列才能计算距离矩阵")
    row = table.row_of(args.date)
    if row < 1:
        raise CPInputError(f"日期 {args.date} 是第一行收益，尚无变点后验")
    print(f"⏳ 计算 {table.dates[row]} 的 W1 距离矩阵（{len(table.tickers)} 个序列）")
    pmfs = _pool_map(cfg, lambda tk: posterior_at(tk, table.series(tk), row, cfg), table.tickers)
    d = pairwise(list(zip(table.tickers, pmfs)))
    _prepare_out(args.out, cfg)
    d.to_csv(os.path.join(args.out, "dissim.csv"))
    print(f"✅ 已写入 {args.out}/dissim.csv")


def cmd_cluster(args, cfg: RunConfig) -> None:
    d = DissimilarityMatrix.read_csv(args.dissim)
    for problem in validate_dissimilarity(d, seed=cfg.seed):
        print(f"⚠️ 相异度矩阵检查: {problem}")
    dgm = average_linkage(d)
    order = leaf_order(dgm)
    labels = cut(dgm, args.k) if args.k is not None else None

    _prepare_out(args.out, cfg)
    with open(os.path.join(args.out, "dendrogram.json"), "w", encoding="utf-8") as f:
        f.write(json.dumps({"labels": list(d.labels), **dgm.to_dict()}, indent=2) + "\n")
    d.reorder(order).to_csv(os.path.join(args.out, "reordered.csv"))
    if labels is not None:
        _write_csv(clusters_frame(d, labels), os.path.join(args.out, "clusters.csv"))
    print(f"✅ 聚类完成: {d.m} 个序列" + (f"，切分为 {args.k} 簇" if labels is not None else ""))


COMMANDS = {
    "simulate": cmd_simulate,
    "returns": cmd_returns,
    "fit": cmd_fit,
    "distance": cmd_distance,
    "cluster": cmd_cluster,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='JSON配置文件（默认读取环境变量 CPVC_CONFIG）')
    common.add_argument('--out', default='out', help='输出目录 (默认: out)')
    common.add_argument('--threads', type=int, help='并行线程数，0 表示自动')
    common.add_argument('--seed', type=int, help='随机种子')
    common.add_argument('--hazard-p', dest='hazard_p', type=float, help='几何间隔分布参数 (默认: 0.02)')
    common.add_argument('--a', type=float, help='逆伽马形状参数 (默认: 5e-4)')
    common.add_argument('--b', type=float, help='逆伽马尺度参数 (默认: 5e-4)')
    common.add_argument('--delta0', type=float, help='mu 的先验尺度 (默认: 10)')
    common.add_argument('--delta1', type=float, help='alpha 的先验尺度 (默认: 0.02)')
    common.add_argument('--max-support', dest='max_support', type=int, help='支撑点上限 n (默认: 100)')
    common.add_argument('--no-mu', dest='include_mu', action='store_const', const=False,
                        help='不建模截距 mu')
    common.add_argument('--missing', dest='missing_policy', choices=['error', 'drop_rows'],
                        help='缺失值策略 (默认: error)')

    parser = argparse.ArgumentParser(
        description='波动率变点检测与动态聚类',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
示例:
  python3 main.py simulate --length 600 --series 4 --out sim
  python3 main.py returns prices.csv --out ret
  python3 main.py fit ret/returns.csv --snapshot-dates 2020-03-16 --out fit
  python3 main.py distance ret/returns.csv --date 2020-03-16 --out dist
  python3 main.py cluster dist/dissim.csv --k 3 --out clu
        """
    )
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('simulate', parents=[common], help='生成合成收益率与真值')
    p.add_argument('--length', type=int, default=600, help='序列长度 (默认: 600)')
    p.add_argument('--series', type=int, default=1, help='序列条数 (默认: 1)')
    p.add_argument('--segments', help='显式分段参数 mu:alpha:sigma,...（默认从先验抽取）')
    p.add_argument('--changepoints', help='固定变点位置 t1,t2,...（默认按风险函数抽样）')
    p.add_argument('--y0', type=float, default=0.0, help='初始值 y_0 (默认: 0)')

    p = sub.add_parser('returns', parents=[common], help='价格表 -> 日对数收益率')
    p.add_argument('prices')
    p.add_argument('--long-format', action='store_true', help='输入为 date,ticker,close 长表')

    p = sub.add_parser('fit', parents=[common], help='逐序列滤波并输出MAP变点、参数与预测区间')
    p.add_argument('returns')
    p.add_argument('--snapshot-dates', help='输出完整后验的日期 YYYY-MM-DD,...')
    p.add_argument('--prices', help='与收益率对应的价格表（宽表），predictive 额外输出下一日价格区间')

    p = sub.add_parser('distance', parents=[common], help='指定日期的两两 W1 距离矩阵')
    p.add_argument('returns')
    p.add_argument('--date', help='计算日期 YYYY-MM-DD')

    p = sub.add_parser('cluster', parents=[common], help='平均连接层次聚类')
    p.add_argument('dissim')
    p.add_argument('--k', type=int, help='平切簇数')
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """主函数；返回退出码 0 成功 / 2 输入错误 / 3 数值失败"""
    args = build_parser().parse_args(argv)
    overrides = {key: getattr(args, key, None) for key in RunConfig.model_fields}
    try:
        cfg = load_config(args.config, overrides)
        COMMANDS[args.command](args, cfg)
    except (CPInputError, FileNotFoundError) as e:
        print(f"❌ 输入错误: {e}", file=sys.stderr)
        return 2
    except CPNumericError as e:
        print(f"❌ 数值失败: {e}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
