#!/usr/bin/env python3
"""
CP数据读取器 - 价格表读取、跨序列对齐与日对数收益率
输入为宽表CSV（date,<ticker1>,<ticker2>,...）或长表CSV（date,ticker,close）
"""

from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np
import pandas as pd

from .cp_errors import CPInputError

MISSING_POLICIES = ("error", "drop_rows")
DATE_FORMAT = "%Y-%m-%d"


@dataclass(frozen=True)
class LoadReport:
    """读取报告：因缺失值被删除的日期"""
    source: str
    dropped: Tuple[Tuple[str, Tuple[str, ...]], ...] = ()   # (日期, 缺失的代码)

    def to_text(self) -> str:
        lines = [f"source: {self.source}", f"dropped_rows: {len(self.dropped)}"]
        for date, tickers in self.dropped:
            lines.append(f"{date}\tmissing: {','.join(tickers)}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class PriceTable:
    """日期 x 代码 的正价格矩阵，日期严格递增，代码按字典序排列"""
    frame: pd.DataFrame
    report: LoadReport = field(default_factory=lambda: LoadReport(""))

    @property
    def dates(self) -> List[str]:
        return [d.strftime(DATE_FORMAT) for d in self.frame.index]

    @property
    def tickers(self) -> List[str]:
        return list(self.frame.columns)

    @property
    def prices(self) -> np.ndarray:
        return self.frame.to_numpy(dtype=float)


@dataclass(frozen=True)
class ReturnsTable:
    """日对数收益率；date 列为每对价格中较晚的日期"""
    frame: pd.DataFrame

    @property
    def dates(self) -> List[str]:
        return [d.strftime(DATE_FORMAT) for d in self.frame.index]

    @property
    def tickers(self) -> List[str]:
        return list(self.frame.columns)

    @property
    def returns(self) -> np.ndarray:
        return self.frame.to_numpy(dtype=float)

    def series(self, ticker: str) -> np.ndarray:
        return self.frame[ticker].to_numpy(dtype=float)

    def row_of(self, date: str) -> int:
        """日期对应的行号（即滤波时刻 t）"""
        try:
            return self.dates.index(pd.Timestamp(date).strftime(DATE_FORMAT))
        except (ValueError, TypeError) as e:
            raise CPInputError(f"日期不在收益率表范围内: {date}") from e


class CP_DataReader:
    """价格/收益率表读取器"""

    def __init__(self, verbose: bool = False):
        """
        初始化读取器

        Args:
            verbose: 是否打印读取状态
        """
        self.verbose = verbose

    def _log(self, message: str) -> None:
        if self.verbose:
            print(message)

    # ============ 解析 ============

    @staticmethod
    def _read_raw(path: str) -> Tuple[List[str], pd.DataFrame]:
        try:
            raw = pd.read_csv(path, dtype=str, keep_default_na=False, header=None, skipinitialspace=True)
        except FileNotFoundError:
            raise
        except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
            raise CPInputError(f"CSV格式错误 {path}: {e}") from e
        header = [str(h).strip() for h in raw.iloc[0]]
        body = raw.iloc[1:].reset_index(drop=True)
        body.columns = header
        return header, body

    @staticmethod
    def _parse_dates(values: pd.Series) -> pd.DatetimeIndex:
        try:
            dates = pd.to_datetime(values.str.strip(), format="ISO8601")
        except (ValueError, TypeError) as e:
            raise CPInputError(f"日期不是ISO-8601格式: {e}") from e
        if dates.isna().any():
            row = int(np.flatnonzero(dates.isna().to_numpy())[0])
            raise CPInputError(f"日期为空: 第 {row + 2} 行")
        return pd.DatetimeIndex(dates).normalize()

    @staticmethod
    def _parse_numbers(frame: pd.DataFrame) -> pd.DataFrame:
        stripped = frame.apply(lambda col: col.str.strip())
        numbers = stripped.apply(pd.to_numeric, errors="coerce")
        bad = numbers.isna() & (stripped != "")
        if bad.to_numpy().any():
            row, col = np.argwhere(bad.to_numpy())[0]
            raise CPInputError(f"无法解析的数值 '{stripped.iat[row, col]}' 位于 ({frame.index[row]}, {frame.columns[col]})")
        return numbers.astype(float)

    def _wide_frame(self, path: str) -> pd.DataFrame:
        header, body = self._read_raw(path)
        if not header or header[0] != "date" or len(header) < 2:
            raise CPInputError(f"宽表表头必须为 date,<ticker1>,...，实际为 {header}")
        tickers = header[1:]
        if len(set(tickers)) != len(tickers) or "" in tickers:
            raise CPInputError("代码列重复或为空")
        values = body.iloc[:, 1:].copy()
        values.index = self._parse_dates(body.iloc[:, 0])
        return values

    def _long_frame(self, path: str) -> pd.DataFrame:
        header, body = self._read_raw(path)
        if header != ["date", "ticker", "close"]:
            raise CPInputError(f"长表表头必须为 date,ticker,close，实际为 {header}")
        body = body.assign(date=self._parse_dates(body["date"]), ticker=body["ticker"].str.strip())
        if body.duplicated(["date", "ticker"]).any():
            raise CPInputError("长表存在重复的 (date, ticker)")
        wide = body.pivot(index="date", columns="ticker", values="close")
        return wide.fillna("")

    # ============ 读取 ============

    def read_prices(self, path: str, missing_policy: str = "error", long_format: bool = False) -> PriceTable:
        """
        读取价格表

        Args:
            path: CSV路径
            missing_policy: error（拒绝含缺失值的文件）或 drop_rows（删除含缺失值的日期）
            long_format: 输入是否为长表 date,ticker,close

        Returns:
            PriceTable: 按日期排序、代码按字典序排列的价格表
        """
        if missing_policy not in MISSING_POLICIES:
            raise CPInputError(f"未知的缺失值策略: {missing_policy}")
        raw = self._long_frame(path) if long_format else self._wide_frame(path)
        if raw.index.has_duplicates:
            dup = raw.index[raw.index.duplicated()][0].strftime(DATE_FORMAT)
            raise CPInputError(f"日期重复: {dup}")
        raw = raw.sort_index()
        raw = raw[sorted(raw.columns)]
        prices = self._parse_numbers(raw)

        dropped = []
        missing = prices.isna()
        if missing.to_numpy().any():
            if missing_policy == "error":
                row, col = np.argwhere(missing.to_numpy())[0]
                raise CPInputError(f"缺失价格位于 ({prices.index[row].strftime(DATE_FORMAT)}, {prices.columns[col]})")
            for date, row in missing[missing.any(axis=1)].iterrows():
                dropped.append((date.strftime(DATE_FORMAT), tuple(row.index[row.to_numpy()])))
            prices = prices[~missing.any(axis=1)]
            self._log(f"⚠️ 删除含缺失值的行: {len(dropped)} 个日期")

        values = prices.to_numpy()
        bad = ~np.isfinite(values) | (values <= 0)
        if bad.any():
            row, col = np.argwhere(bad)[0]
            raise CPInputError(
                f"价格非正: non-positive price at ({prices.index[row].strftime(DATE_FORMAT)}, {prices.columns[col]})")

        prices.index.name = "date"
        prices.columns.name = None
        self._log(f"✅ 读取 {path}: {len(prices)} 个日期 x {prices.shape[1]} 个代码")
        return PriceTable(prices, LoadReport(str(path), tuple(dropped)))

    def read_returns(self, path: str) -> ReturnsTable:
        """读取收益率表（与 write_returns 的格式一致）"""
        frame = self._wide_frame(path)
        if frame.index.has_duplicates or not frame.index.is_monotonic_increasing:
            raise CPInputError("收益率表日期必须严格递增")
        returns = self._parse_numbers(frame)
        if not np.all(np.isfinite(returns.to_numpy())):
            raise CPInputError("收益率表包含缺失或非有限值")
        returns.index.name = "date"
        self._log(f"✅ 读取收益率 {path}: {len(returns)} 行 x {returns.shape[1]} 个序列")
        return ReturnsTable(returns)


def read_prices(path: str, missing_policy: str = "error", long_format: bool = False) -> PriceTable:
    return CP_DataReader().read_prices(path, missing_policy, long_format)


def log_returns(p: PriceTable) -> ReturnsTable:
    """y_t = log p_{t+1} - log p_t，输出比价格少一行"""
    if len(p.frame) < 2:
        raise CPInputError("至少需要两个日期才能计算收益率")
    logp = np.log(p.frame.to_numpy(dtype=float))
    frame = pd.DataFrame(np.diff(logp, axis=0), index=p.frame.index[1:], columns=p.frame.columns)
    frame.index.name = "date"
    return ReturnsTable(frame)


def write_returns(table: ReturnsTable, path: str) -> None:
    table.frame.to_csv(path, float_format="%.17g", date_format=DATE_FORMAT)
