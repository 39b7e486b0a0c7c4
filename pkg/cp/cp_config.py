#!/usr/bin/env python3
"""
运行配置

优先级：默认值 < JSON配置文件（--config 或环境变量 CPVC_CONFIG）< 命令行参数。
默认值即标普500实验的设置。
"""

import json
import os
from typing import Any, Dict, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .cp_errors import CPInputError
from .cp_filter import FilterConfig, HazardModel
from .cp_model import Hyperparams

CONFIG_ENV = "CPVC_CONFIG"
PROJECT_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def load_env() -> None:
    """加载项目内 .env.local / .env（不覆盖已有环境变量）"""
    try:
        from dotenv import load_dotenv
    except ImportError:
        return
    for env_name in (".env.local", ".env"):
        env_path = os.path.join(PROJECT_ROOT, env_name)
        if os.path.exists(env_path):
            load_dotenv(env_path, override=False)


class RunConfig(BaseModel):
    """一次运行的全部可调参数；键名即配置文件的键名"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    hazard_p: float = Field(default=0.02, gt=0.0, lt=1.0, description="几何间隔分布参数")
    a: float = Field(default=5e-4, gt=0.0)
    b: float = Field(default=5e-4, gt=0.0)
    delta0: float = Field(default=10.0, gt=0.0)
    delta1: float = Field(default=0.02, gt=0.0)
    max_support: int = Field(default=100, ge=1, description="剪枝后保留的支撑点数 n")
    include_mu: bool = True
    missing_policy: Literal["error", "drop_rows"] = "error"
    threads: int = Field(default=0, ge=0, description="0 表示自动")
    seed: int = Field(default=0, ge=0)

    def hyperparams(self) -> Hyperparams:
        return Hyperparams(a=self.a, b=self.b, delta0=self.delta0, delta1=self.delta1,
                           include_mu=self.include_mu)

    def filter_config(self) -> FilterConfig:
        return FilterConfig(self.hyperparams(), HazardModel.shifted_geometric(self.hazard_p), self.max_support)

    def worker_count(self) -> int:
        return self.threads or min(32, os.cpu_count() or 1)

    def to_json(self) -> str:
        return json.dumps(self.model_dump(), indent=2, sort_keys=True) + "\n"


def load_config(path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """
    合成有效配置

    Args:
        path: JSON配置文件；None 时读取环境变量 CPVC_CONFIG（可来自 .env）
        overrides: 命令行覆盖项，值为 None 的键忽略
    """
    load_env()
    path = path or os.getenv(CONFIG_ENV) or None
    values: Dict[str, Any] = {}
    if path:
        try:
            with open(path, "r", encoding="utf-8") as f:
                values = json.load(f)
        except json.JSONDecodeError as e:
            raise CPInputError(f"配置文件不是合法JSON {path}: {e}") from e
        if not isinstance(values, dict):
            raise CPInputError(f"配置文件顶层必须是对象: {path}")
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        return RunConfig(**values)
    except ValidationError as e:
        raise CPInputError(f"配置无效: {e}") from e
