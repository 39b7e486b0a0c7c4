#!/usr/bin/env python3
"""
CP模块异常定义

CLI 退出码约定：CPInputError -> 2，CPNumericError -> 3。
"""


class CPError(Exception):
    """CP模块所有异常的基类"""


class CPInputError(CPError, ValueError):
    """输入或前置条件错误（格式错误、非有限值、参数越界等）"""


class CPNumericError(CPError, ArithmeticError):
    """数值失败（风险函数支撑耗尽、权重全部下溢等）"""
