#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
异常定义
TrajVision 各模块统一使用的异常类型

所有异常都继承自 TrajVisionError，同时继承对应的内置异常，
调用方既可以按领域捕获，也可以按 ValueError / OSError 捕获。

作者: TrajVision
版本: 1.0.0
"""


class TrajVisionError(Exception):
    """TrajVision 异常基类"""


class DimensionError(TrajVisionError, ValueError):
    """张量形状不匹配"""


class ParameterError(TrajVisionError, ValueError):
    """超参数或调用参数非法"""


class ContractError(TrajVisionError, ValueError):
    """违反调用前置条件"""


class DomainError(TrajVisionError, ValueError):
    """输入超出函数定义域（如零向量的余弦相似度）"""


class EvaluationError(TrajVisionError, RuntimeError):
    """评估无法进行（如专家回报等于随机回报）"""


class ConfigError(TrajVisionError, ValueError):
    """配置解析或校验失败"""


class DatasetIOError(TrajVisionError, OSError):
    """数据集 / 检查点文件读写失败"""

    def __init__(self, path, message: str):
        self.path = str(path)
        super().__init__(f"{self.path}: {message}")
