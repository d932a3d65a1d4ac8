#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
梯度数值校验工具
中心差分 (步长 1e-3) 与反向传播结果逐元素比较，相对误差 ≤ 1e-3

|解析梯度| < FLOOR (1e-6) 的元素不参与比较。相对误差的分母下限为 SCALE (1e-3):
量级在 [1e-6, 1e-3) 的梯度实际按绝对误差 RTOL·SCALE = 1e-6 判定。
"""

import unittest
from typing import Callable, List, Optional, Sequence

import numpy as np

from core.tensor import Tape, Tensor, no_grad, precision

STEP = 1e-3
RTOL = 1e-3
FLOOR = 1e-6
SCALE = 1e-3


def analytic_gradients(fn: Callable[[], Tensor], tensors: Sequence[Tensor]) -> List[np.ndarray]:
    """在新计算带上求 fn() 对各张量的梯度"""
    for t in tensors:
        t.grad = None
    with Tape() as tape:
        out = fn()
        tape.backward(out)
    return [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]


def _positions(size: int, limit: Optional[int], rng: np.random.Generator) -> np.ndarray:
    if limit is None or size <= limit:
        return np.arange(size)
    return np.sort(rng.choice(size, size=limit, replace=False))


def numeric_gradients(fn: Callable[[], Tensor], tensors: Sequence[Tensor], step: float = STEP,
                      limit: Optional[int] = None, seed: int = 0) -> List[np.ndarray]:
    """
    中心差分梯度

    limit 不为 None 时每个张量只抽查 limit 个元素，其余位置为 NaN。
    """
    rng = np.random.default_rng(seed)
    grads = []
    with no_grad():
        for t in tensors:
            flat = t.data.reshape(-1)
            g = np.full(flat.size, np.nan)
            for i in _positions(flat.size, limit, rng):
                orig = flat[i]
                flat[i] = orig + step
                plus = fn().item()
                flat[i] = orig - step
                minus = fn().item()
                flat[i] = orig
                g[i] = (plus - minus) / (2 * step)
            grads.append(g.reshape(t.shape))
    return grads


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = FLOOR) -> float:
    """
    只比较 |解析梯度| ≥ floor 且被抽查到的元素

    量级低于 SCALE 的梯度按绝对误差 rtol·SCALE 比较。
    """
    mask = ~np.isnan(numeric) & (np.abs(analytic) >= floor)
    if not mask.any():
        return 0.0
    a, n = analytic[mask], numeric[mask]
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), SCALE)))


def assert_gradients_match(testcase, fn: Callable[[], Tensor], tensors: Sequence[Tensor],
                           limit: Optional[int] = None, rtol: float = RTOL, floor: float = FLOOR) -> None:
    analytic = analytic_gradients(fn, tensors)
    numeric = numeric_gradients(fn, tensors, limit=limit)
    for i, (a, n) in enumerate(zip(analytic, numeric)):
        error = max_relative_error(a, n, floor)
        testcase.assertLessEqual(error, rtol, f"第 {i} 个张量 {tensors[i].shape} 梯度相对误差 {error:.2e}")


class Float64TestCase(unittest.TestCase):
    """测试期间默认浮点类型切换为 float64"""

    def setUp(self):
        self._precision = precision(np.float64)
        self._precision.__enter__()

    def tearDown(self):
        self._precision.__exit__(None, None, None)
