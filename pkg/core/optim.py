#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
优化器
带偏差修正的 Adam

作者: TrajVision
版本: 1.0.0
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from core.errors import DimensionError, ParameterError
from core.tensor import Tensor


@dataclass
class AdamState:
    """Adam 状态: 一阶 / 二阶矩估计与步数"""
    step: int = 0
    m: List[np.ndarray] = field(default_factory=list)
    v: List[np.ndarray] = field(default_factory=list)


def adam_update(
    params: Sequence[Tensor],
    grads: Sequence[Optional[np.ndarray]],
    state: AdamState,
    lr: float,
    betas: Tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8
) -> AdamState:
    """
    执行一步 Adam 更新 (就地修改参数)

    Args:
        params: 参数张量
        grads: 对应梯度，None 视为全零
        state: AdamState，首次调用时自动初始化
        lr: 学习率 (> 0)
        betas: 一阶 / 二阶矩衰减系数
        eps: 数值稳定项

    Returns:
        AdamState: 更新后的状态
    """
    if lr <= 0:
        raise ParameterError(f"学习率必须为正，实际 {lr}")
    if len(params) != len(grads):
        raise DimensionError(f"参数数量 {len(params)} 与梯度数量 {len(grads)} 不一致")
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    if len(state.m) != len(params):
        raise DimensionError("Adam 状态与参数数量不一致")

    beta1, beta2 = betas
    state.step += 1
    correction1 = 1.0 - beta1 ** state.step
    correction2 = 1.0 - beta2 ** state.step

    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape or m.shape != p.shape:
            raise DimensionError(f"梯度形状 {g.shape} 与参数形状 {p.shape} 不一致")
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / correction1
        v_hat = v / correction2
        p.data -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.data.dtype)

    return state


class Adam:
    """
    Adam 优化器

    用法:
        opt = Adam(model.parameters(), lr=1e-4)
        opt.zero_grad(); ...反向传播...; opt.step()
    """

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-4,
                 betas: Tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        if lr <= 0:
            raise ParameterError(f"学习率必须为正，实际 {lr}")
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.state = AdamState()

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        adam_update(self.params, [p.grad for p in self.params], self.state,
                    self.lr, self.betas, self.eps)
