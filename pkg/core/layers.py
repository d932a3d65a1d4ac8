#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
网络层
在 core.tensor 的函数式算子之上提供带参数的有状态层

支持的层:
- Linear / Conv2d / ConvTranspose2d
- BatchNorm (滑动统计量，train / eval 模式)
- LeakyReLU / Tanh / Flatten / Sequential
- LSTM (多层，逐步推进，状态可携带)

作者: TrajVision
版本: 1.0.0
"""

from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from core import tensor as T
from core.errors import DimensionError, ParameterError
from core.tensor import LSTMParams, Tensor


def _uniform(rng: np.random.Generator, bound: float, shape) -> Tensor:
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


class Module:
    """
    层的基类

    Tensor 属性视为可训练参数，_buffers 中列出的 numpy 数组视为
    非训练状态 (如 BatchNorm 滑动统计量)。子模块可以直接作为属性，
    也可以放在 list 中。
    """

    _buffers: Tuple[str, ...] = ()

    training: bool = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    # ---------- 遍历 ----------

    def _children(self) -> Iterator[Tuple[str, 'Module']]:
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = '') -> Iterator[Tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if isinstance(value, Tensor):
                yield prefix + name, value
        for name, child in self._children():
            yield from child.named_parameters(prefix + name + '.')

    def parameters(self) -> List[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = '') -> Iterator[Tuple[str, np.ndarray]]:
        for name in self._buffers:
            yield prefix + name, getattr(self, name)
        for name, child in self._children():
            yield from child.named_buffers(prefix + name + '.')

    # ---------- 模式 ----------

    def train(self, mode: bool = True) -> 'Module':
        self.training = mode
        for _, child in self._children():
            child.train(mode)
        return self

    def eval(self) -> 'Module':
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    # ---------- 状态 ----------

    def state_dict(self) -> Dict[str, np.ndarray]:
        """参数与缓冲区的拷贝，按遍历顺序排列"""
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        state.update({name: b.copy() for name, b in self.named_buffers()})
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        """就地载入参数与缓冲区，形状必须一致"""
        targets = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        missing = (set(targets) | set(buffers)) - set(state)
        if missing:
            raise DimensionError(f"检查点缺少条目: {sorted(missing)[:5]}")
        for name, p in targets.items():
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise DimensionError(f"{name} 形状不匹配: 期望 {p.shape}，实际 {value.shape}")
            p.data[...] = value
        for name, b in buffers.items():
            value = np.asarray(state[name])
            if value.shape != b.shape:
                raise DimensionError(f"{name} 形状不匹配: 期望 {b.shape}，实际 {value.shape}")
            b[...] = value

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))


# ==================== 基础层 ====================

class Linear(Module):
    """全连接层"""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, bias: bool = True):
        bound = 1.0 / np.sqrt(in_features)
        self.weight = _uniform(rng, bound, (out_features, in_features))
        self.bias = _uniform(rng, bound, (out_features,)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)


class Conv2d(Module):
    """二维卷积层"""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 rng: np.random.Generator, stride: int = 1, padding: int = 0, bias: bool = True):
        bound = 1.0 / np.sqrt(in_channels * kernel_size * kernel_size)
        self.weight = _uniform(rng, bound, (out_channels, in_channels, kernel_size, kernel_size))
        self.bias = _uniform(rng, bound, (out_channels,)) if bias else None
        self.stride = stride
        self.padding = padding

    def forward(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class ConvTranspose2d(Module):
    """二维转置卷积层"""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 rng: np.random.Generator, stride: int = 1, output_padding: int = 0, bias: bool = True):
        if output_padding < 0:
            raise ParameterError(f"output_padding 不能为负，实际 {output_padding}")
        bound = 1.0 / np.sqrt(out_channels * kernel_size * kernel_size)
        self.weight = _uniform(rng, bound, (in_channels, out_channels, kernel_size, kernel_size))
        self.bias = _uniform(rng, bound, (out_channels,)) if bias else None
        self.stride = stride
        self.output_padding = output_padding

    def forward(self, x: Tensor) -> Tensor:
        return T.conv2d_transposed(x, self.weight, self.bias,
                                   stride=self.stride, output_padding=self.output_padding)


class BatchNorm(Module):
    """
    批归一化层

    momentum 0.1、eps 1e-5；eval 模式下只使用滑动统计量。
    """

    _buffers = ('running_mean', 'running_var')

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)
        self.running_mean = np.zeros(channels, dtype=T.get_default_dtype())
        self.running_var = np.ones(channels, dtype=T.get_default_dtype())
        self.momentum = momentum
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return T.batch_norm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                            training=self.training, momentum=self.momentum, eps=self.eps)


class LeakyReLU(Module):
    def __init__(self, slope: float = 0.2):
        self.slope = slope

    def forward(self, x: Tensor) -> Tensor:
        return T.leaky_relu(x, self.slope)


class Tanh(Module):
    def forward(self, x: Tensor) -> Tensor:
        return T.tanh(x)


class Flatten(Module):
    def forward(self, x: Tensor) -> Tensor:
        return x.reshape(x.shape[0], -1)


class Sequential(Module):
    """按顺序串联的层"""

    def __init__(self, *layers: Module):
        self.layers: List[Module] = list(layers)

    def forward(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer(x)
        return x

    def __len__(self) -> int:
        return len(self.layers)

    def __getitem__(self, i: int) -> Module:
        return self.layers[i]


# ==================== LSTM ====================

LSTMState = List[Tuple[Tensor, Tensor]]


class LSTMLayer(Module):
    """单层 LSTM 参数"""

    def __init__(self, input_size: int, hidden_size: int, rng: np.random.Generator):
        bound = 1.0 / np.sqrt(hidden_size)
        self.w_ih = _uniform(rng, bound, (4 * hidden_size, input_size))
        self.w_hh = _uniform(rng, bound, (4 * hidden_size, hidden_size))
        self.bias = _uniform(rng, bound, (4 * hidden_size,))

    @property
    def params(self) -> LSTMParams:
        return LSTMParams(self.w_ih, self.w_hh, self.bias)


class LSTM(Module):
    """
    多层 LSTM

    逐步调用 step 推进，状态 (每层的 h, c) 由调用方携带，
    支持在已有前缀上增量扩展序列。
    """

    def __init__(self, input_size: int, hidden_size: int, rng: np.random.Generator, num_layers: int = 2):
        if num_layers < 1:
            raise ParameterError(f"num_layers 必须 ≥ 1，实际 {num_layers}")
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.cells: List[LSTMLayer] = [
            LSTMLayer(input_size if i == 0 else hidden_size, hidden_size, rng)
            for i in range(num_layers)
        ]

    def initial_state(self, batch: int) -> LSTMState:
        zeros = np.zeros((batch, self.hidden_size))
        return [(Tensor(zeros), Tensor(zeros)) for _ in self.cells]

    def step(self, x: Tensor, state: LSTMState) -> Tuple[Tensor, LSTMState]:
        """
        推进一步

        Args:
            x: [B, input_size]
            state: 每层的 (h, c)

        Returns:
            (顶层输出 h, 新状态)
        """
        if x.shape[-1] != self.input_size:
            raise DimensionError(f"LSTM 输入维度应为 {self.input_size}，实际 {x.shape[-1]}")
        new_state: LSTMState = []
        out = x
        for cell, (h, c) in zip(self.cells, state):
            h, c = T.lstm_step(out, h, c, cell.params)
            new_state.append((h, c))
            out = h
        return out, new_state

    def forward(self, inputs: Sequence[Tensor], state: Optional[LSTMState] = None) -> Tuple[List[Tensor], LSTMState]:
        if state is None:
            state = self.initial_state(inputs[0].shape[0])
        outputs = []
        for x in inputs:
            out, state = self.step(x, state)
            outputs.append(out)
        return outputs, state
