#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
张量与反向自动微分
基于 numpy 的稠密张量计算核心，覆盖全部网络与损失所需的算子

支持的功能:
- Tensor (行主序连续 float32 数组 + 梯度)
- Tape 计算带 (每个训练步创建一次，前向只追加，反向只读)
- 逐元素运算、归约、softmax / log-sum-exp、L2 范数
- conv2d / conv2d_transposed (im2col 实现)
- batch_norm (训练/评估两种模式，带滑动统计量)
- leaky_relu、linear、lstm_step

作者: TrajVision
版本: 1.0.0
"""

import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from core.errors import ContractError, DimensionError, ParameterError


ArrayLike = Union['Tensor', np.ndarray, float, int, Sequence]

_DEFAULT_DTYPE = np.float32
_state = threading.local()


# ==================== 精度控制 ====================

def get_default_dtype():
    """当前默认浮点类型"""
    return _DEFAULT_DTYPE


@contextmanager
def precision(dtype):
    """
    临时切换默认浮点类型

    梯度数值校验使用 float64，生产路径保持 float32。

    Args:
        dtype: numpy 浮点类型
    """
    global _DEFAULT_DTYPE
    previous = _DEFAULT_DTYPE
    _DEFAULT_DTYPE = np.dtype(dtype).type
    try:
        yield
    finally:
        _DEFAULT_DTYPE = previous


# ==================== 计算带 ====================

@dataclass
class TapeRecord:
    """计算带上的一条操作记录"""
    op: str
    inputs: Tuple['Tensor', ...]
    output: 'Tensor'
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


def _tape_stack() -> List[Optional['Tape']]:
    if not hasattr(_state, 'stack'):
        _state.stack = []
    return _state.stack


def current_tape() -> Optional['Tape']:
    """返回当前活动的计算带，无则返回 None"""
    stack = _tape_stack()
    return stack[-1] if stack else None


@contextmanager
def no_grad():
    """在该作用域内不记录任何操作"""
    stack = _tape_stack()
    stack.append(None)
    try:
        yield
    finally:
        stack.pop()


class Tape:
    """
    计算带 (ComputationTape)

    前向求值时按顺序追加操作记录，反向时按逆序回放各操作的
    反向规则。计算带随训练步创建、随作用域结束丢弃。

    用法:
        with Tape() as tape:
            loss = model(x)
            tape.backward(loss)
    """

    def __init__(self):
        self.records: List[TapeRecord] = []
        self._sealed = False

    def __enter__(self) -> 'Tape':
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()
        self.records = []
        self._sealed = True

    def __len__(self) -> int:
        return len(self.records)

    def record(self, op: str, inputs: Tuple['Tensor', ...], output: 'Tensor', backward) -> None:
        """追加一条操作记录"""
        if self._sealed:
            raise ContractError("计算带已进入反向阶段，不能继续记录")
        output._tape = self
        self.records.append(TapeRecord(op, inputs, output, backward))

    def backward(self, root: 'Tensor') -> None:
        """
        从标量根节点反向传播

        Args:
            root: 单元素张量，必须由本计算带产生
        """
        if root.data.size != 1:
            raise ContractError(f"反向传播的根节点必须是标量，实际形状 {root.shape}")
        if root._tape is not self:
            raise ContractError("根节点不是在当前计算带上产生的")

        self._sealed = True
        root.grad = np.ones_like(root.data)

        for rec in reversed(self.records):
            grad_out = rec.output.grad
            if grad_out is None:
                continue
            grads = rec.backward(grad_out)
            for parent, g in zip(rec.inputs, grads):
                if g is None or not parent.requires_grad:
                    continue
                g = np.asarray(g, dtype=parent.data.dtype)
                if g.shape != parent.shape:
                    g = g.reshape(parent.shape)
                if parent.grad is None:
                    parent.grad = g.copy()
                else:
                    parent.grad = parent.grad + g


def backward(root: 'Tensor') -> None:
    """在当前活动计算带上从 root 反向传播"""
    tape = current_tape()
    if tape is None:
        raise ContractError("没有活动的计算带")
    tape.backward(root)


# ==================== 张量 ====================

class Tensor:
    """
    稠密张量

    data 为行主序连续数组，requires_grad 为 True 的张量在反向
    传播后持有与 data 同形状的 grad。
    """

    def __init__(self, data: ArrayLike, requires_grad: bool = False, name: str = None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.ascontiguousarray(data, dtype=get_default_dtype())
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._tape: Optional[Tape] = None

    def __repr__(self) -> str:
        label = f", name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    # ---------- 属性 ----------

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> 'Tensor':
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    # ---------- 构造 ----------

    @staticmethod
    def zeros(shape, requires_grad: bool = False) -> 'Tensor':
        return Tensor(np.zeros(shape), requires_grad=requires_grad)

    @staticmethod
    def ones(shape, requires_grad: bool = False) -> 'Tensor':
        return Tensor(np.ones(shape), requires_grad=requires_grad)

    # ---------- 运算符 ----------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims: bool = False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis=axis, keepdims=keepdims)


def as_tensor(value: ArrayLike) -> Tensor:
    """把常量包装成不需要梯度的张量"""
    return value if isinstance(value, Tensor) else Tensor(value)


def _result(data: np.ndarray, parents: Tuple[Tensor, ...], backward_fn, op: str) -> Tensor:
    """创建运算结果，并在需要时记录到活动计算带"""
    tape = current_tape()
    needs_grad = tape is not None and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs_grad)
    if needs_grad:
        tape.record(op, parents, out, backward_fn)
    return out


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """把广播后的梯度沿扩展轴求和，还原到原形状"""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ==================== 逐元素运算 ====================

def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def _backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), _backward, 'add')


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def _backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(a.data - b.data, (a, b), _backward, 'sub')


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def _backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(a.data * b.data, (a, b), _backward, 'mul')


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def _backward(g):
        ga = g / b.data
        gb = -g * a.data / (b.data * b.data)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _result(a.data / b.data, (a, b), _backward, 'div')


def square(x: Tensor) -> Tensor:
    def _backward(g):
        return (2.0 * g * x.data,)

    return _result(x.data * x.data, (x,), _backward, 'square')


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)

    def _backward(g):
        return (g * 0.5 / out,)

    return _result(out, (x,), _backward, 'sqrt')


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)

    def _backward(g):
        return (g * out,)

    return _result(out, (x,), _backward, 'exp')


def log(x: Tensor) -> Tensor:
    def _backward(g):
        return (g / x.data,)

    return _result(np.log(x.data), (x,), _backward, 'log')


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)

    def _backward(g):
        return (g * (1.0 - out * out),)

    return _result(out, (x,), _backward, 'tanh')


def sigmoid(x: Tensor) -> Tensor:
    # 分段计算避免 exp 溢出
    data = x.data
    out = np.empty_like(data)
    pos = data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-data[pos]))
    ez = np.exp(data[~pos])
    out[~pos] = ez / (1.0 + ez)

    def _backward(g):
        return (g * out * (1.0 - out),)

    return _result(out, (x,), _backward, 'sigmoid')


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    """
    Leaky ReLU

    Args:
        x: 输入
        slope: 负半轴斜率，默认 0.2
    """
    mask = x.data > 0
    out = np.where(mask, x.data, slope * x.data)

    def _backward(g):
        return (np.where(mask, g, slope * g),)

    return _result(out, (x,), _backward, 'leaky_relu')


def relu(x: Tensor) -> Tensor:
    return leaky_relu(x, slope=0.0)


def clamp_min(x: Tensor, low: float) -> Tensor:
    """max(x, low)，用于 hinge 项"""
    mask = x.data > low
    out = np.where(mask, x.data, low)

    def _backward(g):
        return (g * mask,)

    return _result(out, (x,), _backward, 'clamp_min')


# ==================== 形状操作 ====================

def reshape(x: Tensor, shape) -> Tensor:
    def _backward(g):
        return (g.reshape(x.shape),)

    return _result(x.data.reshape(shape), (x,), _backward, 'reshape')


def transpose(x: Tensor, axes=None) -> Tensor:
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))

    def _backward(g):
        return (g.transpose(inverse),)

    return _result(x.data.transpose(axes), (x,), _backward, 'transpose')


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


def index(x: Tensor, idx) -> Tensor:
    basic = _is_basic_index(idx)

    def _backward(g):
        full = np.zeros_like(x.data)
        if basic:
            full[idx] += g
        else:
            # 高级索引可能有重复下标
            np.add.at(full, idx, g)
        return (full,)

    return _result(x.data[idx], (x,), _backward, 'index')


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def _backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tensors, _backward, 'concat')


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)

    def _backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _result(np.stack([t.data for t in tensors], axis=axis), tensors, _backward, 'stack')


# ==================== 归约 ====================

def _expand(g: np.ndarray, shape, axis, keepdims: bool) -> np.ndarray:
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def _backward(g):
        return (_expand(g, x.shape, axis, keepdims),)

    return _result(np.sum(x.data, axis=axis, keepdims=keepdims), (x,), _backward, 'sum')


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))

    def _backward(g):
        return (_expand(g, x.shape, axis, keepdims) / count,)

    return _result(np.mean(x.data, axis=axis, keepdims=keepdims), (x,), _backward, 'mean')


def logsumexp(x: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    peak = np.max(x.data, axis=axis, keepdims=True)
    shifted = np.exp(x.data - peak)
    total = np.sum(shifted, axis=axis, keepdims=True)
    out = np.log(total) + peak
    soft = shifted / total
    if not keepdims:
        out = np.squeeze(out, axis=axis)

    def _backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * soft,)

    return _result(out, (x,), _backward, 'logsumexp')


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    return x - logsumexp(x, axis=axis, keepdims=True)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    return exp(log_softmax(x, axis=axis))


def l2_norm(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    """欧氏范数，零向量处梯度取 0"""
    out = np.sqrt(np.sum(x.data * x.data, axis=axis, keepdims=keepdims))

    def _backward(g):
        norm = out if (axis is None or keepdims) else np.expand_dims(out, axis)
        gg = g if (axis is None or keepdims) else np.expand_dims(g, axis)
        safe = np.where(norm > 0, norm, 1.0)
        return (np.where(norm > 0, gg * x.data / safe, 0.0),)

    return _result(out, (x,), _backward, 'l2_norm')


# ==================== 线性代数 ====================

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1] != b.shape[0 if b.ndim == 1 else -2]:
        raise DimensionError(f"matmul 维度不匹配: {a.shape} @ {b.shape}")

    def _backward(g):
        if a.ndim == 2 and b.ndim == 2:
            return g @ b.data.T, a.data.T @ g
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _result(a.data @ b.data, (a, b), _backward, 'matmul')


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """
    全连接层 y = x W^T + b

    Args:
        x: [B, D_in]
        weight: [D_out, D_in]
        bias: [D_out]
    """
    if x.shape[-1] != weight.shape[1]:
        raise DimensionError(f"linear 输入维度 {x.shape[-1]} 与权重 {weight.shape} 不匹配")
    out = matmul(x, transpose(weight))
    if bias is not None:
        out = out + bias
    return out


# ==================== 卷积 ====================

def conv_output_size(size: int, kernel: int, stride: int, padding: int = 0) -> int:
    """floor((H + 2P - K) / S) + 1"""
    return (size + 2 * padding - kernel) // stride + 1


def conv_transposed_output_size(size: int, kernel: int, stride: int, output_padding: int = 0) -> int:
    """(H - 1) * S + K + OP"""
    return (size - 1) * stride + kernel + output_padding


def conv2d(x: Tensor, kernel: Tensor, bias: Optional[Tensor] = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """
    二维互相关

    Args:
        x: [N, C, H, W]
        kernel: [F, C, K, K]
        bias: [F]，可选
        stride: 步长 (≥ 1)
        padding: 输入四周补零

    Returns:
        Tensor: [N, F, H', W']，H' = floor((H + 2P - K) / S) + 1
    """
    if stride < 1:
        raise ParameterError(f"stride 必须 ≥ 1，实际 {stride}")
    if x.ndim != 4 or kernel.ndim != 4:
        raise DimensionError(f"conv2d 需要 4 维输入和卷积核，实际 {x.shape} / {kernel.shape}")
    n, c, h, w = x.shape
    f, kc, kh, kw = kernel.shape
    if kc != c:
        raise DimensionError(f"输入通道 {c} 与卷积核通道 {kc} 不一致")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise DimensionError(f"卷积核 {kh}x{kw} 大于补零后的输入 {h + 2 * padding}x{w + 2 * padding}")

    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(w, kw, stride, padding)
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    wmat = kernel.data.reshape(f, -1)
    out = (cols @ wmat.T).reshape(n, ho, wo, f).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data.reshape(1, f, 1, 1)

    def _backward(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, f)
        gk = (g2.T @ cols).reshape(kernel.shape)
        gcols = (g2 @ wmat).reshape(n, ho, wo, c, kh, kw)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                    gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        gx = gxp[:, :, padding:padding + h, padding:padding + w] if padding else gxp
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return (gx, gk, gb) if bias is not None else (gx, gk)

    parents = (x, kernel, bias) if bias is not None else (x, kernel)
    return _result(np.ascontiguousarray(out), parents, _backward, 'conv2d')


def conv2d_transposed(x: Tensor, kernel: Tensor, bias: Optional[Tensor] = None,
                      stride: int = 1, output_padding: int = 0) -> Tensor:
    """
    二维转置卷积 (输入补零恒为 0)

    Args:
        x: [N, C_in, H, W]
        kernel: [C_in, F, K, K]
        bias: [F]，可选
        stride: 步长 (≥ 1)
        output_padding: 输出末端额外补的行列数 (≥ 0)

    Returns:
        Tensor: [N, F, (H-1)·S + K + OP, ...]
    """
    if stride < 1:
        raise ParameterError(f"stride 必须 ≥ 1，实际 {stride}")
    if output_padding < 0:
        raise ParameterError(f"output_padding 不能为负，实际 {output_padding}")
    if x.ndim != 4 or kernel.ndim != 4:
        raise DimensionError(f"conv2d_transposed 需要 4 维输入和卷积核，实际 {x.shape} / {kernel.shape}")
    n, c, h, w = x.shape
    kc, f, kh, kw = kernel.shape
    if kc != c:
        raise DimensionError(f"输入通道 {c} 与卷积核通道 {kc} 不一致")

    ho = conv_transposed_output_size(h, kh, stride, output_padding)
    wo = conv_transposed_output_size(w, kw, stride, output_padding)
    xflat = x.data.transpose(0, 2, 3, 1).reshape(n * h * w, c)
    wmat = kernel.data.reshape(c, f * kh * kw)
    cols = (xflat @ wmat).reshape(n, h, w, f, kh, kw)
    out = np.zeros((n, f, ho, wo), dtype=x.data.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * h:stride, j:j + stride * w:stride] += \
                cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    if bias is not None:
        out += bias.data.reshape(1, f, 1, 1)

    def _backward(g):
        gcols = np.empty((n, h, w, f, kh, kw), dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                gcols[:, :, :, :, i, j] = \
                    g[:, :, i:i + stride * h:stride, j:j + stride * w:stride].transpose(0, 2, 3, 1)
        gflat = gcols.reshape(n * h * w, f * kh * kw)
        gx = (gflat @ wmat.T).reshape(n, h, w, c).transpose(0, 3, 1, 2)
        gk = (xflat.T @ gflat).reshape(kernel.shape)
        if bias is not None:
            return gx, gk, g.sum(axis=(0, 2, 3))
        return gx, gk

    parents = (x, kernel, bias) if bias is not None else (x, kernel)
    return _result(out, parents, _backward, 'conv2d_transposed')


# ==================== 批归一化 ====================

def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor,
               running_mean: np.ndarray, running_var: np.ndarray,
               training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """
    批归一化，支持 [N, C] 与 [N, C, H, W]

    训练模式使用批统计量并就地更新 running_mean / running_var；
    评估模式是逐通道的确定性仿射变换，与批次组成无关。
    """
    if x.ndim not in (2, 4):
        raise DimensionError(f"batch_norm 只支持 2 维或 4 维输入，实际 {x.shape}")
    axes = (0,) if x.ndim == 2 else (0, 2, 3)
    view = (1, -1) if x.ndim == 2 else (1, -1, 1, 1)
    g_ = gamma.data.reshape(view)
    b_ = beta.data.reshape(view)

    if training:
        count = x.size // x.shape[1]
        if count < 2:
            raise ContractError("训练模式的 batch_norm 每个通道至少需要 2 个样本")
        mu = x.data.mean(axis=axes, keepdims=True)
        var = x.data.var(axis=axes, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (x.data - mu) * inv
        running_mean *= (1.0 - momentum)
        running_mean += momentum * mu.reshape(-1)
        running_var *= (1.0 - momentum)
        running_var += momentum * var.reshape(-1) * count / (count - 1)

        def _backward(g):
            dxhat = g * g_
            dx = inv / count * (count * dxhat
                                - dxhat.sum(axis=axes, keepdims=True)
                                - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True))
            return dx, (g * xhat).sum(axis=axes), g.sum(axis=axes)
    else:
        inv = 1.0 / np.sqrt(running_var.reshape(view) + eps)
        xhat = (x.data - running_mean.reshape(view)) * inv

        def _backward(g):
            return g * g_ * inv, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    return _result(g_ * xhat + b_, (x, gamma, beta), _backward, 'batch_norm')


# ==================== 循环单元 ====================

@dataclass
class LSTMParams:
    """单层 LSTM 参数，门顺序为 (输入, 遗忘, 候选, 输出)"""
    w_ih: Tensor  # [4H, D_in]
    w_hh: Tensor  # [4H, H]
    bias: Tensor  # [4H]

    @property
    def hidden_size(self) -> int:
        return self.w_hh.shape[1]


def lstm_step(x: Tensor, h: Tensor, c: Tensor, params: LSTMParams) -> Tuple[Tensor, Tensor]:
    """
    LSTM 单步更新

    Args:
        x: [B, D_in]
        h: [B, H]
        c: [B, H]
        params: LSTMParams

    Returns:
        (h', c')
    """
    hidden = params.hidden_size
    if h.shape[-1] != hidden or c.shape[-1] != hidden:
        raise DimensionError(f"隐状态维度应为 {hidden}，实际 h={h.shape}, c={c.shape}")
    gates = linear(x, params.w_ih) + linear(h, params.w_hh) + params.bias
    i = sigmoid(gates[:, 0:hidden])
    f = sigmoid(gates[:, hidden:2 * hidden])
    g = tanh(gates[:, 2 * hidden:3 * hidden])
    o = sigmoid(gates[:, 3 * hidden:4 * hidden])
    c_next = f * c + i * g
    h_next = o * tanh(c_next)
    return h_next, c_next
