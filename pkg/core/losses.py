#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
训练目标
帧级损失 L_frame = L_S + L_triplet + L_ae 与序列级损失 L_seq = L_Z + L_O

支持的功能:
- similarity_h: h(a, b) = exp(cos(a, b) / τ)
- triplet_loss / ae_loss / cmc_loss (帧级)
- dpc_loss (预测编码) / seq_contrast_loss (专家与非专家分布对比)
- total_loss: 按批次组装全部损失，返回 LossReport

作者: TrajVision
版本: 1.0.0
"""

from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from core import tensor as T
from core.config import LossConfig
from core.errors import ContractError, DimensionError, DomainError, ParameterError
from core.tensor import Tensor
from core.vision import frames_to_views

LOSS_COLUMNS = ('l_triplet', 'l_ae', 'l_s', 'l_z', 'l_o', 'l_total')


@dataclass
class SimilarityParams:
    """相似度温度"""
    tau: float = 0.07

    def __post_init__(self):
        if not self.tau > 0:
            raise ParameterError(f"温度 tau 必须为正，实际 {self.tau}")


@dataclass
class LossReport:
    """
    各损失分量

    l_total = l_triplet + l_ae + l_s + l_z + l_o；graph 为可反向传播的总损失张量
    """
    l_triplet: float
    l_ae: float
    l_s: float
    l_z: float
    l_o: float
    l_total: float
    graph: Optional[Tensor] = field(default=None, repr=False, compare=False)

    @property
    def l_frame(self) -> float:
        return self.l_s + self.l_triplet + self.l_ae

    @property
    def l_seq(self) -> float:
        return self.l_z + self.l_o

    def as_dict(self, with_seq: bool = False) -> Dict[str, float]:
        row = {k: getattr(self, k) for k in LOSS_COLUMNS}
        if with_seq:
            row['l_seq'] = self.l_seq
        return row


# ==================== 相似度 ====================

def similarity_h(a: np.ndarray, b: np.ndarray, tau: float) -> float:
    """
    h(a, b) = exp(aᵀb / (τ‖a‖‖b‖))

    Raises:
        DomainError: 任一输入为零向量
    """
    SimilarityParams(tau)
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise DomainError("相似度 h 的输入不能是零向量")
    return float(np.exp(a @ b / (tau * na * nb)))


def _unit_rows(x: Tensor) -> Tensor:
    norms = np.linalg.norm(x.data, axis=-1)
    if np.any(norms == 0):
        raise DomainError("余弦相似度的输入包含零向量")
    return x / T.l2_norm(x, axis=-1, keepdims=True)


def cosine_logits(a: Tensor, b: Tensor, tau: float) -> Tensor:
    """
    行间余弦相似度矩阵除以 τ

    Args:
        a: [N, D] 或 [B, N, D]
        b: [M, D] 或 [B, M, D]

    Returns:
        Tensor: [N, M] 或 [B, N, M]
    """
    ua, ub = _unit_rows(a), _unit_rows(b)
    axes = (1, 0) if ub.ndim == 2 else (0, 2, 1)
    return T.matmul(ua, T.transpose(ub, axes)) / tau


def _nce(logits: Tensor, target: np.ndarray) -> Tensor:
    """-log softmax(logits)[target]，对行取平均"""
    logp = T.log_softmax(logits, axis=-1)
    flat = logp.reshape(-1, logp.shape[-1])
    picked = flat[np.arange(flat.shape[0]), np.asarray(target).reshape(-1)]
    return -T.mean(picked)


# ==================== 帧级损失 ====================

def triplet_loss(s: Tensor, s_p: Tensor, s_n: Tensor, rho: float) -> Tensor:
    """
    ‖s - s_p‖² + max(ρ - ‖s - s_n‖², 0)，批次取平均

    Args:
        s, s_p, s_n: [D] 或 [B, D]
        rho: 间隔 (> 0)
    """
    if not rho > 0:
        raise ParameterError(f"triplet 间隔 rho 必须为正，实际 {rho}")
    if not (s.shape == s_p.shape == s_n.shape):
        raise DimensionError(f"triplet 输入形状不一致: {s.shape}, {s_p.shape}, {s_n.shape}")
    pos = T.sum_(T.square(s - s_p), axis=-1)
    neg = T.sum_(T.square(s - s_n), axis=-1)
    return T.mean(pos + T.clamp_min(rho - neg, 0.0))


def ae_loss(frame: Tensor, reconstruction: Tensor) -> Tensor:
    """像素通道上的均方误差"""
    if frame.shape != reconstruction.shape:
        raise DimensionError(f"重建形状 {reconstruction.shape} 与原帧 {frame.shape} 不一致")
    return T.mean(T.square(frame - reconstruction))


def cmc_loss(l_enc: Tensor, ab_enc: Tensor, tau: float) -> Tensor:
    """
    双视图对称 InfoNCE

    第 i 个样本的正样本对为 (L_i, ab_i)，负样本为批内其他样本的另一视图，
    两个方向各算一次取平均。

    Args:
        l_enc: [N, D] L 视图编码
        ab_enc: [N, D] ab 视图编码
    """
    SimilarityParams(tau)
    if l_enc.shape != ab_enc.shape or l_enc.ndim != 2:
        raise DimensionError(f"两个视图编码形状应一致且为 [N, D]: {l_enc.shape} / {ab_enc.shape}")
    n = l_enc.shape[0]
    if n < 2:
        raise ContractError("cmc_loss 至少需要 2 个样本提供负样本")
    logits = cosine_logits(l_enc, ab_enc, tau)
    target = np.arange(n)
    forward = _nce(logits, target)
    backward = _nce(T.transpose(logits), target)
    return (forward + backward) * 0.5


# ==================== 序列级损失 ====================

def predictive_nce(predictions: Sequence[Tensor], states: Tensor, targets: Sequence[int], tau: float) -> Tensor:
    """
    预测编码的对比项

    第 k 个预测 ŝ 的正样本为 states[:, targets[k]]，负样本为同一序列中的
    其余真实状态；返回 -(1/K) Σ_k log(h⁺ / (h⁺ + Σ h⁻))，批次取平均。

    Args:
        predictions: K 个 [B, D]
        states: [B, T+1, D]
        targets: K 个时间下标
    """
    SimilarityParams(tau)
    if states.shape[1] < 2:
        raise ContractError("预测编码损失需要至少一个负样本 (序列长度 ≥ 2)")
    pred = T.stack(list(predictions), axis=1)  # [B, K, D]
    logits = cosine_logits(pred, states, tau)  # [B, K, T+1]
    b = states.shape[0]
    target = np.tile(np.asarray(targets, dtype=np.int64), (b, 1))
    return _nce(logits, target)


def dpc_loss(bundle, states: Tensor, context: int, horizon: int, tau: float) -> Tensor:
    """
    预测编码损失 L_Z

    用前缀 s_0..s_{t-1} 编码出 z，依次预测 ŝ_t..ŝ_{t+K-1}
    (每个预测接回前缀继续编码)，与同序列真实状态做对比。

    Args:
        bundle: EncoderBundle
        states: [B, T+1, D]
        context: 前缀长度 t (≥ 1)
        horizon: 预测步数 K，需满足 t + K ≤ T + 1
    """
    length = states.shape[1]
    if context < 1:
        raise ContractError(f"前缀长度必须 ≥ 1，实际 {context}")
    if horizon < 1 or context + horizon > length:
        raise ContractError(f"预测步数越界: t={context}, K={horizon}, 序列长度 {length}")
    _, carry = bundle.encode_sequence(states[:, :context, :])
    predictions = bundle.rollout(carry, horizon)
    return predictive_nce(predictions, states, range(context, context + horizon), tau)


def seq_contrast_loss(z: Tensor, z_p: Tensor, z_n: Tensor, tau: float) -> Tensor:
    """
    序列编码对比损失 L_O

    -log(h(z, z_p) / (h(z, z_p) + Σ_i h(z, z_n_i)))

    Args:
        z, z_p: [D] 或 [B, D]
        z_n: [k, D] 或 [B, k, D]
    """
    SimilarityParams(tau)
    if z.ndim == 1:
        z, z_p, z_n = z.reshape(1, -1), z_p.reshape(1, -1), z_n.reshape(1, *z_n.shape)
    if z_n.ndim != 3 or z_n.shape[1] < 1:
        raise ContractError("seq_contrast_loss 至少需要 1 个负样本")
    if z.shape != z_p.shape or z_n.shape[2] != z.shape[1] or z_n.shape[0] != z.shape[0]:
        raise DimensionError(f"序列编码形状不一致: {z.shape}, {z_p.shape}, {z_n.shape}")
    candidates = T.concat([z_p.reshape(z_p.shape[0], 1, -1), z_n], axis=1)  # [B, 1+k, D]
    logits = cosine_logits(z.reshape(z.shape[0], 1, -1), candidates, tau)   # [B, 1, 1+k]
    return _nce(logits, np.zeros(z.shape[0], dtype=np.int64))


# ==================== 总损失 ====================

def sample_triplet_indices(length: int, config: LossConfig, rng: np.random.Generator) -> Tuple[int, int, int]:
    """
    在长度为 length 的序列中采样 (锚点, 正样本, 负样本) 帧下标

    正样本距锚点 1..positive_window 步；负样本距锚点至少
    max(1, ceil(negative_gap_fraction · T)) 步；其余均匀。
    没有满足间隔的负样本时取最远帧。
    """
    anchor = int(rng.integers(length))
    steps = np.arange(length)
    gap = np.abs(steps - anchor)
    positives = steps[(gap >= 1) & (gap <= config.positive_window)]
    min_gap = max(1, int(np.ceil(config.negative_gap_fraction * (length - 1))))
    negatives = steps[gap >= min_gap]
    positive = int(rng.choice(positives))
    negative = int(rng.choice(negatives)) if len(negatives) else int(steps[np.argmax(gap)])
    return anchor, positive, negative


def total_loss(bundle, expert_batch: np.ndarray, other_batch: np.ndarray,
               config: LossConfig, rng: np.random.Generator) -> LossReport:
    """
    组装完整目标 L = L_frame + L_seq

    两个分布各 n 条序列。L_O 中每条序列以同分布另一条为正样本，
    以另一分布的 k 条为负样本 (两个分布对称处理)；帧级损失的帧
    从本批序列中采样。

    Args:
        bundle: EncoderBundle
        expert_batch: [n, T+1, 3, H, W] uint8
        other_batch: [n, T+1, 3, H, W] uint8
        config: LossConfig
        rng: 采样用随机数发生器

    Returns:
        LossReport (graph 字段可反向传播)
    """
    expert_batch = np.asarray(expert_batch)
    other_batch = np.asarray(other_batch)
    if len(expert_batch) < 2 or len(other_batch) < 2:
        raise ContractError(f"每种分布至少需要 2 条序列，实际 {len(expert_batch)} / {len(other_batch)}")
    if expert_batch.shape[1:] != other_batch.shape[1:]:
        raise ContractError(f"两种分布的序列形状不一致: {expert_batch.shape} / {other_batch.shape}")

    n_e, n_o = len(expert_batch), len(other_batch)
    sequences = np.concatenate([expert_batch, other_batch], axis=0)
    labels = np.array([0] * n_e + [1] * n_o)
    b, length = sequences.shape[:2]
    frames = sequences.reshape(b * length, *sequences.shape[2:])

    # ---------- 帧编码 ----------
    l_view, ab_view = frames_to_views(frames)
    s1, s2, s = bundle.encode_views(Tensor(l_view), Tensor(ab_view))

    # ---------- 帧级损失 ----------
    anchors, positives, negatives = [], [], []
    for i in range(b):
        for _ in range(config.frames_per_sequence):
            a, p, n = sample_triplet_indices(length, config, rng)
            anchors.append(i * length + a)
            positives.append(i * length + p)
            negatives.append(i * length + n)
    anchors = np.array(anchors)
    l_triplet = triplet_loss(s[anchors], s[np.array(positives)], s[np.array(negatives)], config.rho)
    target = Tensor(np.concatenate([l_view[anchors], ab_view[anchors]], axis=1))
    l_ae = ae_loss(target, bundle.decode_state(s[anchors]))
    l_s = cmc_loss(s1[anchors], s2[anchors], config.tau)

    # ---------- 序列级损失 ----------
    states = s.reshape(b, length, bundle.state_dim)
    horizon = min(config.horizon, length - 1)
    context = int(rng.integers(1, length - horizon + 1))
    _, carry = bundle.encode_sequence(states[:, :context, :])
    predictions = bundle.rollout(carry, horizon)
    l_z = predictive_nce(predictions, states, range(context, context + horizon), config.tau)

    z, _ = bundle.encode_sequence(states[:, context:, :], carry)
    pos_idx, neg_idx = [], []
    k = min(config.negatives, n_e, n_o)
    for i in range(b):
        same = np.flatnonzero((labels == labels[i]) & (np.arange(b) != i))
        other = np.flatnonzero(labels != labels[i])
        pos_idx.append(int(rng.choice(same)))
        neg_idx.append(rng.choice(other, size=k, replace=False))
    l_o = seq_contrast_loss(z, z[np.array(pos_idx)], z[np.stack(neg_idx)], config.tau)

    total = l_triplet + l_ae + l_s + l_z + l_o
    parts = [float(x.item()) for x in (l_triplet, l_ae, l_s, l_z, l_o)]
    return LossReport(*parts, l_total=float(np.sum(parts)), graph=total)
