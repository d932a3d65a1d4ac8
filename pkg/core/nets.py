#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
网络定义
四个编码函数与强化学习智能体的策略 / 价值网络

模块结构:
- ImageEncoder     g_θ1 / g_θ2  (L 视图 1 通道，ab 视图 2 通道)
- ImageDecoder     q_γ          (帧编码 → Lab 三通道帧)
- SequenceEncoder  f_ω          (2 层 LSTM + 线性输出)
- Predictor        d_φ          (2 层 MLP，z → 下一帧编码)
- EncoderBundle    以上全部，外加 encode_frame / decode_state /
                   encode_sequence / predict_next / rollout
- AgentNets        像素编码器 E + 策略头 + 价值头 + 目标网络

作者: TrajVision
版本: 1.0.0
"""

import copy
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from core import tensor as T
from core.checkpoint import load_checkpoint, save_checkpoint
from core.config import NetConfig, RunConfig, encoder_ladder
from core.errors import ContractError, DimensionError
from core.layers import (BatchNorm, Conv2d, ConvTranspose2d, Flatten, LeakyReLU, Linear,
                         LSTM, LSTMState, Module, Sequential, Tanh)
from core.tensor import Tensor, conv_transposed_output_size, no_grad
from core.vision import Frame, frames_to_unit, frames_to_views

# 编码器卷积通道 (宽度系数为 1 时)，层数多于 4 时沿用 512
ENCODER_CHANNELS = (64, 128, 256, 512)
BOTTLENECK_CHANNELS = 512
ACTION_DIM = 2


# ==================== 图像编码 / 解码 ====================

class ImageEncoder(Module):
    """
    单视图 CNN 编码器

    Conv(K,S)+BN+LReLU 重复到空间尺寸为 1，随后 Conv1x1+BN+LReLU，
    最后 Conv1x1 输出 out_dim 维。
    """

    def __init__(self, in_channels: int, out_dim: int, frame_size: int,
                 net: NetConfig, rng: np.random.Generator):
        self.ladder = encoder_ladder(frame_size, net.conv_kernel, net.conv_stride)
        layers: List[Module] = []
        channels = in_channels
        for i in range(len(self.ladder) - 1):
            out = net.channels(ENCODER_CHANNELS[min(i, len(ENCODER_CHANNELS) - 1)])
            layers += [Conv2d(channels, out, net.conv_kernel, rng, stride=net.conv_stride),
                       BatchNorm(out), LeakyReLU(net.leaky_slope)]
            channels = out
        bottleneck = net.channels(BOTTLENECK_CHANNELS)
        layers += [Conv2d(channels, bottleneck, 1, rng), BatchNorm(bottleneck), LeakyReLU(net.leaky_slope),
                   Conv2d(bottleneck, out_dim, 1, rng), Flatten()]
        self.net = Sequential(*layers)
        self.conv_channels = [net.channels(ENCODER_CHANNELS[min(i, len(ENCODER_CHANNELS) - 1)])
                              for i in range(len(self.ladder) - 1)]

    def forward(self, x: Tensor) -> Tensor:
        return self.net(x)


class ImageDecoder(Module):
    """
    转置卷积解码器

    Conv1x1+LReLU、Conv1x1+BN+LReLU，之后按编码器尺寸阶梯的逆序
    做 TConv，output_padding 使每层恰好恢复编码器对应尺寸；
    最后一层 TConv 输出 3 通道，不接 BN / 激活。
    """

    def __init__(self, state_dim: int, frame_size: int, net: NetConfig, rng: np.random.Generator,
                 out_channels: int = 3):
        ladder = encoder_ladder(frame_size, net.conv_kernel, net.conv_stride)
        sizes = list(reversed(ladder))
        n_up = len(sizes) - 1
        conv_channels = [net.channels(ENCODER_CHANNELS[min(i, len(ENCODER_CHANNELS) - 1)])
                         for i in range(n_up)]
        up_channels = list(reversed(conv_channels[:-1])) + [out_channels]

        bottleneck = net.channels(BOTTLENECK_CHANNELS)
        layers: List[Module] = [Conv2d(state_dim, bottleneck, 1, rng), LeakyReLU(net.leaky_slope),
                                Conv2d(bottleneck, bottleneck, 1, rng), BatchNorm(bottleneck),
                                LeakyReLU(net.leaky_slope)]
        channels = bottleneck
        self.output_paddings = []
        for i in range(n_up):
            op = sizes[i + 1] - conv_transposed_output_size(sizes[i], net.conv_kernel, net.conv_stride)
            self.output_paddings.append(op)
            out = up_channels[i]
            layers.append(ConvTranspose2d(channels, out, net.conv_kernel, rng,
                                          stride=net.conv_stride, output_padding=op))
            if i < n_up - 1:
                layers += [BatchNorm(out), LeakyReLU(net.leaky_slope)]
            channels = out
        self.state_dim = state_dim
        self.net = Sequential(*layers)

    def forward(self, s: Tensor) -> Tensor:
        return self.net(s.reshape(s.shape[0], self.state_dim, 1, 1))


# ==================== 序列编码 / 预测 ====================

@dataclass
class SequenceCarry:
    """序列编码的可携带状态: LSTM 各层 (h, c) 与已消费的帧数"""
    state: LSTMState
    steps: int
    z: Optional[Tensor] = None


class SequenceEncoder(Module):
    """f_ω: 多层 LSTM，输出经线性层映射为 z"""

    def __init__(self, state_dim: int, embed_dim: int, layers: int, rng: np.random.Generator):
        self.lstm = LSTM(state_dim, embed_dim, rng, num_layers=layers)
        self.head = Linear(embed_dim, embed_dim, rng)

    def forward(self, states: Sequence[Tensor], carry: Optional[SequenceCarry] = None) -> Tuple[Tensor, SequenceCarry]:
        if not states:
            raise ContractError("序列编码至少需要一个状态")
        if carry is None:
            carry = SequenceCarry(self.lstm.initial_state(states[0].shape[0]), 0)
        state = carry.state
        out = None
        for s in states:
            out, state = self.lstm.step(s, state)
        z = self.head(out)
        return z, SequenceCarry(state, carry.steps + len(states), z)


class Predictor(Module):
    """d_φ: 2 层 MLP"""

    def __init__(self, embed_dim: int, state_dim: int, slope: float, rng: np.random.Generator):
        self.net = Sequential(Linear(embed_dim, state_dim, rng), LeakyReLU(slope),
                              Linear(state_dim, state_dim, rng))

    def forward(self, z: Tensor) -> Tensor:
        return self.net(z)


# ==================== 编码函数集合 ====================

class EncoderBundle(Module):
    """
    编码函数集合 (g_θ1, g_θ2, q_γ, f_ω, d_φ)

    s = g_θ(o) = [g_θ1(v1), g_θ2(v2)]，z = f_ω(s_0..s_t)，ŝ_{t+1} = d_φ(z_t)
    """

    def __init__(self, config: RunConfig, seed: Optional[int] = None):
        net = config.net
        rng = np.random.default_rng(config.seed if seed is None else seed)
        self.frame_size = config.env.frame_size
        self.state_dim = net.state_dim
        self.embed_dim = net.embed_dim
        half = net.state_dim // 2
        self.g1 = ImageEncoder(1, half, self.frame_size, net, rng)
        self.g2 = ImageEncoder(2, half, self.frame_size, net, rng)
        self.q = ImageDecoder(net.state_dim, self.frame_size, net, rng)
        self.f = SequenceEncoder(net.state_dim, net.embed_dim, net.lstm_layers, rng)
        self.d = Predictor(net.embed_dim, net.state_dim, net.leaky_slope, rng)

    # ---------- 帧编码 ----------

    def _check_frames(self, rgb: np.ndarray) -> None:
        if rgb.ndim != 4 or rgb.shape[1:] != (3, self.frame_size, self.frame_size):
            raise DimensionError(
                f"帧批次应为 [N, 3, {self.frame_size}, {self.frame_size}]，实际 {rgb.shape}"
            )

    def encode_views(self, l_view: Tensor, ab_view: Tensor) -> Tuple[Tensor, Tensor, Tensor]:
        """返回 (g1(v1), g2(v2), 拼接后的 s)"""
        s1 = self.g1(l_view)
        s2 = self.g2(ab_view)
        return s1, s2, T.concat([s1, s2], axis=1)

    def encode_rgb(self, rgb: np.ndarray) -> Tuple[Tensor, Tensor, Tensor]:
        """
        批量帧编码

        Args:
            rgb: [N, 3, H, W] uint8

        Returns:
            (s1, s2, s)
        """
        rgb = np.asarray(rgb)
        self._check_frames(rgb)
        l_view, ab_view = frames_to_views(rgb)
        return self.encode_views(Tensor(l_view), Tensor(ab_view))

    def decode_state(self, s: Tensor) -> Tensor:
        """ŝ → [N, 3, H, W] 的 Lab 帧 (归一化视图)"""
        if s.ndim != 2 or s.shape[1] != self.state_dim:
            raise DimensionError(f"帧编码应为 [N, {self.state_dim}]，实际 {s.shape}")
        return self.q(s)

    # ---------- 序列编码 ----------

    def encode_sequence(self, states: Union[Tensor, Sequence[Tensor]],
                        carry: Optional[SequenceCarry] = None) -> Tuple[Tensor, SequenceCarry]:
        """
        序列编码，可在 carry 上增量扩展

        Args:
            states: [B, t, D] 张量，或长度 t 的 [B, D] 列表
            carry: 之前前缀的状态，None 表示从头开始

        Returns:
            (z_t [B, embed_dim], 新 carry)
        """
        if isinstance(states, Tensor):
            if states.ndim != 3:
                raise DimensionError(f"状态序列应为 [B, t, D]，实际 {states.shape}")
            states = [states[:, i, :] for i in range(states.shape[1])]
        for s in states:
            if s.shape[-1] != self.state_dim:
                raise DimensionError(f"状态维度应为 {self.state_dim}，实际 {s.shape[-1]}")
        return self.f(list(states), carry)

    def predict_next(self, z: Tensor) -> Tensor:
        """ŝ_{t+1} = d_φ(z_t)"""
        if z.shape[-1] != self.embed_dim:
            raise DimensionError(f"序列编码维度应为 {self.embed_dim}，实际 {z.shape[-1]}")
        return self.d(z)

    def rollout(self, carry: SequenceCarry, horizon: int) -> List[Tensor]:
        """
        从前缀 carry 出发预测 K 个未来帧编码

        ŝ_{t+1} = d(z_t)，之后把预测值接到前缀上继续编码:
        ŝ_{t+k} = d(f(s_..t, ŝ_{t+1}, …, ŝ_{t+k-1}))
        """
        if carry.z is None:
            raise ContractError("rollout 需要至少编码过一个状态的 carry")
        predictions = [self.predict_next(carry.z)]
        for _ in range(horizon - 1):
            z, carry = self.encode_sequence([predictions[-1]], carry)
            predictions.append(self.predict_next(z))
        return predictions

    # ---------- 推理接口 ----------

    def encode_frame(self, frame: Frame) -> np.ndarray:
        """单帧编码 (评估模式，不记录梯度)，返回 [state_dim]"""
        if frame.height != self.frame_size or frame.width != self.frame_size:
            raise DimensionError(
                f"帧尺寸应为 {self.frame_size}x{self.frame_size}，实际 {frame.height}x{frame.width}"
            )
        was_training = self.training
        self.eval()
        with no_grad():
            _, _, s = self.encode_rgb(frame.rgb[None])
        self.train(was_training)
        return s.data[0].copy()

    def embed_trajectories(self, frames: np.ndarray, batch_size: int = 32) -> np.ndarray:
        """
        轨迹 → 最终序列编码 z (评估模式)

        Args:
            frames: [N, T+1, 3, H, W] uint8

        Returns:
            np.ndarray: [N, embed_dim]
        """
        was_training = self.training
        self.eval()
        out = []
        with no_grad():
            for start in range(0, len(frames), batch_size):
                chunk = np.asarray(frames[start:start + batch_size])
                b, t = chunk.shape[:2]
                _, _, s = self.encode_rgb(chunk.reshape(b * t, *chunk.shape[2:]))
                z, _ = self.encode_sequence(s.reshape(b, t, self.state_dim))
                out.append(z.data.copy())
        self.train(was_training)
        return np.concatenate(out, axis=0)

    # ---------- 持久化 ----------

    def save(self, path: Union[str, Path], metadata: dict = None) -> Path:
        return save_checkpoint(path, self.state_dict(), metadata)

    def load(self, path: Union[str, Path]) -> dict:
        entries, metadata = load_checkpoint(path)
        self.load_state_dict({k: v for k, v in entries.items() if k.split('.')[0] in ('g1', 'g2', 'q', 'f', 'd')})
        return metadata


# ==================== 智能体网络 ====================

class PixelEncoder(Module):
    """智能体的 CNN 编码器 E"""

    def __init__(self, frame_size: int, net: NetConfig, rng: np.random.Generator):
        c = net.agent_channels
        size = T.conv_output_size(frame_size, 3, 2)
        size = T.conv_output_size(size, 3, 1)
        self.net = Sequential(
            Conv2d(3, c, 3, rng, stride=2), LeakyReLU(net.leaky_slope),
            Conv2d(c, c, 3, rng, stride=1), LeakyReLU(net.leaky_slope),
            Flatten(), Linear(c * size * size, net.agent_feature_dim, rng), Tanh(),
        )

    def forward(self, x: Tensor) -> Tensor:
        return self.net(x)


class ActorHead(Module):
    """策略头: 特征 → tanh 动作"""

    def __init__(self, net: NetConfig, rng: np.random.Generator):
        h = net.agent_hidden_dim
        self.net = Sequential(Linear(net.agent_feature_dim, h, rng), LeakyReLU(0.0),
                              Linear(h, h, rng), LeakyReLU(0.0),
                              Linear(h, ACTION_DIM, rng), Tanh())

    def forward(self, feature: Tensor) -> Tensor:
        return self.net(feature)


class CriticHead(Module):
    """价值头: [特征, 动作] → Q"""

    def __init__(self, net: NetConfig, rng: np.random.Generator):
        h = net.agent_hidden_dim
        self.net = Sequential(Linear(net.agent_feature_dim + ACTION_DIM, h, rng), LeakyReLU(0.0),
                              Linear(h, h, rng), LeakyReLU(0.0),
                              Linear(h, 1, rng))

    def forward(self, feature: Tensor, action: Tensor) -> Tensor:
        return self.net(T.concat([feature, action], axis=1))


class CriticNet(Module):
    """目标网络容器 (E 的拷贝 + 价值头拷贝)"""

    def __init__(self, encoder: PixelEncoder, head: CriticHead):
        self.E = encoder
        self.head = head


class AgentNets(Module):
    """
    智能体网络

    策略 π = head(E(o))，价值 Q = critic(E(o), a)；E 由价值损失训练，
    策略头使用截断梯度的特征。目标网络为 E 与价值头的拷贝，做 Polyak 平滑。
    检查点条目前缀: policy.E / policy.head / critic.head / critic_target.*
    """

    def __init__(self, config: RunConfig, seed: Optional[int] = None):
        rng = np.random.default_rng((config.seed if seed is None else seed) + 1)
        self.frame_size = config.env.frame_size
        self.encoder = PixelEncoder(self.frame_size, config.net, rng)
        self.actor = ActorHead(config.net, rng)
        self.critic = CriticHead(config.net, rng)
        self.target = CriticNet(copy.deepcopy(self.encoder), copy.deepcopy(self.critic))

    @property
    def action_dim(self) -> int:
        return ACTION_DIM

    def features(self, rgb: np.ndarray, target: bool = False) -> Tensor:
        rgb = np.asarray(rgb)
        if rgb.ndim != 4 or rgb.shape[1:] != (3, self.frame_size, self.frame_size):
            raise DimensionError(f"帧批次应为 [N, 3, {self.frame_size}, {self.frame_size}]，实际 {rgb.shape}")
        x = Tensor(frames_to_unit(rgb))
        return (self.target.E if target else self.encoder)(x)

    def act(self, rgb: np.ndarray) -> np.ndarray:
        """无噪声动作，[N, 2]"""
        with no_grad():
            return self.actor(self.features(rgb)).data.copy()

    def online_parameters(self) -> Dict[str, List[Tensor]]:
        return {'encoder': self.encoder.parameters(),
                'actor': self.actor.parameters(),
                'critic': self.critic.parameters()}

    def soft_update(self, polyak: float) -> None:
        """target ← polyak · target + (1 - polyak) · online"""
        pairs = list(zip(self.target.E.parameters(), self.encoder.parameters())) + \
            list(zip(self.target.head.parameters(), self.critic.parameters()))
        for tgt, src in pairs:
            tgt.data *= polyak
            tgt.data += (1.0 - polyak) * src.data

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = {}
        state.update({f"policy.E.{k}": v for k, v in self.encoder.state_dict().items()})
        state.update({f"policy.head.{k}": v for k, v in self.actor.state_dict().items()})
        state.update({f"critic.head.{k}": v for k, v in self.critic.state_dict().items()})
        state.update({f"critic_target.E.{k}": v for k, v in self.target.E.state_dict().items()})
        state.update({f"critic_target.head.{k}": v for k, v in self.target.head.state_dict().items()})
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        def part(prefix: str) -> Dict[str, np.ndarray]:
            return {k[len(prefix):]: v for k, v in state.items() if k.startswith(prefix)}

        self.encoder.load_state_dict(part('policy.E.'))
        self.actor.load_state_dict(part('policy.head.'))
        self.critic.load_state_dict(part('critic.head.'))
        self.target.E.load_state_dict(part('critic_target.E.'))
        self.target.head.load_state_dict(part('critic_target.head.'))

    def save(self, path: Union[str, Path], metadata: dict = None) -> Path:
        return save_checkpoint(path, self.state_dict(), metadata)

    def load(self, path: Union[str, Path]) -> dict:
        entries, metadata = load_checkpoint(path)
        self.load_state_dict(entries)
        return metadata
