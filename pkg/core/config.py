#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
运行配置
全部超参数的 pydantic 模型，支持 desk / full 两种预设

支持的功能:
- EnvConfig / NetConfig / LossConfig / AlignConfig / InteractConfig / EvalConfig
- RunConfig.for_profile('desk' | 'full')
- JSON 配置文件读写 (在预设之上合并覆盖项)
- .env 环境变量: TRAJVISION_OUTPUT_DIR, TRAJVISION_LOG_LEVEL

作者: TrajVision
版本: 1.0.0
"""

import json
import os
from pathlib import Path
from typing import Any, Dict, Literal, Optional, Union

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from core.errors import ConfigError, DatasetIOError, ParameterError
from core.tensor import conv_output_size

load_dotenv()

Profile = Literal['desk', 'full']
EnvId = Literal['point_reach', 'point_push']

OUTPUT_DIR_ENV = 'TRAJVISION_OUTPUT_DIR'
LOG_LEVEL_ENV = 'TRAJVISION_LOG_LEVEL'


def default_output_dir() -> Path:
    """默认输出目录，可由 TRAJVISION_OUTPUT_DIR 覆盖"""
    return Path(os.environ.get(OUTPUT_DIR_ENV, 'outputs'))


def default_log_level() -> str:
    return os.environ.get(LOG_LEVEL_ENV, 'INFO').upper()


class _Section(BaseModel):
    model_config = ConfigDict(extra='forbid', validate_assignment=True)


# ==================== 分段配置 ====================

class EnvConfig(_Section):
    """环境与数据集"""
    env_id: EnvId = 'point_reach'
    frame_size: int = Field(32, ge=4, description="帧边长 (full 预设 64)")
    episode_length: int = Field(40, ge=2, description="每条轨迹的步数 T，帧数为 T+1")
    n_expert: int = Field(200, ge=1, description="专家轨迹数 N (full 预设 5000)")
    n_random: int = Field(200, ge=1, description="随机策略轨迹数")
    goal_radius: float = Field(0.05, gt=0)
    min_separation: float = Field(0.3, ge=0, lt=1)
    expert_kp: float = Field(4.0, ge=0)
    expert_kd: float = Field(2.0, ge=0)


class NetConfig(_Section):
    """网络结构"""
    width_multiplier: float = Field(0.25, gt=0, description="编码器 / 解码器通道数缩放系数")
    state_dim: int = Field(128, ge=2, description="帧编码 s 维度 (两个视图各一半)")
    embed_dim: int = Field(128, ge=1, description="序列编码 z 维度")
    lstm_layers: int = Field(2, ge=1)
    conv_kernel: int = Field(5, ge=1)
    conv_stride: int = Field(2, ge=1)
    leaky_slope: float = Field(0.2, ge=0, description="Leaky ReLU 负半轴斜率 (可选 2.0)")
    agent_channels: int = Field(16, ge=1)
    agent_feature_dim: int = Field(50, ge=1)
    agent_hidden_dim: int = Field(128, ge=1)

    @field_validator('state_dim')
    @classmethod
    def _even_state(cls, v: int) -> int:
        if v % 2:
            raise ValueError("state_dim 必须为偶数 (L 与 ab 视图各占一半)")
        return v

    def channels(self, base: int) -> int:
        return max(1, int(round(base * self.width_multiplier)))


class LossConfig(_Section):
    """损失函数"""
    tau: float = Field(0.07, gt=0, description="对比损失温度")
    rho: float = Field(1.0, gt=0, description="triplet 间隔")
    horizon: int = Field(3, ge=1, description="DPC 预测步数 K")
    negatives: int = Field(8, ge=1, description="L_O 负样本数 k")
    positive_window: int = Field(2, ge=1, description="triplet 正样本与锚点最大间隔")
    negative_gap_fraction: float = Field(0.25, gt=0, lt=1, description="triplet 负样本最小间隔 (占 T 比例)")
    frames_per_sequence: int = Field(2, ge=1, description="每条序列为帧级损失采样的锚点数")


class AlignConfig(_Section):
    """对齐阶段"""
    n_pretrain: int = Field(200, ge=0, description="对齐阶段迭代数 N_pretrain (full 预设 8000)")
    batch_pairs: int = Field(16, ge=2, description="每批每种分布的序列数 n (full 预设 16 × 2)")
    lr: float = Field(1e-4, gt=0)
    holdout_fraction: float = Field(0.1, gt=0, lt=1)
    random_source: Literal['dataset', 'rollout'] = 'dataset'


class InteractConfig(_Section):
    """交互阶段"""
    n_pi: int = Field(60_000, ge=0, description="智能体总训练步数 N_π (full 预设 1.55M)")
    n_train: int = Field(15_000, ge=0, description="编码器训练截止步数 N_train (full 预设 375K)")
    n_update: int = Field(50, ge=1, description="编码器更新周期 N_update")
    warmup_steps: int = Field(1_000, ge=0, description="开始更新前的均匀随机动作步数")
    exploration_noise: float = Field(0.2, ge=0)
    discount: float = Field(0.99, ge=0, le=1)
    polyak: float = Field(0.995, ge=0, le=1)
    replay_capacity: int = Field(100_000, ge=1)
    rl_batch_size: int = Field(64, ge=1)
    encoder_batch_pairs: int = Field(16, ge=2)
    agent_pool_capacity: int = Field(512, ge=1, description="D_a 容量 (FIFO)")
    actor_lr: float = Field(1e-4, ge=0)
    critic_lr: float = Field(1e-4, ge=0)
    encoder_lr: float = Field(1e-4, gt=0)
    eval_interval: int = Field(10_000, ge=0, description="周期评估间隔 (步)，0 表示只在结束时评估")
    checkpoint_interval: int = Field(0, ge=0, description="周期检查点间隔 (步)，0 表示只在结束时保存")

    @model_validator(mode='after')
    def _check_budgets(self) -> 'InteractConfig':
        if self.n_train > self.n_pi:
            raise ValueError(f"n_train ({self.n_train}) 不能大于 n_pi ({self.n_pi})")
        return self


class EvalConfig(_Section):
    """评估"""
    episodes: int = Field(20, ge=1)
    seed: int = 10_000


# ==================== 总配置 ====================

class RunConfig(_Section):
    """完整运行配置"""
    profile: Profile = 'desk'
    seed: int = 0
    env: EnvConfig = Field(default_factory=EnvConfig)
    net: NetConfig = Field(default_factory=NetConfig)
    loss: LossConfig = Field(default_factory=LossConfig)
    align: AlignConfig = Field(default_factory=AlignConfig)
    interact: InteractConfig = Field(default_factory=InteractConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)

    @model_validator(mode='after')
    def _check_consistency(self) -> 'RunConfig':
        encoder_ladder(self.env.frame_size, self.net.conv_kernel, self.net.conv_stride)
        if self.loss.horizon > self.env.episode_length:
            raise ValueError(f"DPC 步数 K={self.loss.horizon} 超过轨迹长度 T={self.env.episode_length}")
        return self

    @classmethod
    def for_profile(cls, profile: Profile = 'desk', **overrides) -> 'RunConfig':
        """按预设构造配置"""
        base = profile_defaults(profile)
        return cls.model_validate(deep_merge(base, overrides))

    def to_json(self) -> str:
        return self.model_dump_json(indent=2)


def encoder_ladder(frame_size: int, kernel: int, stride: int) -> list:
    """
    编码器各卷积层的空间尺寸序列

    反复应用 (K, S, P=0) 卷积直到尺寸为 1，例如 64 → 30 → 13 → 5 → 1，
    32 → 14 → 5 → 1。无法恰好落到 1 的帧尺寸视为非法配置。
    """
    sizes = [frame_size]
    while sizes[-1] > 1:
        if sizes[-1] < kernel:
            raise ParameterError(f"帧尺寸 {frame_size} 在卷积核 {kernel} / 步长 {stride} 下无法缩减到 1: {sizes}")
        sizes.append(conv_output_size(sizes[-1], kernel, stride))
    if len(sizes) < 2:
        raise ParameterError(f"帧尺寸 {frame_size} 太小")
    return sizes


def profile_defaults(profile: Profile) -> Dict[str, Any]:
    """
    预设默认值

    full 预设: N=5000，每条轨迹 61 帧 (T=60 步)，64×64，
    N_pretrain=8000，n=16×2，N_train=375K，N_update=50，N_π=1.55M，Adam 1e-4。
    """
    if profile == 'desk':
        return {'profile': 'desk'}
    if profile == 'full':
        return {
            'profile': 'full',
            'env': {'frame_size': 64, 'episode_length': 60, 'n_expert': 5000, 'n_random': 5000},
            'net': {'width_multiplier': 1.0, 'agent_channels': 32, 'agent_hidden_dim': 1024},
            'align': {'n_pretrain': 8000, 'batch_pairs': 16, 'lr': 1e-4},
            'interact': {'n_pi': 1_550_000, 'n_train': 375_000, 'n_update': 50,
                         'warmup_steps': 4_000, 'encoder_lr': 1e-4,
                         'actor_lr': 1e-4, 'critic_lr': 1e-4},
        }
    raise ConfigError(f"未知的预设: {profile}")


def deep_merge(base: Dict[str, Any], overrides: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        elif isinstance(value, BaseModel):
            merged[key] = value.model_dump()
        else:
            merged[key] = value
    return merged


def build_config(profile: Profile = 'desk', overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """在预设上合并覆盖项并校验，失败时抛出 ConfigError"""
    try:
        return RunConfig.model_validate(deep_merge(profile_defaults(profile), overrides or {}))
    except ValidationError as e:
        raise ConfigError(f"配置校验失败: {e}") from e


# ==================== 文件读写 ====================

def save_config(config: RunConfig, path: Union[str, Path]) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(config.to_json() + '\n', encoding='utf-8')
    except OSError as e:
        raise DatasetIOError(path, f"写入配置失败: {e}") from e
    return path


def load_config(path: Union[str, Path], profile: Optional[Profile] = None) -> RunConfig:
    """
    读取 JSON 配置

    文件中的字段覆盖预设默认值；预设取 profile 参数，其次文件中的
    profile 字段，最后为 desk。
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding='utf-8'))
    except OSError as e:
        raise DatasetIOError(path, f"读取配置失败: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: JSON 解析失败: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: 配置文件顶层必须是对象")
    chosen = profile or raw.get('profile', 'desk')
    raw['profile'] = chosen
    return build_config(chosen, raw)
