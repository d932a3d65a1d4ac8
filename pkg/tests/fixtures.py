#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
测试用的小规模配置与数据
"""

import numpy as np

from core.config import RunConfig, build_config, deep_merge


def micro_config(**overrides) -> RunConfig:
    """
    4×4 帧、2 步序列的极小配置，用于梯度数值校验

    leaky_slope 取 1 使激活为线性，差分不跨越折点。
    """
    base = {
        'env': {'frame_size': 4, 'episode_length': 2, 'n_expert': 4, 'n_random': 4},
        'net': {'conv_kernel': 2, 'conv_stride': 2, 'width_multiplier': 1 / 32,
                'state_dim': 4, 'embed_dim': 4, 'lstm_layers': 1, 'leaky_slope': 1.0},
        'loss': {'tau': 0.5, 'rho': 100.0, 'horizon': 2, 'negatives': 1,
                 'positive_window': 1, 'frames_per_sequence': 1},
    }
    return build_config('desk', deep_merge(base, overrides))


def small_config(**overrides) -> RunConfig:
    """16×16 帧、6 步序列的小配置，可构造智能体网络"""
    base = {
        'env': {'frame_size': 16, 'episode_length': 6, 'n_expert': 8, 'n_random': 8},
        'net': {'width_multiplier': 1 / 16, 'state_dim': 8, 'embed_dim': 8,
                'agent_channels': 4, 'agent_feature_dim': 8, 'agent_hidden_dim': 16},
        'loss': {'horizon': 2, 'negatives': 2},
        'align': {'n_pretrain': 3, 'batch_pairs': 2},
        'interact': {'n_pi': 0, 'n_train': 0, 'warmup_steps': 0, 'replay_capacity': 64,
                     'rl_batch_size': 4, 'encoder_batch_pairs': 2, 'eval_interval': 0},
        'eval': {'episodes': 2},
    }
    return build_config('desk', deep_merge(base, overrides))


def random_frames(count: int, length: int, size: int, seed: int = 0) -> np.ndarray:
    """[count, length, 3, size, size] 的随机 uint8 帧"""
    rng = np.random.default_rng(seed)
    return rng.integers(0, 256, size=(count, length, 3, size, size), dtype=np.uint8)
