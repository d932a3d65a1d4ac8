#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
TrajVision - 基于视频的模仿学习核心模块

只观察专家视频 (无动作)，学习轨迹编码函数，并以智能体轨迹与专家轨迹
在编码空间中的距离作为强化学习奖励。

模块结构:
- core/
    - tensor.py       # 反向模式自动微分张量库
    - layers.py       # 网络层
    - optim.py        # Adam 优化器
    - checkpoint.py   # 参数检查点
    - vision.py       # Lab 颜色空间双视图
    - nets.py         # 编码函数与智能体网络
    - losses.py       # 训练目标
    - env.py          # 二维视觉控制环境与数据集
    - align.py        # 对齐阶段
    - interact.py     # 交互阶段与评估
    - config.py       # 运行配置
    - metrics.py      # 日志与指标 CSV
- tests/              # 单元测试

作者: TrajVision
版本: 1.0.0
"""

__version__ = '1.0.0'
__author__ = 'TrajVision'

from core.config import RunConfig, build_config, load_config
from core.nets import AgentNets, EncoderBundle
from core.align import run_alignment, separation_score
from core.interact import evaluate_agent, learned_reward, run_interactive
from core.env import generate_dataset, load_dataset

__all__ = [
    'RunConfig',
    'build_config',
    'load_config',
    'EncoderBundle',
    'AgentNets',
    'run_alignment',
    'separation_score',
    'run_interactive',
    'learned_reward',
    'evaluate_agent',
    'generate_dataset',
    'load_dataset',
]
