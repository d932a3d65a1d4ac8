#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
对齐阶段
在任何智能体训练之前，用专家轨迹与随机策略轨迹预训练全部编码函数

支持的功能:
- split_holdout: 按轨迹下标的固定 90/10 划分
- separation_score: 以到专家平均序列编码的距离打分，计算专家对随机的 AUC
- run_alignment: 每个 epoch 采样 n 条专家与 n 条随机序列，计算总损失并用 Adam 更新
- 随机轨迹来源可选已存数据集或在线 rollout

作者: TrajVision
版本: 1.0.0
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
import pandas as pd
from tqdm import tqdm

from core.config import RunConfig
from core.env import TrajectoryDataset, episode_seed, make_policy, rollout
from core.errors import ContractError
from core.losses import LOSS_COLUMNS, total_loss
from core.metrics import MetricsWriter
from core.nets import EncoderBundle
from core.optim import Adam
from core.tensor import Tape

logger = logging.getLogger(__name__)

CALIBRATION_SIZE = 64


@dataclass
class AlignmentResult:
    """对齐结果: 训练后的编码函数、逐 epoch 损失、训练前后的分离度"""
    bundle: EncoderBundle
    history: pd.DataFrame
    auc_before: Optional[float] = None
    auc_after: Optional[float] = None

    def summary(self) -> dict:
        last = self.history.iloc[-1].to_dict() if len(self.history) else {}
        return {'epochs': len(self.history), 'auc_before': self.auc_before,
                'auc_after': self.auc_after, 'final_l_total': last.get('l_total')}


# ==================== 划分与打分 ====================

def split_holdout(count: int, fraction: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    按下标划分训练 / 留出集，留出集取末尾 floor(count · fraction) 条

    训练集少于 2 条时不留出。
    """
    n_hold = int(np.floor(count * fraction))
    if count - n_hold < 2:
        n_hold = 0
    indices = np.arange(count)
    return indices[:count - n_hold], indices[count - n_hold:]


def auc_score(positive: np.ndarray, negative: np.ndarray) -> float:
    """P(正样本得分 > 负样本得分)，相等记 0.5"""
    positive = np.asarray(positive, dtype=np.float64).reshape(-1, 1)
    negative = np.asarray(negative, dtype=np.float64).reshape(1, -1)
    wins = (positive > negative).sum() + 0.5 * (positive == negative).sum()
    return float(wins / (positive.size * negative.size))


def separation_score(bundle: EncoderBundle, expert_frames: np.ndarray, random_frames: np.ndarray,
                     calibration_frames: Optional[np.ndarray] = None) -> float:
    """
    专家 / 随机轨迹在序列编码空间的可分离度

    每条轨迹的得分为其 z 到专家平均 z 的负距离；专家平均 z 由
    calibration_frames 计算，缺省时用 expert_frames 本身。
    0.5 为随机水平，1.0 为完全分离。

    Args:
        expert_frames / random_frames: [N, T+1, 3, H, W] uint8
    """
    if len(expert_frames) < 2 or len(random_frames) < 2:
        raise ContractError(f"每组至少需要 2 条轨迹，实际 {len(expert_frames)} / {len(random_frames)}")
    z_expert = bundle.embed_trajectories(expert_frames)
    z_random = bundle.embed_trajectories(random_frames)
    z_calib = z_expert if calibration_frames is None else bundle.embed_trajectories(calibration_frames)
    center = z_calib.astype(np.float64).mean(axis=0)
    score_e = -np.linalg.norm(z_expert - center, axis=1)
    score_r = -np.linalg.norm(z_random - center, axis=1)
    return auc_score(score_e, score_r)


# ==================== 对齐训练 ====================

def _check_datasets(expert: TrajectoryDataset, random: Optional[TrajectoryDataset], config: RunConfig) -> None:
    if len(expert) == 0:
        raise ContractError("专家数据集为空")
    if expert.frame_size != config.env.frame_size:
        raise ContractError(f"专家数据帧尺寸 {expert.frame_size} 与配置 {config.env.frame_size} 不一致")
    if random is None:
        if expert.episode_length != config.env.episode_length:
            raise ContractError(f"专家轨迹长度 {expert.episode_length} 与在线 rollout 长度 "
                                f"{config.env.episode_length} 不一致")
        return
    if len(random) == 0:
        raise ContractError("随机策略数据集为空")
    if random.frames.shape[1:] != expert.frames.shape[1:]:
        raise ContractError(f"专家与随机数据集形状不一致: {expert.frames.shape[1:]} / {random.frames.shape[1:]}")


def _draw(pool: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    picked = rng.choice(pool, size=size, replace=len(pool) < size)
    return np.sort(picked)


def _rollout_random(config: RunConfig, count: int, rng: np.random.Generator) -> np.ndarray:
    """在线生成 count 条随机策略轨迹"""
    env = config.env
    frames = []
    for _ in range(count):
        seed = episode_seed(int(rng.integers(2 ** 31)), env.env_id, 'random', 0)
        policy = make_policy('random', env, np.random.default_rng([seed, 1]))
        frames.append(rollout(env, policy, seed, label='random').frames)
    return np.stack(frames)


class Aligner:
    """
    对齐阶段训练器

    用法:
        aligner = Aligner(config)
        result = aligner.run(expert, random, metrics_path='align.csv')
    """

    def __init__(self, config: RunConfig, bundle: Optional[EncoderBundle] = None):
        self.config = config
        self.bundle = bundle or EncoderBundle(config)
        self.rng = np.random.default_rng([config.seed, 2])

    def _holdout_auc(self, expert: TrajectoryDataset, random_frames: Optional[np.ndarray],
                     expert_train: np.ndarray, expert_hold: np.ndarray) -> Optional[float]:
        if random_frames is None or len(expert_hold) < 2 or len(random_frames) < 2:
            return None
        calibration = expert.frames[expert_train[:CALIBRATION_SIZE]]
        return separation_score(self.bundle, np.asarray(expert.frames[expert_hold]), random_frames, calibration)

    def run(self, expert: TrajectoryDataset, random: Optional[TrajectoryDataset] = None,
            metrics_path: Optional[Union[str, Path]] = None, progress: bool = False,
            evaluate: bool = True) -> AlignmentResult:
        config = self.config
        align = config.align
        if align.random_source == 'dataset' and random is None:
            raise ContractError("random_source=dataset 需要随机策略数据集")
        _check_datasets(expert, random if align.random_source == 'dataset' else None, config)

        expert_train, expert_hold = split_holdout(len(expert), align.holdout_fraction)
        if random is not None and align.random_source == 'dataset':
            random_train, random_hold = split_holdout(len(random), align.holdout_fraction)
            random_hold_frames = np.asarray(random.frames[random_hold]) if len(random_hold) else None
        else:
            random_train = None
            n_hold = max(2, len(expert_hold))
            random_hold_frames = _rollout_random(config, n_hold, np.random.default_rng([config.seed, 3]))

        auc_before = self._holdout_auc(expert, random_hold_frames, expert_train, expert_hold) if evaluate else None

        writer = MetricsWriter(metrics_path, columns=['epoch', *LOSS_COLUMNS],
                               header={'phase': 'align', 'seed': config.seed, 'profile': config.profile})
        bundle = self.bundle
        bundle.train()
        optimizer = Adam(bundle.parameters(), lr=align.lr)
        n = align.batch_pairs

        for epoch in tqdm(range(align.n_pretrain), desc='alignment', disable=not progress):
            expert_batch = np.asarray(expert.frames[_draw(expert_train, n, self.rng)])
            if random_train is not None:
                other_batch = np.asarray(random.frames[_draw(random_train, n, self.rng)])
            else:
                other_batch = _rollout_random(config, n, self.rng)

            optimizer.zero_grad()
            with Tape() as tape:
                report = total_loss(bundle, expert_batch, other_batch, config.loss, self.rng)
                tape.backward(report.graph)
            optimizer.step()

            writer.append({'epoch': epoch, **report.as_dict()})
            if epoch % max(1, align.n_pretrain // 10) == 0:
                logger.info(f"epoch {epoch}: l_total={report.l_total:.4f} "
                            f"l_frame={report.l_frame:.4f} l_seq={report.l_seq:.4f}")

        writer.flush()
        auc_after = self._holdout_auc(expert, random_hold_frames, expert_train, expert_hold) if evaluate else None
        if auc_after is not None:
            logger.info(f"留出集分离度 AUC: {auc_before:.3f} -> {auc_after:.3f}")
        return AlignmentResult(bundle, writer.to_frame(), auc_before, auc_after)


def run_alignment(expert: TrajectoryDataset, random: Optional[TrajectoryDataset], config: RunConfig,
                  bundle: Optional[EncoderBundle] = None, metrics_path: Optional[Union[str, Path]] = None,
                  progress: bool = False, evaluate: bool = True) -> AlignmentResult:
    """
    对齐阶段

    Args:
        expert: 专家数据集 D_e
        random: 随机策略数据集 (random_source=rollout 时可为 None)
        config: 运行配置
        bundle: 初始编码函数，None 时按 config.seed 初始化
        metrics_path: 逐 epoch 损失 CSV

    Returns:
        AlignmentResult
    """
    return Aligner(config, bundle).run(expert, random, metrics_path, progress, evaluate)
