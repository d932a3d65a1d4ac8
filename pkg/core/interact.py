#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
交互阶段
智能体在学到的轨迹距离奖励下做强化学习，并周期性地用自举的智能体
轨迹微调编码函数

支持的功能:
- Transition / ReplayBuffer: 有界 FIFO 回放池
- learned_reward / RewardTracker: r_{t+1} = -‖f(o_{0:t+1}) - f(o_{e,0:t+1})‖，增量序列编码
- actor_critic_update: 确定性 actor-critic (目标网络 Polyak 平滑)
- run_interactive: 完整交互训练循环
- evaluate_agent / evaluate_policy: 缩放回报 (专家=1，随机=0)
- reward_trace: 单回合逐步学习奖励

作者: TrajVision
版本: 1.0.0
"""

import logging
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Deque, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from tqdm import tqdm

from core import tensor as T
from core.config import EnvConfig, InteractConfig, RunConfig
from core.env import PointEnv, TrajectoryDataset, episode_seed, random_action
from core.errors import ContractError, EvaluationError
from core.losses import total_loss
from core.metrics import MetricsWriter
from core.nets import AgentNets, EncoderBundle, SequenceCarry
from core.optim import Adam
from core.tensor import Tape, Tensor, no_grad

logger = logging.getLogger(__name__)

FramePolicy = Callable[[PointEnv, np.ndarray], np.ndarray]


# ==================== 回放池 ====================

@dataclass
class Transition:
    """(o, a, o', r)，r 为学习奖励 (≤ 0)"""
    o: np.ndarray
    a: np.ndarray
    o_next: np.ndarray
    r: float

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=np.float32).reshape(-1)
        if np.any(np.abs(self.a) > 1.0):
            raise ContractError(f"动作超出 [-1, 1]: {self.a}")
        if self.r > 0:
            raise ContractError(f"学习奖励必须 ≤ 0，实际 {self.r}")


@dataclass
class TransitionBatch:
    o: np.ndarray        # [B, 3, H, W] uint8
    a: np.ndarray        # [B, 2]
    o_next: np.ndarray   # [B, 3, H, W] uint8
    r: np.ndarray        # [B]

    def __len__(self) -> int:
        return len(self.r)

    @classmethod
    def from_transitions(cls, transitions: List[Transition]) -> 'TransitionBatch':
        return cls(np.stack([t.o for t in transitions]), np.stack([t.a for t in transitions]),
                   np.stack([t.o_next for t in transitions]),
                   np.asarray([t.r for t in transitions], dtype=np.float32))


class ReplayBuffer:
    """
    有界 FIFO 回放池

    预分配环形数组，满后覆盖最旧的转移；均匀采样。
    """

    def __init__(self, capacity: int, frame_shape: Tuple[int, int, int], action_dim: int = 2):
        if capacity < 1:
            raise ContractError(f"回放池容量必须 ≥ 1，实际 {capacity}")
        self.capacity = capacity
        self.o = np.zeros((capacity, *frame_shape), dtype=np.uint8)
        self.o_next = np.zeros((capacity, *frame_shape), dtype=np.uint8)
        self.a = np.zeros((capacity, action_dim), dtype=np.float32)
        self.r = np.zeros(capacity, dtype=np.float32)
        self._next = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def add(self, transition: Transition) -> None:
        i = self._next
        self.o[i] = transition.o
        self.a[i] = transition.a
        self.o_next[i] = transition.o_next
        self.r[i] = transition.r
        self._next = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def oldest(self) -> int:
        """最旧转移所在的槽位"""
        return self._next if self._size == self.capacity else 0

    def sample(self, batch_size: int, rng: np.random.Generator) -> TransitionBatch:
        if self._size < batch_size:
            raise ContractError(f"回放池只有 {self._size} 条转移，不足一个批次 {batch_size}")
        idx = rng.integers(self._size, size=batch_size)
        return TransitionBatch(self.o[idx], self.a[idx], self.o_next[idx], self.r[idx])


# ==================== 学习奖励 ====================

def learned_reward(bundle: EncoderBundle, agent_carry: SequenceCarry, agent_frame: np.ndarray,
                   expert_carry: SequenceCarry, expert_frame: np.ndarray
                   ) -> Tuple[float, SequenceCarry, SequenceCarry]:
    """
    r = -‖z_agent - z_expert‖₂

    两帧在同一批次内编码，再分别推进两个 carry。carry 为 None 表示
    序列的第一帧 (o_0)。调用方负责把编码函数置于评估模式。

    Returns:
        (r, 新的智能体 carry, 新的专家 carry)
    """
    steps_a = 0 if agent_carry is None else agent_carry.steps
    steps_e = 0 if expert_carry is None else expert_carry.steps
    if steps_a != steps_e:
        raise ContractError(f"智能体与专家序列不同步: {steps_a} / {steps_e}")
    with no_grad():
        _, _, s = bundle.encode_rgb(np.stack([agent_frame, expert_frame]))
        z_a, agent_carry = bundle.encode_sequence([s[0:1]], agent_carry)
        z_e, expert_carry = bundle.encode_sequence([s[1:2]], expert_carry)
    distance = float(np.linalg.norm(z_a.data.astype(np.float64) - z_e.data.astype(np.float64)))
    return -distance, agent_carry, expert_carry


def full_prefix_reward(bundle: EncoderBundle, agent_frames: np.ndarray, expert_frames: np.ndarray) -> float:
    """非增量参考实现: 对两个前缀从头编码后取负距离"""
    if len(agent_frames) != len(expert_frames):
        raise ContractError(f"前缀长度不一致: {len(agent_frames)} / {len(expert_frames)}")
    z = bundle.embed_trajectories(np.stack([agent_frames, expert_frames]))
    return -float(np.linalg.norm(z[0].astype(np.float64) - z[1].astype(np.float64)))


class RewardTracker:
    """
    单回合的学习奖励

    reset 时以 o_0 与 o_{e,0} 初始化两个 carry；之后每步 step(o_{t+1})
    返回 r_{t+1}。编码函数在整个回合内保持评估模式。
    """

    def __init__(self, bundle: EncoderBundle):
        self.bundle = bundle
        self.expert_frames: Optional[np.ndarray] = None
        self.agent_carry: Optional[SequenceCarry] = None
        self.expert_carry: Optional[SequenceCarry] = None

    @property
    def t(self) -> int:
        return 0 if self.agent_carry is None else self.agent_carry.steps - 1

    def reset(self, first_frame: np.ndarray, expert_frames: np.ndarray) -> float:
        self.expert_frames = np.asarray(expert_frames)
        self.bundle.eval()
        r, self.agent_carry, self.expert_carry = learned_reward(
            self.bundle, None, first_frame, None, self.expert_frames[0])
        return r

    def step(self, frame: np.ndarray) -> float:
        if self.expert_frames is None:
            raise ContractError("请先调用 reset")
        t = self.t + 1
        if t >= len(self.expert_frames):
            raise ContractError(f"参考专家轨迹只有 {len(self.expert_frames)} 帧，无法计算第 {t} 步奖励")
        r, self.agent_carry, self.expert_carry = learned_reward(
            self.bundle, self.agent_carry, frame, self.expert_carry, self.expert_frames[t])
        return r


# ==================== actor-critic ====================

@dataclass
class AgentOptimizers:
    """学习率为 0 的部分不建优化器 (参数保持不变)"""
    critic: Optional[Adam]
    actor: Optional[Adam]

    @classmethod
    def build(cls, agent: AgentNets, config: InteractConfig) -> 'AgentOptimizers':
        groups = agent.online_parameters()
        critic = Adam(groups['encoder'] + groups['critic'], lr=config.critic_lr) if config.critic_lr > 0 else None
        actor = Adam(groups['actor'], lr=config.actor_lr) if config.actor_lr > 0 else None
        return cls(critic, actor)


def critic_target(agent: AgentNets, batch: TransitionBatch, discount: float) -> np.ndarray:
    """y = r + γ · Q_target(o', π(o'))"""
    with no_grad():
        action = agent.actor(agent.features(batch.o_next))
        q_next = agent.target.head(agent.features(batch.o_next, target=True), action)
    return batch.r.reshape(-1, 1) + discount * q_next.data


def critic_loss(agent: AgentNets, batch: TransitionBatch, target: np.ndarray) -> Tensor:
    q = agent.critic(agent.features(batch.o), Tensor(batch.a))
    return T.mean(T.square(q - Tensor(target)))


def actor_critic_update(agent: AgentNets, batch: TransitionBatch, config: InteractConfig,
                        optimizers: Optional[AgentOptimizers] = None) -> Dict[str, float]:
    """
    一次 actor-critic 更新

    价值网络 (连同像素编码器 E) 回归 r + γ·Q_target(o', π(o'))；
    策略头在截断梯度的特征上最大化 Q(o, π(o))；最后目标网络做 Polyak 平滑。
    """
    optimizers = optimizers or AgentOptimizers.build(agent, config)
    target = critic_target(agent, batch, config.discount)

    with Tape() as tape:
        loss_q = critic_loss(agent, batch, target)
        if optimizers.critic is not None:
            optimizers.critic.zero_grad()
            tape.backward(loss_q)
    if optimizers.critic is not None:
        optimizers.critic.step()

    with no_grad():
        feature = agent.features(batch.o).detach()
    with Tape() as tape:
        loss_pi = -T.mean(agent.critic(feature, agent.actor(feature)))
        if optimizers.actor is not None:
            optimizers.actor.zero_grad()
            tape.backward(loss_pi)
    if optimizers.actor is not None:
        optimizers.actor.step()
    agent.critic.zero_grad()

    agent.soft_update(config.polyak)
    return {'critic_loss': loss_q.item(), 'actor_loss': loss_pi.item()}


# ==================== 评估 ====================

def evaluate_policy(policy: FramePolicy, env_config: EnvConfig, episodes: int, seed: int) -> np.ndarray:
    """
    无噪声评估，返回每回合真实回报

    第 i 个回合以 seed + i 重置环境，保证不同策略在相同初始状态上比较。
    """
    if episodes < 1:
        raise ContractError(f"评估回合数必须 ≥ 1，实际 {episodes}")
    returns = []
    env = PointEnv(env_config)
    for i in range(episodes):
        obs = env.reset(seed + i)
        total = 0.0
        while not env.done:
            obs, reward = env.step(policy(env, obs))
            total += reward
        returns.append(total)
    return np.asarray(returns, dtype=np.float64)


def expert_policy(env: PointEnv, _obs: np.ndarray) -> np.ndarray:
    return env.expert_action()


def random_policy(env: PointEnv, _obs: np.ndarray) -> np.ndarray:
    return random_action(env.rng)


def agent_policy(agent: AgentNets) -> FramePolicy:
    return lambda _env, obs: agent.act(obs[None])[0]


@dataclass
class EvaluationReport:
    """三种策略的绝对回报 (均值 ± 标准差) 与缩放回报"""
    episodes: int
    seed: int
    returns: Dict[str, np.ndarray]

    def _baseline(self) -> Tuple[float, float]:
        r_expert = float(np.mean(self.returns['expert']))
        r_random = float(np.mean(self.returns['random']))
        if r_expert == r_random:
            raise EvaluationError(f"专家与随机策略平均回报相同 ({r_expert})，无法缩放")
        return r_expert, r_random

    def scaled(self, policy: str = 'agent') -> float:
        r_expert, r_random = self._baseline()
        return (float(np.mean(self.returns[policy])) - r_random) / (r_expert - r_random)

    @property
    def scaled_return(self) -> float:
        return self.scaled('agent')

    @property
    def mean_return(self) -> float:
        return float(np.mean(self.returns['agent']))

    def to_frame(self) -> pd.DataFrame:
        r_expert, r_random = self._baseline()
        rows = []
        for policy, values in self.returns.items():
            scaled = (values - r_random) / (r_expert - r_random)
            rows.append({'policy': policy, 'episodes': len(values),
                         'mean_return': float(np.mean(values)), 'std_return': float(np.std(values)),
                         'scaled_mean': float(np.mean(scaled)), 'scaled_std': float(np.std(scaled))})
        return pd.DataFrame(rows)


def evaluate_agent(policy: Union[AgentNets, FramePolicy], env_config: EnvConfig,
                   episodes: int, seed: int) -> EvaluationReport:
    """
    缩放回报 (R_agent - R_random) / (R_expert - R_random)

    三种策略在相同的 seed 序列上评估；policy 可以是 AgentNets 或
    任意 policy(env, obs) 可调用对象 (例如 expert_policy)。

    Raises:
        EvaluationError: R_expert = R_random
    """
    act = agent_policy(policy) if isinstance(policy, AgentNets) else policy
    report = EvaluationReport(episodes, seed, {
        'agent': evaluate_policy(act, env_config, episodes, seed),
        'expert': evaluate_policy(expert_policy, env_config, episodes, seed),
        'random': evaluate_policy(random_policy, env_config, episodes, seed),
    })
    report._baseline()
    return report


def reward_trace(bundle: EncoderBundle, policy: Union[AgentNets, FramePolicy], expert_frames: np.ndarray,
                 env_config: EnvConfig, seed: int) -> pd.DataFrame:
    """单回合逐步学习奖励与真实奖励"""
    act = agent_policy(policy) if isinstance(policy, AgentNets) else policy
    env = PointEnv(env_config)
    obs = env.reset(seed)
    tracker = RewardTracker(bundle)
    tracker.reset(obs, expert_frames)
    rows = []
    while not env.done:
        obs, true_r = env.step(act(env, obs))
        r = tracker.step(obs)
        rows.append({'step': tracker.t, 'learned_reward': r, 'true_reward': true_r})
    return pd.DataFrame(rows, columns=['step', 'learned_reward', 'true_reward'])


# ==================== 交互训练 ====================

@dataclass
class InteractiveResult:
    agent: AgentNets
    bundle: EncoderBundle
    history: pd.DataFrame
    evaluations: List[dict] = field(default_factory=list)


class InteractiveTrainer:
    """
    交互阶段训练器

    每个回合: 采样一条参考专家轨迹，带探索噪声地运行智能体，逐步计算
    学习奖励并存入回放池，每步做一次 actor-critic 更新。回合结束时若
    步数跨过 n_update 的整数倍且不超过 n_train，则把本回合轨迹加入 D_a
    并更新编码函数；之后编码函数冻结。
    """

    def __init__(self, config: RunConfig, bundle: EncoderBundle, agent: Optional[AgentNets] = None):
        self.config = config
        self.bundle = bundle
        self.agent = agent or AgentNets(config)
        self.rng = np.random.default_rng([config.seed, 4])
        self.env = PointEnv(config.env)
        frame_shape = (3, config.env.frame_size, config.env.frame_size)
        self.replay = ReplayBuffer(config.interact.replay_capacity, frame_shape)
        self.agent_pool: Deque[np.ndarray] = deque(maxlen=config.interact.agent_pool_capacity)
        self.optimizers = AgentOptimizers.build(self.agent, config.interact)
        self.encoder_optimizer = Adam(bundle.parameters(), lr=config.interact.encoder_lr)
        self.tracker = RewardTracker(bundle)
        self.step = 0
        self.next_encoder_update = config.interact.n_update
        self.checkpoint_dir: Optional[Path] = None
        self.evaluations: List[dict] = []

    def _check(self, expert: TrajectoryDataset) -> None:
        env = self.config.env
        if len(expert) == 0:
            raise ContractError("专家数据集为空")
        if expert.frame_size != env.frame_size:
            raise ContractError(f"专家数据帧尺寸 {expert.frame_size} 与环境 {env.frame_size} 不一致")
        if expert.episode_length < env.episode_length:
            raise ContractError(f"专家轨迹长度 {expert.episode_length} 短于回合长度 {env.episode_length}")

    def _act(self, obs: np.ndarray) -> np.ndarray:
        cfg = self.config.interact
        if self.step < cfg.warmup_steps:
            return self.rng.uniform(-1.0, 1.0, size=2)
        action = self.agent.act(obs[None])[0]
        action = action + self.rng.normal(0.0, cfg.exploration_noise, size=2)
        return np.clip(action, -1.0, 1.0)

    def _update_encoders(self, expert: TrajectoryDataset) -> Dict[str, float]:
        cfg = self.config.interact
        n = cfg.encoder_batch_pairs
        expert_idx = np.sort(self.rng.choice(len(expert), size=n, replace=len(expert) < n))
        pool_idx = self.rng.choice(len(self.agent_pool), size=n, replace=len(self.agent_pool) < n)
        expert_batch = np.asarray(expert.frames[expert_idx])[:, :self.config.env.episode_length + 1]
        agent_batch = np.stack([self.agent_pool[i] for i in pool_idx])

        self.bundle.train()
        self.encoder_optimizer.zero_grad()
        with Tape() as tape:
            report = total_loss(self.bundle, expert_batch, agent_batch, self.config.loss, self.rng)
            tape.backward(report.graph)
        self.encoder_optimizer.step()
        self.bundle.eval()
        return report.as_dict(with_seq=True)

    def _episode(self, expert: TrajectoryDataset, episode: int) -> dict:
        cfg = self.config.interact
        reference = np.asarray(expert.frames[int(self.rng.integers(len(expert)))])
        obs = self.env.reset(episode_seed(self.config.seed, self.config.env.env_id, 'agent', episode))
        self.tracker.reset(obs, reference)
        frames = [obs]
        learned_return = true_return = 0.0
        losses: Dict[str, float] = {}

        while not self.env.done and self.step < cfg.n_pi:
            action = self._act(obs)
            next_obs, true_r = self.env.step(action)
            r = self.tracker.step(next_obs)
            self.replay.add(Transition(obs, action, next_obs, r))
            self.step += 1
            if self.step > cfg.warmup_steps and len(self.replay) >= cfg.rl_batch_size:
                losses = actor_critic_update(self.agent, self.replay.sample(cfg.rl_batch_size, self.rng),
                                             cfg, self.optimizers)
            frames.append(next_obs)
            learned_return += r
            true_return += true_r
            obs = next_obs
            self._periodic()

        return {'episode': episode, 'step': self.step, 'learned_return': learned_return,
                'true_return': true_return, 'complete': self.env.done, 'frames': np.stack(frames),
                **losses}

    def _periodic(self) -> None:
        cfg = self.config.interact
        if cfg.eval_interval and self.step % cfg.eval_interval == 0:
            self.evaluate()
        if cfg.checkpoint_interval and self.checkpoint_dir and self.step % cfg.checkpoint_interval == 0:
            self.agent.save(self.checkpoint_dir / f"agent_step{self.step}.tvck", {'step': self.step})
            self.bundle.save(self.checkpoint_dir / f"encoder_step{self.step}.tvck", {'step': self.step})

    def evaluate(self) -> dict:
        ev = self.config.eval
        report = evaluate_agent(self.agent, self.config.env, ev.episodes, ev.seed)
        record = {'step': self.step, 'mean_return': report.mean_return, 'scaled_return': report.scaled_return}
        self.evaluations.append(record)
        logger.info(f"step {self.step}: 评估回报 {report.mean_return:.2f}，缩放回报 {report.scaled_return:.3f}")
        return record

    def _baselines(self) -> Optional[Tuple[float, float]]:
        ev = self.config.eval
        r_expert = float(np.mean(evaluate_policy(expert_policy, self.config.env, ev.episodes, ev.seed)))
        r_random = float(np.mean(evaluate_policy(random_policy, self.config.env, ev.episodes, ev.seed)))
        if r_expert == r_random:
            logger.warning("专家与随机策略回报相同，scaled_return 列留空")
            return None
        return r_expert, r_random

    def run(self, expert: TrajectoryDataset, metrics_path: Optional[Union[str, Path]] = None,
            checkpoint_dir: Optional[Union[str, Path]] = None, progress: bool = False,
            header: Optional[dict] = None) -> InteractiveResult:
        self._check(expert)
        cfg = self.config.interact
        self.checkpoint_dir = Path(checkpoint_dir) if checkpoint_dir else None
        baselines = self._baselines() if cfg.n_pi > 0 else None
        writer = MetricsWriter(metrics_path,
                               columns=['episode', 'step', 'learned_return', 'true_return', 'scaled_return'],
                               header={'phase': 'interact', 'seed': self.config.seed,
                                       'profile': self.config.profile, **(header or {})})
        self.bundle.eval()
        bar = tqdm(total=cfg.n_pi, desc='interact', disable=not progress)
        episode = 0
        while self.step < cfg.n_pi:
            before = self.step
            row = self._episode(expert, episode)
            bar.update(self.step - before)
            frames = row.pop('frames')
            complete = row.pop('complete')
            if baselines is not None:
                r_expert, r_random = baselines
                row['scaled_return'] = (row['true_return'] - r_random) / (r_expert - r_random)
            if complete and self.step <= cfg.n_train and self.step >= self.next_encoder_update:
                self.agent_pool.append(frames)
                while self.next_encoder_update <= self.step:
                    self.next_encoder_update += cfg.n_update
                row.update(self._update_encoders(expert))
            writer.append(row)
            episode += 1
        bar.close()
        writer.flush()
        return InteractiveResult(self.agent, self.bundle, writer.to_frame(), self.evaluations)


def run_interactive(bundle: EncoderBundle, expert: TrajectoryDataset, config: RunConfig,
                    agent: Optional[AgentNets] = None, metrics_path: Optional[Union[str, Path]] = None,
                    checkpoint_dir: Optional[Union[str, Path]] = None, progress: bool = False,
                    header: Optional[dict] = None) -> InteractiveResult:
    """
    交互阶段

    Args:
        bundle: 对齐后的编码函数 (会被原地微调)
        expert: 专家数据集 D_e
        config: 运行配置
        agent: 初始智能体，None 时按 config.seed 初始化
        metrics_path: 逐回合指标 CSV
        checkpoint_dir: 周期检查点目录
        header: 写入指标 CSV 头部的附加参数 (例如 no_alignment)

    Returns:
        InteractiveResult
    """
    trainer = InteractiveTrainer(config, bundle, agent)
    return trainer.run(expert, metrics_path, checkpoint_dir, progress, header)
