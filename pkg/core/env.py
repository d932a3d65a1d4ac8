#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
二维视觉控制环境
自带确定性渲染器与解析专家控制器的 PointReach / PointPush

支持的功能:
- reset / step: 质点动力学 v ← 0.8v + 0.1a，位置截断在单位正方形内
- render: 无抗锯齿的圆盘光栅化 (背景、目标、物体、智能体)
- expert_action: PD 控制器；random_action: 均匀随机动作
- rollout / generate_dataset: 按种子生成轨迹，可直接流式写入数据集文件
- 数据集文件读写 (格式见 save_dataset)

作者: TrajVision
版本: 1.0.0
"""

import logging
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np
from tqdm import tqdm

from core.config import EnvConfig
from core.errors import ContractError, DatasetIOError, ParameterError
from core.vision import Frame

logger = logging.getLogger(__name__)

ENV_IDS = ('point_reach', 'point_push')
POLICIES = ('expert', 'random', 'agent')

# 渲染参数 (单位正方形坐标)
BACKGROUND = (24, 24, 32)
GOAL_COLOR = (40, 200, 90)
AGENT_COLOR = (230, 60, 50)
OBJECT_COLOR = (60, 110, 235)
GOAL_DRAW_RADIUS = 0.08
AGENT_DRAW_RADIUS = 0.07
OBJECT_DRAW_RADIUS = 0.07

SPAWN_MARGIN = 0.1
CONTACT_DISTANCE = AGENT_DRAW_RADIUS + OBJECT_DRAW_RADIUS
VELOCITY_DECAY = 0.8
ACTION_GAIN = 0.1
MAX_SPAWN_TRIES = 10_000

PathLike = Union[str, Path]
Policy = Callable[['EnvState', np.ndarray], np.ndarray]


# ==================== 状态与轨迹 ====================

@dataclass
class EnvState:
    """
    环境状态

    位置均在 [0,1]² 内；object 仅 point_push 使用；
    clamped_actions 统计被截断的越界动作次数 (诊断用)。
    """
    env_id: str
    position: np.ndarray
    velocity: np.ndarray
    goal: np.ndarray
    episode_length: int
    object: Optional[np.ndarray] = None
    step_index: int = 0
    clamped_actions: int = 0

    @property
    def done(self) -> bool:
        return self.step_index >= self.episode_length


@dataclass
class Trajectory:
    """
    一条轨迹

    frames: [T+1, 3, H, W] uint8；actions: [T, 2] 或 None；
    true_return 为隐藏的任务奖励和，只用于评估。
    """
    frames: np.ndarray
    actions: Optional[np.ndarray] = None
    true_return: float = 0.0
    label: str = 'expert'

    def __post_init__(self):
        if self.actions is not None and len(self.actions) + 1 != len(self.frames):
            raise ContractError(f"帧数 {len(self.frames)} 应为动作数 {len(self.actions)} + 1")
        if not np.isfinite(self.true_return):
            raise ContractError("true_return 必须有限")
        if self.label not in POLICIES:
            raise ParameterError(f"未知的轨迹标签: {self.label}")

    @property
    def length(self) -> int:
        """步数 T"""
        return len(self.frames) - 1

    def frame(self, t: int) -> Frame:
        return Frame.from_array(self.frames[t])


@dataclass
class TrajectoryDataset:
    """同一策略、同一环境下的 N 条轨迹"""
    env_id: str
    policy: str
    seed: int
    frames: np.ndarray                      # [N, T+1, 3, H, W] uint8
    actions: Optional[np.ndarray] = None    # [N, T, 2] float32
    returns: Optional[np.ndarray] = None    # [N] float32
    path: Optional[Path] = field(default=None, compare=False)

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def episode_length(self) -> int:
        return self.frames.shape[1] - 1

    @property
    def frame_size(self) -> int:
        return self.frames.shape[-1]

    def trajectory(self, i: int) -> Trajectory:
        return Trajectory(
            frames=np.asarray(self.frames[i]),
            actions=None if self.actions is None else np.asarray(self.actions[i]),
            true_return=0.0 if self.returns is None else float(self.returns[i]),
            label=self.policy,
        )

    def subset(self, indices) -> 'TrajectoryDataset':
        indices = np.asarray(indices, dtype=np.int64)
        return TrajectoryDataset(
            env_id=self.env_id, policy=self.policy, seed=self.seed,
            frames=np.asarray(self.frames[indices]),
            actions=None if self.actions is None else np.asarray(self.actions[indices]),
            returns=None if self.returns is None else np.asarray(self.returns[indices]),
        )

    def summary(self) -> Dict[str, object]:
        summary = {'env_id': self.env_id, 'policy': self.policy, 'seed': self.seed,
                   'trajectories': len(self), 'episode_length': self.episode_length,
                   'frame_size': self.frame_size}
        if self.returns is not None and len(self.returns):
            summary['mean_return'] = float(np.mean(self.returns))
            summary['std_return'] = float(np.std(self.returns))
        return summary


# ==================== 动力学 ====================

def _check_env(env_id: str) -> None:
    if env_id not in ENV_IDS:
        raise ParameterError(f"未知的环境: {env_id}，可选 {ENV_IDS}")


def _sample_point(rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(SPAWN_MARGIN, 1.0 - SPAWN_MARGIN, size=2)


def reset(env_id: str, seed: int, config: Optional[EnvConfig] = None) -> EnvState:
    """
    按种子采样初始状态

    point_reach: 智能体起点与目标距离 ≥ min_separation；
    point_push: 物体与目标距离 ≥ min_separation，智能体不与物体接触。
    """
    _check_env(env_id)
    config = config or EnvConfig(env_id=env_id)
    rng = np.random.default_rng(seed)
    for _ in range(MAX_SPAWN_TRIES):
        goal = _sample_point(rng)
        position = _sample_point(rng)
        if env_id == 'point_reach':
            if np.linalg.norm(position - goal) >= config.min_separation:
                return EnvState(env_id, position, np.zeros(2), goal, config.episode_length)
            continue
        obj = _sample_point(rng)
        if (np.linalg.norm(obj - goal) >= config.min_separation
                and np.linalg.norm(position - obj) >= 2 * CONTACT_DISTANCE):
            return EnvState(env_id, position, np.zeros(2), goal, config.episode_length, object=obj)
    raise ParameterError(f"最小间隔 {config.min_separation} 下无法采样初始状态")


def _push(obj: np.ndarray, agent: np.ndarray) -> np.ndarray:
    """智能体进入接触距离时把物体沿连线推开"""
    offset = obj - agent
    dist = np.linalg.norm(offset)
    if dist >= CONTACT_DISTANCE:
        return obj
    direction = offset / dist if dist > 0 else np.array([1.0, 0.0])
    return np.clip(agent + direction * CONTACT_DISTANCE, 0.0, 1.0)


def step(state: EnvState, action, config: Optional[EnvConfig] = None) -> Tuple[EnvState, float]:
    """
    推进一步

    越界动作被截断到 [-1,1]² 并计入 clamped_actions。

    Returns:
        (新状态, 真实奖励 0/1)
    """
    if state.done:
        raise ContractError(f"回合已结束 (step {state.step_index} / {state.episode_length})")
    config = config or EnvConfig(env_id=state.env_id)
    action = np.asarray(action, dtype=np.float64).reshape(2)
    clipped = np.clip(action, -1.0, 1.0)
    flagged = int(not np.array_equal(clipped, action))
    if flagged:
        logger.debug(f"动作越界已截断: {action}")

    velocity = VELOCITY_DECAY * state.velocity + ACTION_GAIN * clipped
    position = np.clip(state.position + velocity, 0.0, 1.0)
    obj = None if state.object is None else _push(state.object, position)
    nxt = EnvState(state.env_id, position, velocity, state.goal.copy(), state.episode_length,
                   object=obj, step_index=state.step_index + 1,
                   clamped_actions=state.clamped_actions + flagged)
    tracked = position if obj is None else obj
    reward = 1.0 if np.linalg.norm(tracked - state.goal) < config.goal_radius else 0.0
    return nxt, reward


# ==================== 渲染 ====================

def _pixel_centers(size: int) -> Tuple[np.ndarray, np.ndarray]:
    coords = (np.arange(size) + 0.5) / size
    ys, xs = np.meshgrid(coords, coords, indexing='ij')
    return xs, ys


def render(state: EnvState, frame_size: int = 32) -> Frame:
    """
    确定性光栅化

    像素中心落在圆盘内即着色；绘制顺序: 背景、目标、物体、智能体。
    第 0 行对应 y 接近 0。
    """
    xs, ys = _pixel_centers(frame_size)
    image = np.empty((3, frame_size, frame_size), dtype=np.uint8)
    image[:] = np.asarray(BACKGROUND, dtype=np.uint8).reshape(3, 1, 1)
    discs = [(state.goal, GOAL_DRAW_RADIUS, GOAL_COLOR)]
    if state.object is not None:
        discs.append((state.object, OBJECT_DRAW_RADIUS, OBJECT_COLOR))
    discs.append((state.position, AGENT_DRAW_RADIUS, AGENT_COLOR))
    for center, radius, color in discs:
        mask = (xs - center[0]) ** 2 + (ys - center[1]) ** 2 <= radius ** 2
        for c in range(3):
            image[c][mask] = color[c]
    return Frame(frame_size, frame_size, image)


# ==================== 策略 ====================

def expert_action(state: EnvState, kp: float = 4.0, kd: float = 2.0) -> np.ndarray:
    """
    PD 控制器 a = clamp(kp·(target - p) - kd·v)

    point_reach 的 target 为目标；point_push 先绕到物体背后
    (相对目标方向)，对准后把物体推向目标。
    """
    target = state.goal
    if state.object is not None:
        to_goal = state.goal - state.object
        dist = np.linalg.norm(to_goal)
        u = to_goal / dist if dist > 1e-8 else np.array([1.0, 0.0])
        behind = state.object - u * CONTACT_DISTANCE * 1.3
        rel = state.position - state.object
        along = float(rel @ u)
        lateral = np.linalg.norm(rel - along * u)
        aligned = along < 0 and lateral < 0.5 * CONTACT_DISTANCE
        target = state.goal - u * CONTACT_DISTANCE if aligned else behind
    action = kp * (target - state.position) - kd * state.velocity
    return np.clip(action, -1.0, 1.0)


def random_action(rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(-1.0, 1.0, size=2)


def make_policy(name: str, config: EnvConfig, rng: np.random.Generator) -> Policy:
    """expert / random 策略，签名为 policy(state, rgb) -> action"""
    if name == 'expert':
        return lambda state, _rgb: expert_action(state, config.expert_kp, config.expert_kd)
    if name == 'random':
        return lambda _state, _rgb: random_action(rng)
    raise ParameterError(f"未知的策略: {name}")


def episode_seed(seed: int, env_id: str, policy: str, index: int) -> int:
    """(seed, env_id, policy, index) → 单回合种子"""
    sequence = np.random.SeedSequence([seed, ENV_IDS.index(env_id), POLICIES.index(policy), index])
    return int(sequence.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def rollout(config: EnvConfig, policy: Policy, seed: int, label: str = 'expert') -> Trajectory:
    """按种子跑一个完整回合并渲染 T+1 帧"""
    state = reset(config.env_id, seed, config)
    frames = [render(state, config.frame_size).rgb]
    actions, total = [], 0.0
    for _ in range(config.episode_length):
        action = np.clip(np.asarray(policy(state, frames[-1]), dtype=np.float64), -1.0, 1.0)
        state, reward = step(state, action, config)
        frames.append(render(state, config.frame_size).rgb)
        actions.append(action)
        total += reward
    return Trajectory(frames=np.stack(frames), actions=np.asarray(actions, dtype=np.float32),
                      true_return=total, label=label)


# ==================== 数据集文件 ====================
#
# 布局 (整数均为小端序):
#   magic        4 字节  b'TVDS'
#   version      u32     当前为 1
#   env_len      u32, env_id (utf-8)
#   N, T, H, W   u32 × 4  (每条轨迹 T+1 帧)
#   seed         i64
#   policy_len   u32, policy 标签 (utf-8)
#   flags        u32     bit0: 含动作块，bit1: 含回报块
#   帧数据       N·(T+1) 帧，每帧 3·H·W 字节，通道优先
#   动作块       N·T·2 个小端 float32 (可选)
#   回报块       N 个小端 float32 (可选)

DATASET_MAGIC = b'TVDS'
DATASET_VERSION = 1
FLAG_ACTIONS = 1
FLAG_RETURNS = 2


def _header(env_id: str, policy: str, n: int, length: int, size: int, seed: int, flags: int) -> bytes:
    env_raw, pol_raw = env_id.encode('utf-8'), policy.encode('utf-8')
    return b''.join([
        DATASET_MAGIC,
        struct.pack('<II', DATASET_VERSION, len(env_raw)), env_raw,
        struct.pack('<IIIIq', n, length, size, size, seed),
        struct.pack('<I', len(pol_raw)), pol_raw,
        struct.pack('<I', flags),
    ])


class DatasetWriter:
    """
    流式数据集写入器 (单写者)

    先写临时文件，close 时补写动作与回报块并原子替换目标文件。
    """

    def __init__(self, path: PathLike, env_id: str, policy: str, count: int,
                 episode_length: int, frame_size: int, seed: int):
        self.path = Path(path)
        self.tmp = self.path.with_suffix(self.path.suffix + '.tmp')
        self.count = count
        self.frame_shape = (episode_length + 1, 3, frame_size, frame_size)
        self.actions: List[np.ndarray] = []
        self.returns: List[float] = []
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(self.tmp, 'wb')
            self._fh.write(_header(env_id, policy, count, episode_length, frame_size, seed,
                                   FLAG_ACTIONS | FLAG_RETURNS))
        except OSError as e:
            raise DatasetIOError(self.path, f"创建数据集失败: {e}") from e

    def __enter__(self) -> 'DatasetWriter':
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        if exc_type is None:
            self.close()
        else:
            self._fh.close()
            self.tmp.unlink(missing_ok=True)

    def write(self, trajectory: Trajectory) -> None:
        if trajectory.frames.shape != self.frame_shape:
            raise ContractError(f"轨迹形状 {trajectory.frames.shape} 与数据集 {self.frame_shape} 不一致")
        try:
            self._fh.write(np.ascontiguousarray(trajectory.frames, dtype=np.uint8).tobytes())
        except OSError as e:
            raise DatasetIOError(self.path, f"写入轨迹失败: {e}") from e
        self.actions.append(trajectory.actions)
        self.returns.append(trajectory.true_return)

    def close(self) -> Path:
        if len(self.returns) != self.count:
            raise ContractError(f"已写入 {len(self.returns)} 条轨迹，应为 {self.count}")
        try:
            self._fh.write(np.ascontiguousarray(np.stack(self.actions), dtype='<f4').tobytes())
            self._fh.write(np.asarray(self.returns, dtype='<f4').tobytes())
            self._fh.close()
            os.replace(self.tmp, self.path)
        except OSError as e:
            raise DatasetIOError(self.path, f"写入数据集失败: {e}") from e
        return self.path


def save_dataset(dataset: TrajectoryDataset, path: PathLike) -> Path:
    """把内存中的数据集写成文件"""
    path = Path(path)
    n, frames_per = dataset.frames.shape[:2]
    flags = (FLAG_ACTIONS if dataset.actions is not None else 0) | \
        (FLAG_RETURNS if dataset.returns is not None else 0)
    tmp = path.with_suffix(path.suffix + '.tmp')
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(tmp, 'wb') as f:
            f.write(_header(dataset.env_id, dataset.policy, n, frames_per - 1,
                            dataset.frame_size, dataset.seed, flags))
            f.write(np.ascontiguousarray(dataset.frames, dtype=np.uint8).tobytes())
            if dataset.actions is not None:
                f.write(np.ascontiguousarray(dataset.actions, dtype='<f4').tobytes())
            if dataset.returns is not None:
                f.write(np.ascontiguousarray(dataset.returns, dtype='<f4').tobytes())
        os.replace(tmp, path)
    except OSError as e:
        raise DatasetIOError(path, f"写入数据集失败: {e}") from e
    return path


def load_dataset(path: PathLike, mmap: bool = True) -> TrajectoryDataset:
    """
    读取数据集文件

    Args:
        path: 数据集路径
        mmap: 帧数据以只读内存映射方式打开 (full 规模数据集不整体载入内存)
    """
    path = Path(path)
    try:
        with open(path, 'rb') as f:
            head = f.read(4096)
        file_size = path.stat().st_size
    except OSError as e:
        raise DatasetIOError(path, f"读取数据集失败: {e}") from e

    try:
        if head[:4] != DATASET_MAGIC:
            raise DatasetIOError(path, "不是 TrajVision 数据集文件")
        version, env_len = struct.unpack_from('<II', head, 4)
        if version != DATASET_VERSION:
            raise DatasetIOError(path, f"不支持的数据集版本 {version}")
        pos = 12
        env_id = head[pos:pos + env_len].decode('utf-8')
        pos += env_len
        n, length, height, width, seed = struct.unpack_from('<IIIIq', head, pos)
        pos += 24
        (pol_len,) = struct.unpack_from('<I', head, pos)
        pos += 4
        policy = head[pos:pos + pol_len].decode('utf-8')
        pos += pol_len
        (flags,) = struct.unpack_from('<I', head, pos)
        pos += 4
    except (struct.error, UnicodeDecodeError) as e:
        raise DatasetIOError(path, f"数据集头部损坏: {e}") from e

    shape = (n, length + 1, 3, height, width)
    frame_bytes = int(np.prod(shape))
    action_bytes = 4 * n * length * 2 if flags & FLAG_ACTIONS else 0
    return_bytes = 4 * n if flags & FLAG_RETURNS else 0
    if file_size != pos + frame_bytes + action_bytes + return_bytes:
        raise DatasetIOError(path, f"文件大小 {file_size} 与头部描述不一致")

    try:
        if mmap:
            frames = np.memmap(path, dtype=np.uint8, mode='r', offset=pos, shape=shape)
        else:
            frames = np.fromfile(path, dtype=np.uint8, count=frame_bytes, offset=pos).reshape(shape)
        tail_offset = pos + frame_bytes
        actions = returns = None
        if action_bytes:
            actions = np.fromfile(path, dtype='<f4', count=n * length * 2,
                                  offset=tail_offset).astype(np.float32).reshape(n, length, 2)
            tail_offset += action_bytes
        if return_bytes:
            returns = np.fromfile(path, dtype='<f4', count=n, offset=tail_offset).astype(np.float32)
    except (OSError, ValueError) as e:
        raise DatasetIOError(path, f"读取数据集失败: {e}") from e
    return TrajectoryDataset(env_id, policy, seed, frames, actions, returns, path=path)


# ==================== 数据集生成 ====================

def generate_dataset(env_id: str, policy: str, count: int, length: int, seed: int,
                     frame_size: int = 32, config: Optional[EnvConfig] = None,
                     path: Optional[PathLike] = None, progress: bool = False) -> TrajectoryDataset:
    """
    生成 N 条按种子确定的轨迹

    Args:
        env_id: point_reach | point_push
        policy: expert | random
        count: 轨迹数 N (≥ 1)
        length: 每条轨迹步数 T (≥ 2)
        seed: 数据集种子，(seed, env_id, policy) 决定全部字节
        config: 其余环境参数 (目标半径、PD 增益等)
        path: 给出时流式写入该文件并以内存映射方式返回

    Returns:
        TrajectoryDataset
    """
    _check_env(env_id)
    if policy not in ('expert', 'random'):
        raise ParameterError(f"数据集策略只能是 expert 或 random，实际 {policy}")
    if count < 1:
        raise ParameterError(f"轨迹数必须 ≥ 1，实际 {count}")
    if length < 2:
        raise ParameterError(f"轨迹长度必须 ≥ 2，实际 {length}")

    base = config.model_dump() if config is not None else {}
    base.update(env_id=env_id, episode_length=length, frame_size=frame_size)
    config = EnvConfig(**base)

    def trajectories():
        for i in tqdm(range(count), desc=f"{env_id}/{policy}", disable=not progress, leave=False):
            ep_seed = episode_seed(seed, env_id, policy, i)
            rng = np.random.default_rng([ep_seed, 1])
            yield rollout(config, make_policy(policy, config, rng), ep_seed, label=policy)

    if path is not None:
        with DatasetWriter(path, env_id, policy, count, length, frame_size, seed) as writer:
            for trajectory in trajectories():
                writer.write(trajectory)
        logger.info(f"数据集已写入 {path}: {count} 条 × {length + 1} 帧")
        return load_dataset(path)

    collected = list(trajectories())
    return TrajectoryDataset(env_id, policy, seed,
                             np.stack([t.frames for t in collected]),
                             np.stack([t.actions for t in collected]).astype(np.float32),
                             np.asarray([t.true_return for t in collected], dtype=np.float32))


class PointEnv:
    """
    有状态的环境包装，交互阶段与评估使用

    用法:
        env = PointEnv(config.env)
        frame = env.reset(seed)
        frame, reward = env.step(action)
    """

    def __init__(self, config: EnvConfig):
        self.config = config
        self.state: Optional[EnvState] = None
        self.rng = np.random.default_rng(0)

    def reset(self, seed: int) -> np.ndarray:
        """重置到按种子确定的初始状态；self.rng 随之重置，供随机策略使用"""
        self.state = reset(self.config.env_id, seed, self.config)
        self.rng = np.random.default_rng([seed, 1])
        return render(self.state, self.config.frame_size).rgb

    def step(self, action) -> Tuple[np.ndarray, float]:
        if self.state is None:
            raise ContractError("请先调用 reset")
        self.state, reward = step(self.state, action, self.config)
        return render(self.state, self.config.frame_size).rgb, reward

    @property
    def done(self) -> bool:
        return self.state is not None and self.state.done

    def expert_action(self) -> np.ndarray:
        return expert_action(self.state, self.config.expert_kp, self.config.expert_kd)
