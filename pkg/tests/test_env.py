#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
视觉控制环境与数据集文件单元测试
"""

import unittest
import tempfile
import struct
import numpy as np
import sys
import os

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from core.config import EnvConfig
from core.env import (AGENT_COLOR, DATASET_MAGIC, GOAL_COLOR, EnvState, PointEnv, Trajectory,
                      episode_seed, expert_action, generate_dataset, load_dataset, make_policy,
                      render, reset, rollout, save_dataset, step)
from core.errors import ContractError, DatasetIOError, ParameterError


def header_size(env_id: str, policy: str) -> int:
    """magic + version + env_len + env_id + N,T,H,W + seed + policy_len + policy + flags"""
    return 4 + 4 + 4 + len(env_id) + 16 + 8 + 4 + len(policy) + 4


class TestDynamics(unittest.TestCase):
    """reset / step 测试"""

    def _state(self, position, goal=(0.9, 0.9), length=40):
        return EnvState('point_reach', np.array(position, dtype=float), np.zeros(2),
                        np.array(goal, dtype=float), length)

    def test_reset_deterministic(self):
        """相同种子得到相同初始状态"""
        a, b = reset('point_reach', 42), reset('point_reach', 42)
        np.testing.assert_array_equal(a.position, b.position)
        np.testing.assert_array_equal(a.goal, b.goal)
        self.assertFalse(np.array_equal(reset('point_reach', 43).position, a.position))

    def test_reset_separation(self):
        """起点与目标距离不小于 0.3，速度为 0"""
        for seed in range(50):
            state = reset('point_reach', seed)
            self.assertGreaterEqual(np.linalg.norm(state.position - state.goal), 0.3)
            np.testing.assert_array_equal(state.velocity, 0.0)
            self.assertTrue(np.all((state.position >= 0) & (state.position <= 1)))

    def test_reset_push(self):
        """point_push 的物体与目标距离不小于 0.3"""
        for seed in range(20):
            state = reset('point_push', seed)
            self.assertIsNotNone(state.object)
            self.assertGreaterEqual(np.linalg.norm(state.object - state.goal), 0.3)

    def test_zero_action_at_rest(self):
        """静止时零动作不改变位置"""
        state = self._state((0.4, 0.6))
        nxt, _ = step(state, [0.0, 0.0])
        np.testing.assert_array_equal(nxt.position, state.position)
        self.assertEqual(nxt.step_index, 1)

    def test_constant_action_displacement(self):
        """恒定动作 20 步后的位移等于速度几何级数之和"""
        state = self._state((0.1, 0.5), goal=(0.5, 0.9))
        for _ in range(20):
            state, _ = step(state, [0.1, 0.0])
        expected = 0.1 + 0.05 * (20 - 4 * (1 - 0.8 ** 20))
        self.assertAlmostEqual(state.position[0], expected, delta=1e-9)
        self.assertAlmostEqual(state.position[1], 0.5, delta=1e-12)

    def test_reward_inside_goal(self):
        """进入目标半径奖励为 1，否则为 0"""
        _, inside = step(self._state((0.9, 0.9)), [0.0, 0.0])
        _, outside = step(self._state((0.2, 0.2)), [0.0, 0.0])
        self.assertEqual(inside, 1.0)
        self.assertEqual(outside, 0.0)

    def test_action_clamped(self):
        """越界动作截断到 [-1, 1] 并计数"""
        nxt, _ = step(self._state((0.5, 0.5)), [2.0, 0.0])
        np.testing.assert_allclose(nxt.velocity, [0.1, 0.0])
        self.assertEqual(nxt.clamped_actions, 1)

    def test_position_clipped(self):
        """位置截断在单位正方形内"""
        state = self._state((0.99, 0.5))
        for _ in range(5):
            state, _ = step(state, [1.0, 0.0])
        self.assertEqual(state.position[0], 1.0)

    def test_step_after_done(self):
        """回合结束后继续 step 抛出 ContractError"""
        state = self._state((0.5, 0.5), length=2)
        state, _ = step(state, [0.0, 0.0])
        state, _ = step(state, [0.0, 0.0])
        self.assertTrue(state.done)
        with self.assertRaises(ContractError):
            step(state, [0.0, 0.0])

    def test_unknown_env(self):
        """未知环境抛出 ParameterError"""
        with self.assertRaises(ParameterError):
            reset('cartpole', 0)


class TestRender(unittest.TestCase):
    """渲染测试"""

    def setUp(self):
        self.state = EnvState('point_reach', np.array([0.3, 0.3]), np.zeros(2), np.array([0.8, 0.7]), 40)

    def test_deterministic(self):
        """同一状态两次渲染逐位一致"""
        np.testing.assert_array_equal(render(self.state).rgb, render(self.state).rgb)

    def test_colors(self):
        """智能体与目标中心像素为各自颜色"""
        rgb = render(self.state, 32).rgb
        # 第 row 行对应 y，第 col 列对应 x
        np.testing.assert_array_equal(rgb[:, int(0.3 * 32), int(0.3 * 32)], AGENT_COLOR)
        np.testing.assert_array_equal(rgb[:, int(0.7 * 32), int(0.8 * 32)], GOAL_COLOR)

    def test_movement_visible(self):
        """智能体移动 0.1 至少改变 1% 的像素"""
        moved = EnvState('point_reach', np.array([0.4, 0.3]), np.zeros(2), self.state.goal, 40)
        a, b = render(self.state, 32).rgb, render(moved, 32).rgb
        changed = np.any(a != b, axis=0).mean()
        self.assertGreaterEqual(changed, 0.01)

    def test_frame_size(self):
        """帧尺寸由参数决定"""
        self.assertEqual(render(self.state, 64).rgb.shape, (3, 64, 64))


class TestPolicies(unittest.TestCase):
    """专家与随机策略测试"""

    def test_expert_reaches_goal(self):
        """point_reach 专家在 40 步内到达目标"""
        config = EnvConfig()
        for seed in range(5):
            trajectory = rollout(config, make_policy('expert', config, np.random.default_rng(0)), seed)
            self.assertGreater(trajectory.true_return, 0.0)

    def test_expert_beats_random(self):
        """专家平均回报高于随机策略"""
        config = EnvConfig()
        expert = [rollout(config, make_policy('expert', config, None), s).true_return for s in range(10)]
        rand = [rollout(config, make_policy('random', config, np.random.default_rng(s)), s).true_return
                for s in range(10)]
        self.assertGreater(np.mean(expert), np.mean(rand))

    def test_expert_action_bounded(self):
        """专家动作在 [-1, 1]² 内"""
        for seed in range(10):
            action = expert_action(reset('point_push', seed))
            self.assertTrue(np.all(np.abs(action) <= 1.0))

    def test_rollout_shapes(self):
        """T 步回合有 T+1 帧、T 个动作"""
        config = EnvConfig(episode_length=5, frame_size=16)
        trajectory = rollout(config, make_policy('expert', config, None), 0)
        self.assertEqual(trajectory.frames.shape, (6, 3, 16, 16))
        self.assertEqual(trajectory.actions.shape, (5, 2))
        self.assertEqual(trajectory.length, 5)

    def test_unknown_policy(self):
        with self.assertRaises(ParameterError):
            make_policy('agent', EnvConfig(), np.random.default_rng(0))

    def test_trajectory_contract(self):
        """帧数必须等于动作数 + 1"""
        with self.assertRaises(ContractError):
            Trajectory(frames=np.zeros((3, 3, 4, 4), dtype=np.uint8), actions=np.zeros((3, 2)))

    def test_episode_seeds_distinct(self):
        """不同下标 / 策略的回合种子不同"""
        seeds = {episode_seed(7, 'point_reach', p, i) for p in ('expert', 'random') for i in range(50)}
        self.assertEqual(len(seeds), 100)


class TestPointEnv(unittest.TestCase):
    """有状态环境包装测试"""

    def test_episode(self):
        """reset 后运行到 done"""
        env = PointEnv(EnvConfig(episode_length=3, frame_size=16))
        obs = env.reset(0)
        self.assertEqual(obs.shape, (3, 16, 16))
        for _ in range(3):
            obs, reward = env.step(env.expert_action())
        self.assertTrue(env.done)

    def test_step_before_reset(self):
        with self.assertRaises(ContractError):
            PointEnv(EnvConfig()).step([0.0, 0.0])

    def test_random_rng_reset(self):
        """reset 同一种子后随机数序列重置"""
        env = PointEnv(EnvConfig())
        env.reset(3)
        first = env.rng.uniform(size=4)
        env.reset(3)
        np.testing.assert_array_equal(env.rng.uniform(size=4), first)


class TestDataset(unittest.TestCase):
    """数据集生成与文件格式测试"""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()

    def tearDown(self):
        self.tmp.cleanup()

    def _path(self, name):
        return os.path.join(self.tmp.name, name)

    def test_generate_shapes(self):
        """帧、动作与回报的形状"""
        data = generate_dataset('point_reach', 'expert', 3, 4, seed=1, frame_size=16)
        self.assertEqual(data.frames.shape, (3, 5, 3, 16, 16))
        self.assertEqual(data.frames.dtype, np.uint8)
        self.assertEqual(data.actions.shape, (3, 4, 2))
        self.assertEqual(data.returns.shape, (3,))

    def test_generate_deterministic(self):
        """相同 (seed, env, policy) 逐字节一致，换种子则不同"""
        a = generate_dataset('point_reach', 'random', 3, 4, seed=5, frame_size=16)
        b = generate_dataset('point_reach', 'random', 3, 4, seed=5, frame_size=16)
        c = generate_dataset('point_reach', 'random', 3, 4, seed=6, frame_size=16)
        np.testing.assert_array_equal(a.frames, b.frames)
        np.testing.assert_array_equal(a.actions, b.actions)
        self.assertFalse(np.array_equal(a.frames, c.frames))

    def test_file_layout(self):
        """文件大小 = 头部 + N·(T+1)·3·H·W + 动作块 + 回报块"""
        path = self._path('reach.tvds')
        generate_dataset('point_reach', 'expert', 3, 4, seed=1, frame_size=16, path=path)
        n, t, h = 3, 4, 16
        expected = header_size('point_reach', 'expert') + n * (t + 1) * 3 * h * h + 4 * n * t * 2 + 4 * n
        self.assertEqual(os.path.getsize(path), expected)
        with open(path, 'rb') as f:
            raw = f.read(12)
        self.assertEqual(raw[:4], DATASET_MAGIC)
        self.assertEqual(struct.unpack('<II', raw[4:12]), (1, len('point_reach')))

    def test_streamed_equals_in_memory(self):
        """流式写入与内存生成的内容一致"""
        path = self._path('push.tvds')
        streamed = generate_dataset('point_push', 'expert', 2, 3, seed=9, frame_size=16, path=path)
        memory = generate_dataset('point_push', 'expert', 2, 3, seed=9, frame_size=16)
        np.testing.assert_array_equal(np.asarray(streamed.frames), memory.frames)
        np.testing.assert_array_equal(streamed.returns, memory.returns)
        self.assertEqual(streamed.env_id, 'point_push')
        self.assertEqual(streamed.seed, 9)

    def test_save_load_without_actions(self):
        """没有动作与回报块的数据集也能往返"""
        data = generate_dataset('point_reach', 'expert', 2, 3, seed=2, frame_size=16)
        data.actions = None
        data.returns = None
        path = self._path('frames_only.tvds')
        save_dataset(data, path)
        self.assertEqual(os.path.getsize(path), header_size('point_reach', 'expert') + 2 * 4 * 3 * 16 * 16)
        loaded = load_dataset(path, mmap=False)
        np.testing.assert_array_equal(loaded.frames, data.frames)
        self.assertIsNone(loaded.actions)
        self.assertIsNone(loaded.returns)

    def test_subset_and_summary(self):
        data = generate_dataset('point_reach', 'expert', 4, 3, seed=3, frame_size=16)
        part = data.subset([3, 1])
        np.testing.assert_array_equal(part.frames[0], data.frames[3])
        summary = data.summary()
        self.assertEqual(summary['trajectories'], 4)
        self.assertIn('mean_return', summary)

    def test_bad_magic(self):
        path = self._path('bad.tvds')
        with open(path, 'wb') as f:
            f.write(b'XXXX' + bytes(64))
        with self.assertRaises(DatasetIOError):
            load_dataset(path)

    def test_truncated(self):
        """文件大小与头部不一致时抛出 DatasetIOError"""
        path = self._path('cut.tvds')
        generate_dataset('point_reach', 'expert', 2, 3, seed=1, frame_size=16, path=path)
        with open(path, 'rb') as f:
            raw = f.read()
        with open(path, 'wb') as f:
            f.write(raw[:-10])
        with self.assertRaises(DatasetIOError):
            load_dataset(path)

    def test_missing_file(self):
        with self.assertRaises(DatasetIOError):
            load_dataset(self._path('none.tvds'))

    def test_invalid_arguments(self):
        """非法参数抛出 ParameterError"""
        with self.assertRaises(ParameterError):
            generate_dataset('point_reach', 'expert', 0, 4, seed=0)
        with self.assertRaises(ParameterError):
            generate_dataset('point_reach', 'expert', 2, 1, seed=0)
        with self.assertRaises(ParameterError):
            generate_dataset('point_reach', 'agent', 2, 4, seed=0)
        with self.assertRaises(ParameterError):
            generate_dataset('maze', 'expert', 2, 4, seed=0)


if __name__ == '__main__':
    unittest.main()
