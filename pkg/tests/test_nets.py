#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
编码函数与智能体网络单元测试
"""

import unittest
import tempfile
import numpy as np
import sys
import os

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from core.config import NetConfig, build_config
from core.errors import ContractError, DimensionError
from core.nets import AgentNets, EncoderBundle, ImageDecoder, ImageEncoder, SequenceCarry
from core.tensor import Tensor, no_grad
from core.vision import Frame
from tests.fixtures import random_frames, small_config


class TestArchitecture(unittest.TestCase):
    """网络结构测试"""

    def test_encoder_ladder_desk(self):
        """desk 规模: 32 → 14 → 5 → 1，通道 16 / 32 / 64"""
        encoder = ImageEncoder(1, 64, 32, NetConfig(), np.random.default_rng(0))
        self.assertEqual(encoder.ladder, [32, 14, 5, 1])
        self.assertEqual(encoder.conv_channels, [16, 32, 64])

    def test_decoder_output_padding_full_size(self):
        """64×64 帧的解码器各层 output_padding 为 0, 0, 1, 1"""
        net = NetConfig(width_multiplier=1 / 64)
        decoder = ImageDecoder(8, 64, net, np.random.default_rng(0))
        self.assertEqual(decoder.output_paddings, [0, 0, 1, 1])
        with no_grad():
            out = decoder.eval()(Tensor(np.zeros((1, 8))))
        self.assertEqual(out.shape, (1, 3, 64, 64))

    def test_decoder_output_desk(self):
        """desk 规模解码器输出 [N, 3, 32, 32]"""
        decoder = ImageDecoder(16, 32, NetConfig(width_multiplier=1 / 16), np.random.default_rng(1))
        self.assertEqual(decoder.output_paddings, [0, 1, 1])
        with no_grad():
            out = decoder(Tensor(np.random.default_rng(2).standard_normal((2, 16))))
        self.assertEqual(out.shape, (2, 3, 32, 32))


class TestEncoderBundle(unittest.TestCase):
    """EncoderBundle 测试"""

    @classmethod
    def setUpClass(cls):
        cls.config = build_config('desk')
        cls.bundle = EncoderBundle(cls.config, seed=0)
        cls.small = EncoderBundle(small_config(), seed=0)

    def _frame(self, seed=0):
        return Frame.from_array(random_frames(1, 1, 32, seed)[0, 0])

    def test_encode_frame_dimension(self):
        """默认帧编码维度为 128"""
        self.assertEqual(self.bundle.encode_frame(self._frame()).shape, (128,))

    def test_encode_frame_pure(self):
        """评估模式下重复编码逐位一致，且不改变训练标志"""
        self.bundle.train()
        first = self.bundle.encode_frame(self._frame())
        second = self.bundle.encode_frame(self._frame())
        np.testing.assert_array_equal(first, second)
        self.assertTrue(self.bundle.training)

    def test_encode_frame_sensitive(self):
        """改动一个像素后编码改变"""
        frame = self._frame()
        rgb = frame.rgb.copy()
        rgb[:, 16, 16] = 255 - rgb[:, 16, 16]
        changed = self.bundle.encode_frame(Frame.from_array(rgb))
        self.assertFalse(np.array_equal(changed, self.bundle.encode_frame(frame)))

    def test_encode_frame_wrong_size(self):
        """帧尺寸不符时抛出 DimensionError"""
        with self.assertRaises(DimensionError):
            self.bundle.encode_frame(Frame.from_array(np.zeros((3, 16, 16), dtype=np.uint8)))
        with self.assertRaises(DimensionError):
            self.bundle.encode_rgb(np.zeros((2, 3, 16, 16), dtype=np.uint8))

    def test_views_concatenated(self):
        """s 为两个视图编码的拼接"""
        self.bundle.eval()
        with no_grad():
            s1, s2, s = self.bundle.encode_rgb(random_frames(1, 3, 32)[0])
        self.bundle.train()
        self.assertEqual(s1.shape, (3, 64))
        np.testing.assert_array_equal(s.data, np.concatenate([s1.data, s2.data], axis=1))

    def test_decode_state_shape(self):
        """解码输出 [N, 3, H, W]"""
        with no_grad():
            out = self.bundle.decode_state(Tensor(np.random.default_rng(0).standard_normal((2, 128))))
        self.assertEqual(out.shape, (2, 3, 32, 32))
        with self.assertRaises(DimensionError):
            self.bundle.decode_state(Tensor(np.zeros((2, 64))))

    def test_sequence_dimension(self):
        """默认序列编码维度为 128"""
        with no_grad():
            z, carry = self.bundle.encode_sequence(Tensor(np.zeros((2, 3, 128))))
        self.assertEqual(z.shape, (2, 128))
        self.assertEqual(carry.steps, 3)

    def test_incremental_sequence(self):
        """增量编码与整段编码在每个长度上一致 (1e-5)"""
        states = Tensor(np.random.default_rng(1).standard_normal((2, 10, 8)))
        with no_grad():
            carry = None
            for t in range(10):
                z_inc, carry = self.small.encode_sequence([states[:, t, :]], carry)
                z_full, _ = self.small.encode_sequence(states[:, :t + 1, :])
                np.testing.assert_allclose(z_inc.data, z_full.data, atol=1e-5)

    def test_zero_sequence_parameters(self):
        """f 的参数全零时 z 等于输出层偏置"""
        bundle = EncoderBundle(small_config(), seed=3)
        for name, p in bundle.f.named_parameters():
            if name != 'head.bias':
                p.data[...] = 0.0
        with no_grad():
            z, _ = bundle.encode_sequence(Tensor(np.random.default_rng(2).standard_normal((3, 4, 8))))
        np.testing.assert_allclose(z.data, np.broadcast_to(bundle.f.head.bias.data, (3, 8)), atol=1e-7)

    def test_empty_sequence(self):
        """空序列抛出 ContractError"""
        with self.assertRaises(ContractError):
            self.small.encode_sequence([])

    def test_predict_next_dimension(self):
        """预测输出维度等于帧编码维度"""
        with no_grad():
            out = self.small.predict_next(Tensor(np.zeros((2, 8))))
        self.assertEqual(out.shape, (2, 8))
        with self.assertRaises(DimensionError):
            self.small.predict_next(Tensor(np.zeros((2, 5))))

    def test_rollout_single_step(self):
        """K=1 的 rollout 就是一次 predict_next"""
        states = Tensor(np.random.default_rng(4).standard_normal((2, 3, 8)))
        with no_grad():
            z, carry = self.small.encode_sequence(states)
            predictions = self.small.rollout(carry, 1)
            expected = self.small.predict_next(z)
        self.assertEqual(len(predictions), 1)
        np.testing.assert_array_equal(predictions[0].data, expected.data)

    def test_rollout_two_steps(self):
        """两步 rollout 与手工展开一致: 第二步的输入是第一步的预测"""
        states = np.random.default_rng(5).standard_normal((2, 3, 8))
        with no_grad():
            _, carry = self.small.encode_sequence(Tensor(states))
            predictions = self.small.rollout(carry, 2)

            z_t, _ = self.small.encode_sequence(Tensor(states))
            s_hat_1 = self.small.predict_next(z_t)
            extended = np.concatenate([states, s_hat_1.data[:, None, :]], axis=1)
            z_next, _ = self.small.encode_sequence(Tensor(extended))
            s_hat_2 = self.small.predict_next(z_next)
        np.testing.assert_allclose(predictions[0].data, s_hat_1.data, atol=1e-6)
        np.testing.assert_allclose(predictions[1].data, s_hat_2.data, atol=1e-5)

    def test_rollout_needs_prefix(self):
        """没有编码过状态的 carry 不能 rollout"""
        carry = SequenceCarry(self.small.f.lstm.initial_state(1), 0)
        with self.assertRaises(ContractError):
            self.small.rollout(carry, 2)

    def test_embed_trajectories(self):
        """批量轨迹编码与逐条编码一致"""
        frames = random_frames(5, 4, 16, seed=6)
        z = self.small.embed_trajectories(frames, batch_size=2)
        self.assertEqual(z.shape, (5, 8))
        self.small.eval()
        with no_grad():
            _, _, s = self.small.encode_rgb(frames[3])
            expected, _ = self.small.encode_sequence(s.reshape(1, 4, 8))
        self.small.train()
        np.testing.assert_allclose(z[3], expected.data[0], atol=1e-5)

    def test_save_load(self):
        """检查点往返后编码一致，元数据保留"""
        frames = random_frames(2, 3, 16, seed=7)
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'encoder.tvck')
            self.small.save(path, {'kind': 'encoder'})
            other = EncoderBundle(small_config(), seed=99)
            metadata = other.load(path)
        self.assertEqual(metadata['kind'], 'encoder')
        np.testing.assert_array_equal(other.embed_trajectories(frames), self.small.embed_trajectories(frames))

    def test_same_seed_same_init(self):
        """相同种子初始化逐位一致"""
        a = EncoderBundle(small_config(), seed=11).state_dict()
        b = EncoderBundle(small_config(), seed=11).state_dict()
        for name in a:
            np.testing.assert_array_equal(a[name], b[name])


class TestAgentNets(unittest.TestCase):
    """智能体网络测试"""

    def setUp(self):
        self.config = small_config()
        self.agent = AgentNets(self.config, seed=0)
        self.frames = random_frames(1, 3, 16, seed=1)[0]

    def test_action_range(self):
        """动作形状 [N, 2]，分量在 [-1, 1]"""
        action = self.agent.act(self.frames)
        self.assertEqual(action.shape, (3, 2))
        self.assertTrue(np.all(np.abs(action) <= 1.0))

    def test_target_matches_online_at_init(self):
        """初始化时目标网络等于在线网络"""
        online = self.agent.features(self.frames).data
        target = self.agent.features(self.frames, target=True).data
        np.testing.assert_array_equal(online, target)

    def test_soft_update(self):
        """polyak=1 时目标不变，polyak=0 时目标等于在线参数"""
        for p in self.agent.critic.parameters():
            p.data += 0.5
        before = [p.data.copy() for p in self.agent.target.head.parameters()]
        self.agent.soft_update(1.0)
        for b, p in zip(before, self.agent.target.head.parameters()):
            np.testing.assert_array_equal(b, p.data)
        self.agent.soft_update(0.0)
        for src, tgt in zip(self.agent.critic.parameters(), self.agent.target.head.parameters()):
            np.testing.assert_allclose(tgt.data, src.data)

    def test_parameter_groups(self):
        """在线参数分为 encoder / actor / critic 三组"""
        groups = self.agent.online_parameters()
        self.assertEqual(set(groups), {'encoder', 'actor', 'critic'})
        self.assertTrue(all(groups[k] for k in groups))

    def test_checkpoint_names(self):
        """检查点条目按 policy / critic / critic_target 命名"""
        prefixes = {name.split('.')[0] for name in self.agent.state_dict()}
        self.assertEqual(prefixes, {'policy', 'critic', 'critic_target'})

    def test_save_load(self):
        """检查点往返后动作一致"""
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'agent.tvck')
            self.agent.save(path, {'kind': 'agent'})
            other = AgentNets(self.config, seed=5)
            other.load(path)
        np.testing.assert_array_equal(other.act(self.frames), self.agent.act(self.frames))

    def test_wrong_frame_size(self):
        """帧尺寸不符时抛出 DimensionError"""
        with self.assertRaises(DimensionError):
            self.agent.act(np.zeros((1, 3, 32, 32), dtype=np.uint8))


if __name__ == '__main__':
    unittest.main()
