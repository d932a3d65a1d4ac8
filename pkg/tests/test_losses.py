#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
训练目标单元测试
公式对照使用独立的逐元素实现
"""

import unittest
import numpy as np
import sys
import os

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from core import tensor as T
from core.config import LossConfig
from core.errors import ContractError, DimensionError, DomainError, ParameterError
from core.losses import (LOSS_COLUMNS, LossReport, SimilarityParams, ae_loss, cmc_loss, dpc_loss,
                         predictive_nce, sample_triplet_indices, seq_contrast_loss, similarity_h,
                         total_loss, triplet_loss)
from core.nets import EncoderBundle
from core.tensor import Tensor, no_grad
from tests.fixtures import micro_config, random_frames
from tests.gradcheck import Float64TestCase, assert_gradients_match

# -log(e / (e + 1))
ONE_ORTHOGONAL_NEGATIVE = 0.31326168751822286


# ==================== 独立实现 ====================

def _cos(a, b):
    return float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))


def _h(a, b, tau):
    return np.exp(_cos(a, b) / tau)


def brute_triplet(s, s_p, s_n, rho):
    total = 0.0
    for a, p, n in zip(s, s_p, s_n):
        total += np.sum((a - p) ** 2) + max(rho - np.sum((a - n) ** 2), 0.0)
    return total / len(s)


def brute_cmc(l_enc, ab_enc, tau):
    n = len(l_enc)
    total = 0.0
    for i in range(n):
        total -= np.log(_h(l_enc[i], ab_enc[i], tau) / sum(_h(l_enc[i], ab_enc[j], tau) for j in range(n)))
        total -= np.log(_h(ab_enc[i], l_enc[i], tau) / sum(_h(ab_enc[i], l_enc[j], tau) for j in range(n)))
    return total / (2 * n)


def brute_seq_contrast(z, z_p, z_n, tau):
    total = 0.0
    for i in range(len(z)):
        pos = _h(z[i], z_p[i], tau)
        total -= np.log(pos / (pos + sum(_h(z[i], neg, tau) for neg in z_n[i])))
    return total / len(z)


def brute_predictive(predictions, states, context, tau):
    """predictions: [B, K, D]，states: [B, T+1, D]"""
    b, horizon = predictions.shape[:2]
    total = 0.0
    for i in range(b):
        for k in range(horizon):
            target = context + k
            pos = _h(predictions[i, k], states[i, target], tau)
            neg = sum(_h(predictions[i, k], states[i, t], tau) for t in range(states.shape[1]) if t != target)
            total += np.log(pos / (pos + neg))
    return -total / (b * horizon)


def hand_rollout(bundle, states, context, horizon):
    """每一步都从头编码 (前缀 + 已有预测)，不复用 carry"""
    sequence = states[:, :context, :]
    predictions = []
    with no_grad():
        for _ in range(horizon):
            z, _ = bundle.encode_sequence(Tensor(sequence))
            pred = bundle.predict_next(z).data
            predictions.append(pred)
            sequence = np.concatenate([sequence, pred[:, None, :]], axis=1)
    return np.stack(predictions, axis=1)


# ==================== 相似度 ====================

class TestSimilarity(unittest.TestCase):
    """similarity_h 测试"""

    def test_identical_unit(self):
        """a = b，τ=1 → e"""
        self.assertAlmostEqual(similarity_h([1.0, 0.0], [1.0, 0.0], 1.0), np.e, places=10)

    def test_orthogonal(self):
        """正交向量，τ=1 → 1"""
        self.assertAlmostEqual(similarity_h([1.0, 0.0], [0.0, 3.0], 1.0), 1.0, places=12)

    def test_scale_invariant(self):
        """h(2a, b) = h(a, b)"""
        rng = np.random.default_rng(0)
        for _ in range(20):
            a, b = rng.standard_normal(6), rng.standard_normal(6)
            self.assertAlmostEqual(similarity_h(2 * a, b, 0.5), similarity_h(a, b, 0.5), places=10)
            self.assertAlmostEqual(similarity_h(a, 0.1 * b, 0.5), similarity_h(a, b, 0.5), places=10)

    def test_bounds(self):
        """h ∈ [e^{-1/τ}, e^{1/τ}]"""
        rng = np.random.default_rng(1)
        tau = 0.3
        for _ in range(50):
            h = similarity_h(rng.standard_normal(4), rng.standard_normal(4), tau)
            self.assertGreaterEqual(h, np.exp(-1 / tau) - 1e-12)
            self.assertLessEqual(h, np.exp(1 / tau) + 1e-9)

    def test_zero_vector(self):
        """零向量抛出 DomainError"""
        with self.assertRaises(DomainError):
            similarity_h([0.0, 0.0], [1.0, 0.0], 1.0)

    def test_invalid_tau(self):
        """τ ≤ 0 抛出 ParameterError"""
        with self.assertRaises(ParameterError):
            SimilarityParams(0.0)
        with self.assertRaises(ParameterError):
            similarity_h([1.0], [1.0], -1.0)


# ==================== 帧级损失 ====================

class TestTripletLoss(Float64TestCase):
    """triplet_loss 测试"""

    def test_zero_when_separated(self):
        """s = s_p 且 ‖s - s_n‖² ≥ ρ → 0"""
        s = Tensor(np.array([0.0, 0.0]))
        out = triplet_loss(s, s, Tensor(np.array([2.0, 0.0])), rho=1.0)
        self.assertEqual(out.item(), 0.0)

    def test_all_equal(self):
        """s = s_p = s_n → ρ"""
        s = Tensor(np.array([[0.3, -1.0]]))
        self.assertAlmostEqual(triplet_loss(s, s, s, rho=1.7).item(), 1.7)

    def test_matches_formula(self):
        """100 个随机实例与逐元素公式一致"""
        rng = np.random.default_rng(2)
        for _ in range(100):
            s, p, n = (rng.standard_normal((3, 4)) * 0.6 for _ in range(3))
            rho = rng.uniform(0.5, 4.0)
            out = triplet_loss(Tensor(s), Tensor(p), Tensor(n), rho).item()
            self.assertAlmostEqual(out, brute_triplet(s, p, n, rho), delta=1e-5)

    def test_invalid(self):
        """ρ ≤ 0 或形状不一致时报错"""
        s = Tensor(np.zeros(2))
        with self.assertRaises(ParameterError):
            triplet_loss(s, s, s, rho=0.0)
        with self.assertRaises(DimensionError):
            triplet_loss(s, s, Tensor(np.zeros(3)), rho=1.0)

    def test_gradients(self):
        """梯度与中心差分一致 (间隔项处于激活状态)"""
        rng = np.random.default_rng(3)
        s, p, n = (Tensor(rng.standard_normal((3, 4)) * 0.3, requires_grad=True) for _ in range(3))
        assert_gradients_match(self, lambda: triplet_loss(s, p, n, rho=10.0), [s, p, n])


class TestAeLoss(Float64TestCase):
    """ae_loss 测试"""

    def test_perfect(self):
        """完美重建 → 0"""
        x = Tensor(np.random.default_rng(4).standard_normal((2, 3, 4, 4)))
        self.assertEqual(ae_loss(x, x).item(), 0.0)

    def test_zeros_vs_ones(self):
        """全 0 与全 1 → 1.0 (取平均)"""
        self.assertAlmostEqual(ae_loss(Tensor(np.zeros((2, 3, 4, 4))), Tensor(np.ones((2, 3, 4, 4)))).item(), 1.0)

    def test_matches_mse(self):
        """与直接计算的均方误差一致"""
        rng = np.random.default_rng(5)
        a, b = rng.standard_normal((2, 3, 5, 5)), rng.standard_normal((2, 3, 5, 5))
        self.assertAlmostEqual(ae_loss(Tensor(a), Tensor(b)).item(), float(np.mean((a - b) ** 2)), places=10)

    def test_shape_mismatch(self):
        """形状不一致时抛出 DimensionError"""
        with self.assertRaises(DimensionError):
            ae_loss(Tensor(np.zeros((1, 3, 4, 4))), Tensor(np.zeros((1, 3, 4, 5))))

    def test_gradients(self):
        """梯度与中心差分一致"""
        rng = np.random.default_rng(6)
        a = Tensor(rng.standard_normal((2, 3, 2, 2)), requires_grad=True)
        b = Tensor(rng.standard_normal((2, 3, 2, 2)), requires_grad=True)
        assert_gradients_match(self, lambda: ae_loss(a, b), [a, b])


class TestCmcLoss(Float64TestCase):
    """cmc_loss 测试"""

    def test_constructed_case(self):
        """正样本对相同、交叉对正交，τ=1 → 0.3133"""
        e = np.eye(2)
        out = cmc_loss(Tensor(e), Tensor(e), tau=1.0).item()
        self.assertAlmostEqual(out, ONE_ORTHOGONAL_NEGATIVE, places=10)

    def test_matches_formula(self):
        """100 个随机实例与逐元素公式一致"""
        rng = np.random.default_rng(7)
        for _ in range(100):
            n = int(rng.integers(2, 6))
            l_enc, ab_enc = rng.standard_normal((n, 5)), rng.standard_normal((n, 5))
            tau = rng.uniform(0.1, 1.0)
            out = cmc_loss(Tensor(l_enc), Tensor(ab_enc), tau).item()
            self.assertAlmostEqual(out, brute_cmc(l_enc, ab_enc, tau), delta=1e-5)

    def test_bounds(self):
        """0 ≤ loss ≤ log(n) + 2/τ"""
        rng = np.random.default_rng(8)
        for _ in range(30):
            n, tau = 4, rng.uniform(0.1, 1.0)
            out = cmc_loss(Tensor(rng.standard_normal((n, 3))), Tensor(rng.standard_normal((n, 3))), tau).item()
            self.assertGreaterEqual(out, 0.0)
            self.assertLessEqual(out, np.log(n) + 2 / tau)

    def test_permutation_invariant(self):
        """同时打乱两个视图的样本顺序，损失不变"""
        rng = np.random.default_rng(9)
        l_enc, ab_enc = rng.standard_normal((5, 4)), rng.standard_normal((5, 4))
        perm = rng.permutation(5)
        a = cmc_loss(Tensor(l_enc), Tensor(ab_enc), 0.2).item()
        b = cmc_loss(Tensor(l_enc[perm]), Tensor(ab_enc[perm]), 0.2).item()
        self.assertAlmostEqual(a, b, places=10)

    def test_single_item(self):
        """批次为 1 时抛出 ContractError"""
        with self.assertRaises(ContractError):
            cmc_loss(Tensor(np.ones((1, 3))), Tensor(np.ones((1, 3))), 0.1)

    def test_zero_vector(self):
        """零向量编码抛出 DomainError"""
        with self.assertRaises(DomainError):
            cmc_loss(Tensor(np.zeros((2, 3))), Tensor(np.ones((2, 3))), 0.1)

    def test_gradients(self):
        """梯度与中心差分一致"""
        rng = np.random.default_rng(10)
        l_enc = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
        ab_enc = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
        assert_gradients_match(self, lambda: cmc_loss(l_enc, ab_enc, 0.5), [l_enc, ab_enc])


# ==================== 序列级损失 ====================

class TestSeqContrastLoss(Float64TestCase):
    """seq_contrast_loss 测试"""

    def test_constructed_case(self):
        """z = z_p 单位向量，一个正交负样本，τ=1 → 0.3133"""
        z = Tensor(np.array([1.0, 0.0]))
        out = seq_contrast_loss(z, z, Tensor(np.array([[0.0, 1.0]])), tau=1.0).item()
        self.assertAlmostEqual(out, ONE_ORTHOGONAL_NEGATIVE, places=10)

    def test_matches_formula(self):
        """100 个随机实例与逐元素公式一致"""
        rng = np.random.default_rng(11)
        for _ in range(100):
            b, k = int(rng.integers(1, 4)), int(rng.integers(1, 5))
            z, z_p = rng.standard_normal((b, 6)), rng.standard_normal((b, 6))
            z_n = rng.standard_normal((b, k, 6))
            tau = rng.uniform(0.1, 1.0)
            out = seq_contrast_loss(Tensor(z), Tensor(z_p), Tensor(z_n), tau).item()
            self.assertAlmostEqual(out, brute_seq_contrast(z, z_p, z_n, tau), delta=1e-5)

    def test_positive_and_bounded(self):
        """k ≥ 1 时 0 < loss ≤ log(1+k) + 2/τ"""
        rng = np.random.default_rng(12)
        for k in (1, 3, 8):
            tau = 0.25
            out = seq_contrast_loss(Tensor(rng.standard_normal(4)), Tensor(rng.standard_normal(4)),
                                    Tensor(rng.standard_normal((k, 4))), tau).item()
            self.assertGreater(out, 0.0)
            self.assertLessEqual(out, np.log(1 + k) + 2 / tau)

    def test_monotone_in_positive(self):
        """负样本固定时，z 与 z_p 越接近损失越小"""
        rng = np.random.default_rng(13)
        for _ in range(20):
            z = rng.standard_normal(5)
            other = rng.standard_normal(5)
            z_n = Tensor(rng.standard_normal((3, 5)))
            losses = [seq_contrast_loss(Tensor(z), Tensor(w * z + (1 - w) * other), z_n, 0.5).item()
                      for w in (0.0, 0.5, 1.0)]
            self.assertLessEqual(losses[2], losses[0] + 1e-12)

    def test_no_negatives(self):
        """k = 0 抛出 ContractError"""
        z = Tensor(np.ones(3))
        with self.assertRaises(ContractError):
            seq_contrast_loss(z, z, Tensor(np.zeros((0, 3))), 0.1)

    def test_gradients(self):
        """梯度与中心差分一致"""
        rng = np.random.default_rng(14)
        z, z_p = (Tensor(rng.standard_normal((2, 4)), requires_grad=True) for _ in range(2))
        z_n = Tensor(rng.standard_normal((2, 3, 4)), requires_grad=True)
        assert_gradients_match(self, lambda: seq_contrast_loss(z, z_p, z_n, 0.5), [z, z_p, z_n])


class TestDpcLoss(Float64TestCase):
    """预测编码损失测试"""

    def setUp(self):
        super().setUp()
        self.bundle = EncoderBundle(micro_config(), seed=0)

    def test_constructed_case(self):
        """预测等于正样本、唯一负样本与其正交，τ=1 → 0.3133"""
        states = Tensor(np.array([[[0.0, 1.0], [1.0, 0.0]]]))
        prediction = Tensor(np.array([[1.0, 0.0]]))
        out = predictive_nce([prediction], states, [1], tau=1.0).item()
        self.assertAlmostEqual(out, ONE_ORTHOGONAL_NEGATIVE, places=10)

    def test_matches_hand_unrolled(self):
        """100 个随机实例与手工展开 + 逐元素公式一致"""
        rng = np.random.default_rng(15)
        for _ in range(100):
            length = int(rng.integers(2, 7))
            horizon = int(rng.integers(1, length))
            context = int(rng.integers(1, length - horizon + 1))
            states = rng.standard_normal((2, length, 4))
            tau = rng.uniform(0.2, 1.0)
            with no_grad():
                out = dpc_loss(self.bundle, Tensor(states), context, horizon, tau).item()
            predictions = hand_rollout(self.bundle, states, context, horizon)
            self.assertAlmostEqual(out, brute_predictive(predictions, states, context, tau), delta=1e-5)

    def test_strictly_positive(self):
        """存在负样本时损失严格为正"""
        states = Tensor(np.random.default_rng(16).standard_normal((2, 4, 4)))
        with no_grad():
            self.assertGreater(dpc_loss(self.bundle, states, 1, 3, 0.07).item(), 0.0)

    def test_out_of_range(self):
        """前缀为 0 或预测越过序列末端时抛出 ContractError"""
        states = Tensor(np.zeros((1, 4, 4)) + 1.0)
        with self.assertRaises(ContractError):
            dpc_loss(self.bundle, states, 0, 2, 0.1)
        with self.assertRaises(ContractError):
            dpc_loss(self.bundle, states, 2, 3, 0.1)

    def test_gradients(self):
        """对状态序列与 f、d 参数的梯度与中心差分一致"""
        states = Tensor(np.random.default_rng(17).standard_normal((2, 4, 4)), requires_grad=True)
        params = [states] + self.bundle.f.parameters() + self.bundle.d.parameters()
        assert_gradients_match(self, lambda: dpc_loss(self.bundle, states, 2, 2, 0.5), params)


# ==================== 总损失 ====================

class TestTripletSampling(unittest.TestCase):
    """triplet 帧下标采样测试"""

    def test_windows(self):
        """正样本在 ±2 步内，负样本至少间隔 ceil(T/4)"""
        config = LossConfig()
        rng = np.random.default_rng(18)
        for _ in range(500):
            a, p, n = sample_triplet_indices(41, config, rng)
            self.assertTrue(1 <= abs(p - a) <= 2)
            self.assertGreaterEqual(abs(n - a), 10)
            self.assertTrue(0 <= p < 41 and 0 <= n < 41)

    def test_short_sequence(self):
        """长度 2 时正负样本都是另一帧"""
        rng = np.random.default_rng(19)
        for _ in range(20):
            a, p, n = sample_triplet_indices(2, LossConfig(), rng)
            self.assertEqual(p, 1 - a)
            self.assertEqual(n, 1 - a)


class TestTotalLoss(Float64TestCase):
    """total_loss 测试"""

    def setUp(self):
        super().setUp()
        self.config = micro_config()
        self.bundle = EncoderBundle(self.config, seed=0)
        self.expert = random_frames(2, 3, 4, seed=1)
        self.other = random_frames(2, 3, 4, seed=2)

    def test_report_sums(self):
        """l_total 等于五个分量之和"""
        report = total_loss(self.bundle, self.expert, self.other, self.config.loss, np.random.default_rng(0))
        parts = report.l_triplet + report.l_ae + report.l_s + report.l_z + report.l_o
        self.assertAlmostEqual(report.l_total, parts, places=10)
        self.assertAlmostEqual(report.l_total, report.graph.item(), places=8)
        self.assertAlmostEqual(report.l_frame + report.l_seq, report.l_total, places=10)
        self.assertTrue(all(np.isfinite(v) for v in report.as_dict().values()))

    def test_report_columns(self):
        """as_dict 列顺序固定，可选附带 l_seq"""
        report = LossReport(1.0, 2.0, 3.0, 4.0, 5.0, 15.0)
        self.assertEqual(tuple(report.as_dict()), LOSS_COLUMNS)
        self.assertEqual(report.as_dict(with_seq=True)['l_seq'], 9.0)

    def test_deterministic(self):
        """相同随机数种子得到相同的损失"""
        a = total_loss(self.bundle, self.expert, self.other, self.config.loss, np.random.default_rng(3))
        b = total_loss(self.bundle, self.expert, self.other, self.config.loss, np.random.default_rng(3))
        self.assertEqual(a.as_dict(), b.as_dict())

    def test_insufficient_sequences(self):
        """任一分布少于 2 条序列时抛出 ContractError"""
        with self.assertRaises(ContractError):
            total_loss(self.bundle, self.expert[:1], self.other, self.config.loss, np.random.default_rng(0))
        with self.assertRaises(ContractError):
            total_loss(self.bundle, self.expert, self.other[:1], self.config.loss, np.random.default_rng(0))

    def test_shape_mismatch(self):
        """两种分布的序列形状不一致时抛出 ContractError"""
        longer = random_frames(2, 4, 4, seed=5)
        with self.assertRaises(ContractError):
            total_loss(self.bundle, self.expert, longer, self.config.loss, np.random.default_rng(0))

    def test_same_data_smoke(self):
        """两种分布喂相同数据时 L_O 有限且不超过上界"""
        config = self.config.loss
        bound = np.log(1 + config.negatives) + 2 / config.tau
        rng = np.random.default_rng(6)
        for i in range(10):
            frames = random_frames(3, 3, 4, seed=100 + i)
            with no_grad():
                report = total_loss(self.bundle, frames, frames.copy(), config, rng)
            self.assertTrue(0.0 < report.l_o <= bound)

    def test_gradients(self):
        """l_total 对全部编码函数参数的梯度与中心差分一致 (4×4 帧，2 步序列)"""
        params = self.bundle.parameters()

        def graph():
            report = total_loss(self.bundle, self.expert, self.other, self.config.loss, np.random.default_rng(7))
            return report.graph

        assert_gradients_match(self, graph, params, limit=3)


if __name__ == '__main__':
    unittest.main()
