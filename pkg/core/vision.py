#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
颜色空间与帧预处理
把 RGB 帧分解为 Lab 颜色空间的两个视图，供双视图对比学习使用

支持的功能:
- sRGB → 线性 RGB → XYZ (D65 白点) → CIE L*a*b*
- Lab → sRGB 逆变换 (超出色域时截断)
- 视图归一化: L ∈ [0,100] → [-1,1]，a,b ∈ [-110,110] → [-1,1]
- 批量帧转换 (数据集与训练批次使用)

作者: TrajVision
版本: 1.0.0
"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from core.errors import DimensionError
from core.tensor import get_default_dtype

# sRGB (IEC 61966-2-1) 线性 RGB → XYZ 矩阵
RGB_TO_XYZ = np.array([
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
])
XYZ_TO_RGB = np.linalg.inv(RGB_TO_XYZ)

# D65 白点，取矩阵行和使 (255,255,255) 精确落在白点上
WHITE_POINT = RGB_TO_XYZ.sum(axis=1)

DELTA = 6.0 / 29.0
L_RANGE = 100.0
AB_RANGE = 110.0


@dataclass
class Frame:
    """RGB 帧，rgb 为 [3, H, W] 的 uint8 数组"""
    height: int
    width: int
    rgb: np.ndarray

    def __post_init__(self):
        self.rgb = np.ascontiguousarray(self.rgb, dtype=np.uint8)
        if self.rgb.shape != (3, self.height, self.width):
            raise DimensionError(
                f"帧数据形状应为 (3, {self.height}, {self.width})，实际 {self.rgb.shape}"
            )

    @classmethod
    def from_array(cls, rgb: np.ndarray) -> 'Frame':
        rgb = np.asarray(rgb)
        if rgb.ndim != 3 or rgb.shape[0] != 3:
            raise DimensionError(f"帧数组应为 [3, H, W]，实际 {rgb.shape}")
        return cls(height=rgb.shape[1], width=rgb.shape[2], rgb=rgb)

    @property
    def nbytes(self) -> int:
        return 3 * self.height * self.width


@dataclass
class LabViews:
    """
    Lab 双视图

    l_view: [1, H, W]，视图 v1
    ab_view: [2, H, W]，视图 v2
    两者均已归一化到 [-1, 1]
    """
    l_view: np.ndarray
    ab_view: np.ndarray

    @property
    def stacked(self) -> np.ndarray:
        """[3, H, W]，L 在前"""
        return np.concatenate([self.l_view, self.ab_view], axis=0)


# ==================== 数组级转换 ====================

def _srgb_to_linear(values: np.ndarray) -> np.ndarray:
    return np.where(values > 0.04045, ((values + 0.055) / 1.055) ** 2.4, values / 12.92)


def _linear_to_srgb(values: np.ndarray) -> np.ndarray:
    values = np.clip(values, 0.0, 1.0)
    return np.where(values > 0.0031308, 1.055 * values ** (1.0 / 2.4) - 0.055, 12.92 * values)


def _lab_f(t: np.ndarray) -> np.ndarray:
    return np.where(t > DELTA ** 3, np.cbrt(t), t / (3 * DELTA ** 2) + 4.0 / 29.0)


def _lab_f_inv(t: np.ndarray) -> np.ndarray:
    return np.where(t > DELTA, t ** 3, 3 * DELTA ** 2 * (t - 4.0 / 29.0))


def rgb_array_to_lab(rgb: np.ndarray) -> np.ndarray:
    """
    批量 sRGB → CIE L*a*b* (未归一化)

    Args:
        rgb: [..., 3, H, W] uint8

    Returns:
        np.ndarray: [..., 3, H, W] float64，通道顺序 L, a, b
    """
    rgb = np.asarray(rgb)
    if rgb.ndim < 3 or rgb.shape[-3] != 3:
        raise DimensionError(f"输入应为 [..., 3, H, W]，实际 {rgb.shape}")
    linear = _srgb_to_linear(rgb.astype(np.float64) / 255.0)
    xyz = np.einsum('ij,...jhw->...ihw', RGB_TO_XYZ, linear)
    f = _lab_f(xyz / WHITE_POINT.reshape(3, 1, 1))
    fx, fy, fz = f[..., 0, :, :], f[..., 1, :, :], f[..., 2, :, :]
    lab = np.stack([116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)], axis=-3)

    # 灰色像素色度严格为 0
    r, g, b = rgb[..., 0, :, :], rgb[..., 1, :, :], rgb[..., 2, :, :]
    gray = (r == g) & (g == b)
    lab[..., 1, :, :][gray] = 0.0
    lab[..., 2, :, :][gray] = 0.0
    return lab


def lab_array_to_rgb(lab: np.ndarray) -> np.ndarray:
    """
    批量 CIE L*a*b* (未归一化) → sRGB，超出色域截断

    Args:
        lab: [..., 3, H, W]

    Returns:
        np.ndarray: [..., 3, H, W] uint8
    """
    lab = np.asarray(lab, dtype=np.float64)
    if lab.ndim < 3 or lab.shape[-3] != 3:
        raise DimensionError(f"输入应为 [..., 3, H, W]，实际 {lab.shape}")
    L, a, b = lab[..., 0, :, :], lab[..., 1, :, :], lab[..., 2, :, :]
    fy = (L + 16.0) / 116.0
    fx = fy + a / 500.0
    fz = fy - b / 200.0
    xyz = _lab_f_inv(np.stack([fx, fy, fz], axis=-3)) * WHITE_POINT.reshape(3, 1, 1)
    linear = np.einsum('ij,...jhw->...ihw', XYZ_TO_RGB, xyz)
    srgb = _linear_to_srgb(linear)
    return np.clip(np.rint(srgb * 255.0), 0, 255).astype(np.uint8)


def normalize_lab(lab: np.ndarray) -> np.ndarray:
    """L → L/50 - 1，a,b → /110，均截断到 [-1, 1]"""
    out = np.empty_like(lab, dtype=np.float64)
    out[..., 0, :, :] = lab[..., 0, :, :] / (L_RANGE / 2.0) - 1.0
    out[..., 1:, :, :] = lab[..., 1:, :, :] / AB_RANGE
    return np.clip(out, -1.0, 1.0)


def denormalize_lab(views: np.ndarray) -> np.ndarray:
    """normalize_lab 的逆"""
    views = np.clip(np.asarray(views, dtype=np.float64), -1.0, 1.0)
    out = np.empty_like(views)
    out[..., 0, :, :] = (views[..., 0, :, :] + 1.0) * (L_RANGE / 2.0)
    out[..., 1:, :, :] = views[..., 1:, :, :] * AB_RANGE
    return out


def frames_to_views(rgb: np.ndarray, dtype=None) -> Tuple[np.ndarray, np.ndarray]:
    """
    批量帧 → 归一化 (L 视图, ab 视图)

    Args:
        rgb: [N, 3, H, W] uint8

    Returns:
        (l [N,1,H,W], ab [N,2,H,W])
    """
    views = normalize_lab(rgb_array_to_lab(rgb)).astype(dtype or get_default_dtype())
    return views[..., :1, :, :], views[..., 1:, :, :]


# ==================== 帧级接口 ====================

def rgb_to_lab(frame: Frame) -> LabViews:
    """
    RGB 帧 → 归一化 Lab 双视图

    Args:
        frame: Frame

    Returns:
        LabViews
    """
    views = normalize_lab(rgb_array_to_lab(frame.rgb))
    return LabViews(l_view=views[:1].astype(np.float32), ab_view=views[1:].astype(np.float32))


def lab_to_rgb(lab: LabViews) -> Frame:
    """
    归一化 Lab 双视图 → RGB 帧 (解码器输出检查用)

    Args:
        lab: LabViews

    Returns:
        Frame
    """
    stacked = lab.stacked
    if stacked.shape[0] != 3:
        raise DimensionError(f"Lab 视图通道数应为 1 + 2，实际 {stacked.shape[0]}")
    return Frame.from_array(lab_array_to_rgb(denormalize_lab(stacked)))


def frames_to_unit(rgb: np.ndarray, dtype=None) -> np.ndarray:
    """uint8 帧 → [-1, 1] 浮点 (智能体输入)"""
    dtype = dtype or get_default_dtype()
    return (np.asarray(rgb, dtype=dtype) / 127.5 - 1.0).astype(dtype)
