#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
参数检查点
带版本号头部的参数容器，保存 / 读取均逐位无损

文件布局 (所有整数均为小端序):

    magic        4 字节  b'TVCK'
    version      u32     当前为 1
    entry_count  u32
    entry × entry_count:
        name_len u32, name (utf-8)
        ndim     u32, dims u32 × ndim
        offset   u64     相对数据区起点的字节偏移
        count    u64     元素个数
    meta_len     u32, meta (utf-8 JSON，可为空对象)
    数据区       各条目的小端 float32 数组，按条目顺序紧密排列

作者: TrajVision
版本: 1.0.0
"""

import hashlib
import json
import os
import struct
from pathlib import Path
from typing import Dict, Tuple, Union

import numpy as np

from core.errors import DatasetIOError

MAGIC = b'TVCK'
FORMAT_VERSION = 1

PathLike = Union[str, Path]


def _encode(entries: Dict[str, np.ndarray], metadata: dict) -> bytes:
    header = bytearray()
    header += MAGIC
    header += struct.pack('<II', FORMAT_VERSION, len(entries))
    offset = 0
    blobs = []
    for name, array in entries.items():
        data = np.ascontiguousarray(array, dtype='<f4')
        raw_name = name.encode('utf-8')
        header += struct.pack('<I', len(raw_name)) + raw_name
        header += struct.pack('<I', data.ndim)
        header += struct.pack(f'<{data.ndim}I', *data.shape)
        header += struct.pack('<QQ', offset, data.size)
        blob = data.tobytes()
        blobs.append(blob)
        offset += len(blob)
    meta = json.dumps(metadata or {}, sort_keys=True).encode('utf-8')
    header += struct.pack('<I', len(meta)) + meta
    return bytes(header) + b''.join(blobs)


def save_checkpoint(path: PathLike, entries: Dict[str, np.ndarray], metadata: dict = None) -> Path:
    """
    保存检查点 (先写临时文件再原子替换)

    Args:
        path: 目标文件
        entries: 名称 -> 数组，保存为 float32
        metadata: 可 JSON 序列化的附加信息

    Returns:
        Path: 写入的文件路径
    """
    path = Path(path)
    payload = _encode(entries, metadata)
    tmp = path.with_suffix(path.suffix + '.tmp')
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(tmp, 'wb') as f:
            f.write(payload)
        os.replace(tmp, path)
    except OSError as e:
        raise DatasetIOError(path, f"写入检查点失败: {e}") from e
    return path


def load_checkpoint(path: PathLike) -> Tuple[Dict[str, np.ndarray], dict]:
    """
    读取检查点

    Returns:
        (名称 -> float32 数组, metadata)
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise DatasetIOError(path, f"读取检查点失败: {e}") from e

    try:
        if raw[:4] != MAGIC:
            raise DatasetIOError(path, "不是 TrajVision 检查点文件")
        version, count = struct.unpack_from('<II', raw, 4)
        if version != FORMAT_VERSION:
            raise DatasetIOError(path, f"不支持的检查点版本 {version}")
        pos = 12
        layout = []
        for _ in range(count):
            (name_len,) = struct.unpack_from('<I', raw, pos)
            pos += 4
            name = raw[pos:pos + name_len].decode('utf-8')
            pos += name_len
            (ndim,) = struct.unpack_from('<I', raw, pos)
            pos += 4
            shape = struct.unpack_from(f'<{ndim}I', raw, pos)
            pos += 4 * ndim
            offset, size = struct.unpack_from('<QQ', raw, pos)
            pos += 16
            layout.append((name, shape, offset, size))
        (meta_len,) = struct.unpack_from('<I', raw, pos)
        pos += 4
        metadata = json.loads(raw[pos:pos + meta_len].decode('utf-8')) if meta_len else {}
        data_start = pos + meta_len
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DatasetIOError(path, f"检查点头部损坏: {e}") from e

    entries = {}
    for name, shape, offset, size in layout:
        start = data_start + offset
        if start + 4 * size > len(raw):
            raise DatasetIOError(path, f"条目 {name} 超出文件末尾")
        array = np.frombuffer(raw, dtype='<f4', count=size, offset=start)
        entries[name] = array.astype(np.float32).reshape(shape)
    return entries, metadata


def state_digest(entries: Dict[str, np.ndarray]) -> str:
    """参数字典的 SHA-256 摘要，用于比较检查点是否变化"""
    digest = hashlib.sha256()
    for name in entries:
        digest.update(name.encode('utf-8'))
        digest.update(np.ascontiguousarray(entries[name], dtype='<f4').tobytes())
    return digest.hexdigest()
