#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
日志与指标输出

- setup_logging: 统一配置标准 logging
- MetricsWriter: 逐行累积指标，用 pandas 写成 CSV；文件头部以 '#'
  开头的注释行记录运行参数 (读取时用 pd.read_csv(path, comment='#'))

作者: TrajVision
版本: 1.0.0
"""

import logging
import os
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Union

import pandas as pd

from core.config import default_log_level
from core.errors import DatasetIOError

LOG_FORMAT = '%(asctime)s %(levelname)s %(name)s: %(message)s'


def setup_logging(level: Optional[str] = None) -> None:
    """配置根 logger，level 缺省取 TRAJVISION_LOG_LEVEL"""
    level = (level or default_log_level()).upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO), format=LOG_FORMAT, force=True)


class MetricsWriter:
    """
    指标 CSV

    用法:
        writer = MetricsWriter(path, columns=['epoch', 'l_total'], header={'seed': 0})
        writer.append({'epoch': 0, 'l_total': 1.2})
        writer.flush()
    """

    def __init__(self, path: Optional[Union[str, Path]], columns: Sequence[str] = (),
                 header: Optional[Dict[str, object]] = None):
        self.path = Path(path) if path is not None else None
        self.columns: List[str] = list(columns)
        self.header = dict(header or {})
        self.rows: List[Dict[str, object]] = []

    def append(self, row: Dict[str, object]) -> None:
        for key in row:
            if key not in self.columns:
                self.columns.append(key)
        self.rows.append(dict(row))

    def extend(self, rows: Iterable[Dict[str, object]]) -> None:
        for row in rows:
            self.append(row)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=self.columns)

    def flush(self) -> Optional[Path]:
        """整体重写 CSV (先写临时文件再替换)"""
        if self.path is None:
            return None
        tmp = self.path.with_suffix(self.path.suffix + '.tmp')
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(tmp, 'w', encoding='utf-8', newline='') as f:
                for key, value in self.header.items():
                    f.write(f"# {key}={value}\n")
                self.to_frame().to_csv(f, index=False)
            os.replace(tmp, self.path)
        except OSError as e:
            raise DatasetIOError(self.path, f"写入指标失败: {e}") from e
        return self.path


def read_metrics(path: Union[str, Path]) -> pd.DataFrame:
    """读取 MetricsWriter 写出的 CSV"""
    try:
        return pd.read_csv(path, comment='#')
    except OSError as e:
        raise DatasetIOError(path, f"读取指标失败: {e}") from e


def read_metrics_header(path: Union[str, Path]) -> Dict[str, str]:
    """读取 CSV 头部的注释参数"""
    header = {}
    try:
        with open(path, encoding='utf-8') as f:
            for line in f:
                if not line.startswith('# '):
                    break
                key, _, value = line[2:].rstrip('\n').partition('=')
                header[key] = value
    except OSError as e:
        raise DatasetIOError(path, f"读取指标失败: {e}") from e
    return header
