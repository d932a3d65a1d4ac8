#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
TrajVision 命令行入口

子命令:
    generate           生成专家 / 随机策略数据集
    align              对齐阶段，输出编码函数检查点、损失 CSV 与分离度报告
    train              交互阶段 (--no-alignment / --n-train 消融)
    eval               评估智能体、专家或随机策略的 (缩放) 回报
    export-embeddings  导出每条轨迹的序列编码 z
    config init        写出完整默认配置

退出码: 0 成功，1 运行时 / 文件错误，2 参数或配置错误

示例:
    python cli.py generate --env point_reach --policy expert --n 200 --t 40 --seed 7
    python cli.py align --expert outputs/point_reach_expert.tvds --random outputs/point_reach_random.tvds
"""

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from core.align import run_alignment
from core.checkpoint import load_checkpoint
from core.config import (RunConfig, build_config, deep_merge, default_output_dir, load_config,
                         save_config)
from core.env import ENV_IDS, TrajectoryDataset, generate_dataset, load_dataset
from core.errors import ConfigError, ContractError, DatasetIOError, ParameterError, TrajVisionError
from core.interact import (EvaluationReport, evaluate_agent, expert_policy, random_policy,
                           reward_trace, run_interactive)
from core.metrics import MetricsWriter, setup_logging
from core.nets import AgentNets, EncoderBundle

logger = logging.getLogger('trajvision.cli')

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2
LOCK_NAME = '.trajvision.lock'


# ==================== 工具 ====================

def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"必须 ≥ 1，实际 {value}")
    return value


def _non_negative_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"必须 ≥ 0，实际 {value}")
    return value


def _fraction(text: str) -> float:
    value = float(text)
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"必须在 [0, 1] 内，实际 {value}")
    return value


class OutputLock:
    """
    输出目录锁 (单写者)

    用法:
        with OutputLock(out_dir):
            ...
    """

    def __init__(self, directory: Path):
        self.path = Path(directory) / LOCK_NAME
        self._fd: Optional[int] = None

    def __enter__(self) -> 'OutputLock':
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError as e:
            raise ContractError(f"输出目录被另一个命令占用: {self.path} (确认无运行中的命令后可删除该文件)") from e
        except OSError as e:
            raise DatasetIOError(self.path, f"无法创建锁文件: {e}") from e
        os.write(self._fd, str(os.getpid()).encode('ascii'))
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        if self._fd is not None:
            os.close(self._fd)
            self.path.unlink(missing_ok=True)


def _progress(args) -> bool:
    return not args.quiet and sys.stderr.isatty()


def _resolve_config(args, base: Optional[RunConfig] = None, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """
    配置优先级: 命令行覆盖项 > --config 文件 > 检查点中保存的配置 > 预设
    """
    if getattr(args, 'config', None):
        config = load_config(args.config, getattr(args, 'profile', None))
    elif base is not None:
        config = base
    else:
        config = build_config(getattr(args, 'profile', None) or 'desk')
    merged = config.model_dump()
    if getattr(args, 'seed', None) is not None:
        merged['seed'] = args.seed
    return build_config(config.profile, deep_merge(merged, overrides or {}))


def _override(config: RunConfig, overrides: Dict[str, Any]) -> RunConfig:
    return build_config(config.profile, deep_merge(config.model_dump(), overrides))


def _env_overrides(dataset: TrajectoryDataset) -> Dict[str, Any]:
    return {'env': {'env_id': dataset.env_id, 'frame_size': dataset.frame_size,
                    'episode_length': dataset.episode_length}}


def _config_from_checkpoint(path: Path) -> RunConfig:
    _, metadata = load_checkpoint(path)
    if 'config' not in metadata:
        raise ConfigError(f"{path}: 检查点中没有保存配置")
    return build_config(metadata['config'].get('profile', 'desk'), metadata['config'])


def _checkpoint_metadata(kind: str, config: RunConfig, **extra) -> dict:
    return {'kind': kind, 'config': config.model_dump(mode='json'), **extra}


# ==================== 子命令 ====================

def cmd_generate(args) -> int:
    out = Path(args.out) if args.out else Path(args.output_dir) / f"{args.env}_{args.policy}.tvds"
    config = _resolve_config(args)
    with OutputLock(out.parent):
        dataset = generate_dataset(args.env, args.policy, args.n, args.t, args.seed,
                                   frame_size=args.frame_size, config=config.env,
                                   path=out, progress=_progress(args))
    summary = dataset.summary()
    print(f"✅ 数据集已保存: {out}")
    print(f"   环境: {summary['env_id']} | 策略: {summary['policy']} | N={summary['trajectories']} "
          f"| T={summary['episode_length']} | {summary['frame_size']}x{summary['frame_size']}")
    if 'mean_return' in summary:
        print(f"   真实回报: {summary['mean_return']:.2f} ± {summary['std_return']:.2f}")
    return EXIT_OK


def cmd_align(args) -> int:
    expert = load_dataset(args.expert)
    random = load_dataset(args.random) if args.random else None
    overrides = _env_overrides(expert)
    align: Dict[str, Any] = {}
    if args.n_pretrain is not None:
        align['n_pretrain'] = args.n_pretrain
    if args.random_source:
        align['random_source'] = args.random_source
    overrides['align'] = align
    config = _resolve_config(args, overrides=overrides)

    out_dir = Path(args.output_dir)
    checkpoint = Path(args.out) if args.out else out_dir / 'encoder.tvck'
    metrics = Path(args.metrics) if args.metrics else out_dir / 'align_metrics.csv'
    report_path = Path(args.report) if args.report else out_dir / 'align_report.json'

    with OutputLock(checkpoint.parent):
        result = run_alignment(expert, random, config, metrics_path=metrics, progress=_progress(args))
        result.bundle.save(checkpoint, _checkpoint_metadata('encoder', config, phase='align',
                                                            epochs=config.align.n_pretrain))
        report = {'checkpoint': str(checkpoint), 'metrics': str(metrics), **result.summary()}
        report_path.parent.mkdir(parents=True, exist_ok=True)
        with open(report_path, 'w', encoding='utf-8') as f:
            json.dump(report, f, ensure_ascii=False, indent=2)

    print(f"✅ 编码函数检查点: {checkpoint}")
    if result.auc_after is not None:
        print(f"📊 留出集分离度 AUC: {result.auc_before:.3f} -> {result.auc_after:.3f}")
    else:
        print("⚠️ 留出集不足，未计算分离度")
    return EXIT_OK


def cmd_train(args) -> int:
    if not args.no_alignment and not args.encoder:
        raise ParameterError("需要 --encoder 检查点，或使用 --no-alignment 从未训练的编码函数开始")
    expert = load_dataset(args.expert)
    base = _config_from_checkpoint(Path(args.encoder)) if args.encoder and not args.no_alignment else None

    config = _resolve_config(args, base=base, overrides=_env_overrides(expert))
    interact = config.interact.model_dump()
    if args.n_pi is not None:
        interact['n_pi'] = args.n_pi
        interact['n_train'] = min(interact['n_train'], args.n_pi)
    if args.n_train is not None:
        interact['n_train'] = args.n_train
    elif args.n_train_fraction is not None:
        interact['n_train'] = int(round(args.n_train_fraction * interact['n_pi']))
    config = _override(config, {'interact': interact})
    n_pi = config.interact.n_pi

    bundle = EncoderBundle(config)
    if not args.no_alignment:
        bundle.load(args.encoder)

    out_dir = Path(args.output_dir)
    agent_path = Path(args.out) if args.out else out_dir / 'agent.tvck'
    encoder_path = Path(args.encoder_out) if args.encoder_out else out_dir / 'encoder_finetuned.tvck'
    metrics = Path(args.metrics) if args.metrics else out_dir / 'train_metrics.csv'
    header = {'no_alignment': args.no_alignment, 'n_train': config.interact.n_train, 'n_pi': n_pi}

    with OutputLock(agent_path.parent):
        result = run_interactive(bundle, expert, config, metrics_path=metrics,
                                 checkpoint_dir=out_dir, progress=_progress(args), header=header)
        meta = _checkpoint_metadata('agent', config, phase='interact', **header)
        result.agent.save(agent_path, meta)
        result.bundle.save(encoder_path, _checkpoint_metadata('encoder', config, phase='interact'))
        evaluations = MetricsWriter(out_dir / 'train_evals.csv', columns=['step', 'mean_return', 'scaled_return'],
                                    header=header)
        evaluations.extend(result.evaluations)
        evaluations.flush()

    print(f"✅ 智能体检查点: {agent_path}")
    print(f"   编码函数检查点: {encoder_path} | 指标: {metrics}")
    if result.evaluations:
        last = result.evaluations[-1]
        print(f"📊 最近一次评估 (step {last['step']}): 缩放回报 {last['scaled_return']:.3f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    if args.policy == 'agent':
        if not args.agent:
            raise ParameterError("评估智能体需要 --agent 检查点")
        config = _resolve_config(args, base=_config_from_checkpoint(Path(args.agent)))
        agent = AgentNets(config)
        agent.load(args.agent)
        policy = agent
    else:
        config = _resolve_config(args)
        policy = expert_policy if args.policy == 'expert' else random_policy
    if args.env:
        config = _override(config, {'env': {'env_id': args.env}})

    episodes = args.episodes or config.eval.episodes
    seed = config.eval.seed if args.eval_seed is None else args.eval_seed
    report: EvaluationReport = evaluate_agent(policy, config.env, episodes, seed)

    out = Path(args.out) if args.out else Path(args.output_dir) / 'eval.csv'
    trace = None
    if args.reward_trace:
        if not (args.encoder and args.expert):
            raise ParameterError("--reward-trace 需要 --encoder 与 --expert")
        bundle = EncoderBundle(config)
        bundle.load(args.encoder)
        reference = np.asarray(load_dataset(args.expert).frames[0])
        trace = reward_trace(bundle, policy, reference, config.env, seed)

    with OutputLock(out.parent):
        writer = MetricsWriter(out, header={'evaluated': args.policy, 'env_id': config.env.env_id,
                                            'episodes': episodes, 'seed': seed})
        writer.extend(report.to_frame().to_dict('records'))
        writer.flush()
        if trace is not None:
            trace_writer = MetricsWriter(args.reward_trace, columns=list(trace.columns))
            trace_writer.extend(trace.to_dict('records'))
            trace_writer.flush()

    table = report.to_frame().set_index('policy')
    subject = table.loc['agent']
    print(f"📊 评估 {args.policy} ({episodes} 回合, seed={seed})")
    print(f"   绝对回报: {subject['mean_return']:.2f} ± {subject['std_return']:.2f}")
    print(f"   缩放回报: {subject['scaled_mean']:.2f} ± {subject['scaled_std']:.2f}")
    print(f"   专家: {table.loc['expert', 'mean_return']:.2f} | 随机: {table.loc['random', 'mean_return']:.2f}")
    print(f"✅ 评估报告已保存: {out}")
    return EXIT_OK


def cmd_export_embeddings(args) -> int:
    config = _resolve_config(args, base=_config_from_checkpoint(Path(args.encoder)))
    bundle = EncoderBundle(config)
    bundle.load(args.encoder)
    rows: List[Dict[str, Any]] = []
    columns = ['label'] + [f"z_{i}" for i in range(bundle.embed_dim)]
    for path in args.dataset:
        dataset = load_dataset(path)
        z = bundle.embed_trajectories(dataset.frames)
        for vector in z:
            rows.append(dict(zip(columns, [dataset.policy, *vector.astype(float).tolist()])))

    out = Path(args.out) if args.out else Path(args.output_dir) / 'embeddings.csv'
    with OutputLock(out.parent):
        writer = MetricsWriter(out, columns=columns)
        writer.extend(rows)
        writer.flush()
    print(f"✅ 已导出 {len(rows)} 条序列编码 ({bundle.embed_dim} 维): {out}")
    return EXIT_OK


def cmd_config_init(args) -> int:
    config = build_config(args.profile)
    out = Path(args.out) if args.out else Path(args.output_dir) / f"config_{args.profile}.json"
    save_config(config, out)
    print(f"✅ 默认配置已写出: {out}")
    return EXIT_OK


# ==================== 参数解析 ====================

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='trajvision', description='TrajVision 视频模仿学习')
    parser.add_argument('--output-dir', default=str(default_output_dir()), help='默认输出目录 (TRAJVISION_OUTPUT_DIR)')
    parser.add_argument('--log-level', default=None, help='日志级别 (TRAJVISION_LOG_LEVEL)')
    parser.add_argument('--quiet', action='store_true', help='关闭进度条')
    sub = parser.add_subparsers(dest='command', required=True)

    def with_config(p: argparse.ArgumentParser) -> None:
        p.add_argument('--config', help='JSON 配置文件')
        p.add_argument('--profile', choices=['desk', 'full'], default=None)
        p.add_argument('--seed', type=int, default=None)

    p = sub.add_parser('generate', help='生成数据集')
    p.add_argument('--env', choices=ENV_IDS, default='point_reach')
    p.add_argument('--policy', choices=['expert', 'random'], required=True)
    p.add_argument('--n', type=_positive_int, required=True, help='轨迹数 N')
    p.add_argument('--t', type=_positive_int, required=True, help='每条轨迹步数 T (≥ 2)')
    p.add_argument('--frame-size', type=_positive_int, default=32)
    p.add_argument('--out', help='数据集文件路径')
    with_config(p)
    p.set_defaults(func=cmd_generate, seed=0)

    p = sub.add_parser('align', help='对齐阶段')
    p.add_argument('--expert', required=True, help='专家数据集')
    p.add_argument('--random', help='随机策略数据集')
    p.add_argument('--random-source', choices=['dataset', 'rollout'], default=None)
    p.add_argument('--n-pretrain', type=_non_negative_int, default=None)
    p.add_argument('--out', help='编码函数检查点')
    p.add_argument('--metrics', help='逐 epoch 损失 CSV')
    p.add_argument('--report', help='分离度报告 JSON')
    with_config(p)
    p.set_defaults(func=cmd_align)

    p = sub.add_parser('train', help='交互阶段')
    p.add_argument('--expert', required=True, help='专家数据集')
    p.add_argument('--encoder', help='对齐后的编码函数检查点')
    p.add_argument('--no-alignment', action='store_true', help='从未训练的编码函数开始')
    group = p.add_mutually_exclusive_group()
    group.add_argument('--n-train', type=_non_negative_int, default=None, help='编码器训练截止步数')
    group.add_argument('--n-train-fraction', type=_fraction, default=None, help='n_train 占 n_pi 的比例')
    p.add_argument('--n-pi', type=_non_negative_int, default=None)
    p.add_argument('--out', help='智能体检查点')
    p.add_argument('--encoder-out', help='微调后的编码函数检查点')
    p.add_argument('--metrics', help='逐回合指标 CSV')
    with_config(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser('eval', help='评估')
    p.add_argument('--policy', choices=['agent', 'expert', 'random'], default='agent')
    p.add_argument('--agent', help='智能体检查点')
    p.add_argument('--env', choices=ENV_IDS, default=None)
    p.add_argument('--episodes', type=_positive_int, default=None)
    p.add_argument('--eval-seed', type=int, default=None)
    p.add_argument('--out', help='评估报告 CSV')
    p.add_argument('--reward-trace', help='逐步学习奖励 CSV')
    p.add_argument('--encoder', help='计算学习奖励用的编码函数检查点')
    p.add_argument('--expert', help='提供参考专家轨迹的数据集')
    with_config(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser('export-embeddings', help='导出序列编码')
    p.add_argument('--encoder', required=True)
    p.add_argument('--dataset', required=True, nargs='+')
    p.add_argument('--out', help='输出 CSV')
    with_config(p)
    p.set_defaults(func=cmd_export_embeddings)

    p = sub.add_parser('config', help='配置文件')
    config_sub = p.add_subparsers(dest='config_command', required=True)
    init = config_sub.add_parser('init', help='写出完整默认配置')
    init.add_argument('--profile', choices=['desk', 'full'], default='desk')
    init.add_argument('--out', help='输出 JSON')
    init.set_defaults(func=cmd_config_init)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    setup_logging(args.log_level)
    try:
        return args.func(args)
    except (ConfigError, ParameterError) as e:
        print(f"❌ 参数错误: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (TrajVisionError, OSError) as e:
        print(f"❌ 运行失败: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == '__main__':
    sys.exit(main())
