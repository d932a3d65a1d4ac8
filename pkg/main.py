#!/usr/bin/env python3
"""
TrajVision - FastAPI 后端服务
只读接口: 配置预设、分离度、序列编码、策略评估 (不做训练)

文件路径均相对于 TRAJVISION_OUTPUT_DIR 解析，且不能跳出该目录。
"""

from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel, Field
from typing import Literal, Optional, Tuple
from datetime import datetime
from pathlib import Path
import numpy as np
import uvicorn
import os

# 导入内部模块
import sys
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from core import __version__
from core.align import separation_score
from core.checkpoint import load_checkpoint
from core.config import RunConfig, build_config, default_output_dir
from core.env import load_dataset
from core.errors import TrajVisionError
from core.interact import evaluate_agent, expert_policy, random_policy
from core.nets import AgentNets, EncoderBundle

app = FastAPI(
    title="TrajVision API",
    description="基于视频的模仿学习: 轨迹编码与评估接口",
    version=__version__
)

# CORS配置
app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

# ============ 数据模型 ============

class SeparationRequest(BaseModel):
    """分离度请求"""
    encoder: str
    expert: str
    random: str
    limit: int = Field(200, ge=2, description="每组最多使用的轨迹数")

class EmbeddingRequest(BaseModel):
    """序列编码请求"""
    encoder: str
    dataset: str
    limit: int = Field(50, ge=1)

class EvaluateRequest(BaseModel):
    """评估请求"""
    policy: Literal['agent', 'expert', 'random'] = 'agent'
    agent: Optional[str] = None
    env_id: Optional[Literal['point_reach', 'point_push']] = None
    episodes: int = Field(20, ge=1, le=200)
    seed: int = 10_000

# ============ 工具 ============

def resolve_path(relative: str) -> Path:
    """把请求中的路径解析到输出目录下，文件不存在时返回 404"""
    root = default_output_dir().resolve()
    path = (root / relative).resolve()
    if root != path and root not in path.parents:
        raise HTTPException(status_code=400, detail="路径超出输出目录")
    if not path.is_file():
        raise HTTPException(status_code=404, detail=f"文件不存在: {relative}")
    return path

def checkpoint_config(path: Path) -> RunConfig:
    """检查点中保存的运行配置"""
    _, metadata = load_checkpoint(path)
    saved = metadata.get('config', {})
    return build_config(saved.get('profile', 'desk'), saved)

def load_encoder(path: Path) -> EncoderBundle:
    bundle = EncoderBundle(checkpoint_config(path))
    bundle.load(path)
    return bundle

def load_agent(path: Path) -> Tuple[AgentNets, RunConfig]:
    config = checkpoint_config(path)
    agent = AgentNets(config)
    agent.load(path)
    return agent, config

def run_safely(fn):
    """TrajVisionError → 400，其余异常 → 500"""
    try:
        return fn()
    except HTTPException:
        raise
    except TrajVisionError as e:
        raise HTTPException(status_code=400, detail=str(e))
    except Exception as e:
        raise HTTPException(status_code=500, detail=str(e))

# ============ API 端点 ============

@app.get("/")
async def root():
    """根路径"""
    return {
        "name": "TrajVision API",
        "version": __version__,
        "status": "running",
        "docs": "/docs"
    }

@app.get("/api/health")
async def health_check():
    """健康检查"""
    return {"status": "healthy", "timestamp": datetime.now().isoformat()}

@app.get("/api/config/{profile}")
async def get_config(profile: str):
    """预设配置 (desk / full)"""
    config = run_safely(lambda: build_config(profile))
    return {"success": True, "data": config.model_dump(mode='json')}

# ============ 编码接口 ============

@app.post("/api/separation")
def compute_separation(request: SeparationRequest):
    """专家 / 随机轨迹的序列编码分离度 (AUC)"""
    encoder_path = resolve_path(request.encoder)
    expert_path = resolve_path(request.expert)
    random_path = resolve_path(request.random)

    def _run():
        bundle = load_encoder(encoder_path)
        expert = load_dataset(expert_path)
        random = load_dataset(random_path)
        auc = separation_score(bundle, np.asarray(expert.frames[:request.limit]),
                               np.asarray(random.frames[:request.limit]))
        return {"auc": auc, "expert_count": min(len(expert), request.limit),
                "random_count": min(len(random), request.limit)}

    return {"success": True, "data": run_safely(_run)}

@app.post("/api/embeddings")
def compute_embeddings(request: EmbeddingRequest):
    """每条轨迹的序列编码 z"""
    encoder_path = resolve_path(request.encoder)
    dataset_path = resolve_path(request.dataset)

    def _run():
        bundle = load_encoder(encoder_path)
        dataset = load_dataset(dataset_path)
        z = bundle.embed_trajectories(np.asarray(dataset.frames[:request.limit]))
        return [{"label": dataset.policy, "z": vector.astype(float).tolist()} for vector in z]

    data = run_safely(_run)
    return {"success": True, "data": data, "count": len(data)}

# ============ 评估接口 ============

@app.post("/api/evaluate")
def evaluate(request: EvaluateRequest):
    """策略评估: 绝对回报 (均值 ± 标准差) 与缩放回报"""
    if request.policy == 'agent' and not request.agent:
        raise HTTPException(status_code=400, detail="评估智能体需要提供 agent 检查点")
    agent_path = resolve_path(request.agent) if request.policy == 'agent' else None

    def _run():
        if agent_path is not None:
            policy, config = load_agent(agent_path)
        else:
            policy = expert_policy if request.policy == 'expert' else random_policy
            config = build_config('desk')
        env = config.env if request.env_id is None else config.env.model_copy(update={'env_id': request.env_id})
        report = evaluate_agent(policy, env, request.episodes, request.seed)
        return report.to_frame().to_dict('records')

    return {"success": True, "data": run_safely(_run)}

# ============ 启动 ============

if __name__ == "__main__":
    port = int(os.environ.get("PORT", 8000))
    uvicorn.run(app, host="0.0.0.0", port=port)
