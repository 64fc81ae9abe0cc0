"""Central finite-difference check of every parameter gradient."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from ..saliency import MaskingPlan
from .config import ModelConfig, TrainConfig
from .network import Batch, HMAENetwork, collate
from .training import loss_pretrain


@dataclass
class TensorCheck:
    name: str
    rel_error: float
    numel: int


def minimal_model_config() -> ModelConfig:
    # every block type: embedding, one encoder block, one decoder block, all heads
    return ModelConfig(token_dim=2 + 3 * 2 + 4, n_sites=4, d_model=16, n_layers=1, n_heads=2,
                       decoder_layers=1, dropout=0.0, max_seq_len=8)


def synthetic_batch(cfg: ModelConfig, seed: int = 0) -> Batch:
    rng = np.random.default_rng(seed)
    arrays, plans = [], []
    for length in (5, 3):
        t = np.zeros((length, cfg.token_dim))
        t[:, 0] = rng.uniform(0.3, 1.5, length)
        t[:, 1] = np.pi * rng.integers(0, 2, length)
        t[:, 2:cfg.token_dim - cfg.n_sites] = rng.integers(0, 2, (length, cfg.token_dim - cfg.n_sites - 2))
        t[:, cfg.token_dim - cfg.n_sites:] = rng.integers(0, 2, (length, cfg.n_sites))
        arrays.append(t)
        masked = tuple(sorted(rng.choice(length, max(1, length // 2), replace=False)))
        plans.append(MaskingPlan(np.full(length, 1.0 / length), masked))
    return collate(arrays, plans, rng.normal(size=2), rng.uniform(0, 1, 2), dtype=torch.float64)


def check_gradients(net: HMAENetwork | None = None, batch: Batch | None = None, step: float = 1e-5,
                    train_cfg: TrainConfig | None = None, seed: int = 0) -> list[TensorCheck]:
    """Relative error ||g_autograd - g_fd|| / max(||g_autograd||, ||g_fd||) per parameter tensor."""
    if net is None:
        torch.manual_seed(seed)
        net = HMAENetwork(minimal_model_config())
    net = net.double().eval()
    if batch is None:
        batch = synthetic_batch(net.cfg, seed)
    batch = batch.to(torch.float64)
    cfg = train_cfg or TrainConfig(lambdas=(0.6, 0.3, 0.1), eps_norm=1e-6)

    def loss_value() -> float:
        with torch.no_grad():
            return loss_pretrain(net, batch, cfg)[0].item()

    net.zero_grad()
    loss_pretrain(net, batch, cfg)[0].backward()
    results = []
    for name, p in net.named_parameters():
        analytic = p.grad.detach().clone().reshape(-1) if p.grad is not None else torch.zeros(p.numel(), dtype=p.dtype)
        numeric = torch.zeros_like(analytic)
        flat = p.data.view(-1)
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + step
            up = loss_value()
            flat[i] = orig - step
            down = loss_value()
            flat[i] = orig
            numeric[i] = (up - down) / (2 * step)
        denom = max(analytic.norm().item(), numeric.norm().item())
        rel = 0.0 if denom == 0 else (analytic - numeric).norm().item() / denom
        results.append(TensorCheck(name, rel, p.numel()))
    return results


def worst(results: list[TensorCheck]) -> TensorCheck:
    return max(results, key=lambda r: r.rel_error)
