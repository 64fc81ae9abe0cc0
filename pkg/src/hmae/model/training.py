"""HMAE multi-task pre-training."""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch

from ..saliency import MaskingPlan, SaliencyStrategy, sample_mask
from ..tokenizer import TokenizerConfig
from .config import ModelConfig, TrainConfig
from .network import Batch, HMAENetwork, collate, tokenize_all

logger = logging.getLogger(__name__)

METRIC_COLUMNS = ("step", "lr", "loss_total", "loss_rec", "loss_energy", "loss_corr")


class NumericalAbort(RuntimeError):
    """Raised on a non-finite loss; ``snapshot`` holds the diagnostic state."""

    def __init__(self, message: str, snapshot: dict):
        super().__init__(message)
        self.snapshot = snapshot


def loss_reconstruction(pred: torch.Tensor, target: torch.Tensor, masked: torch.Tensor,
                        magnitudes: torch.Tensor | None = None, normalized: bool = True,
                        eps_norm: float = 1e-6) -> torch.Tensor:
    """Mean over masked tokens of ||pred - target||^2, optionally divided by (|c| + eps)."""
    err = ((pred - target) ** 2).sum(-1)
    if normalized:
        if magnitudes is None:
            magnitudes = target[..., 0]
        err = err / (magnitudes.abs() + eps_norm)
    m = masked.to(err.dtype)
    count = m.sum()
    if count == 0:
        return err.sum() * 0.0
    return (err * m).sum() / count


def loss_pretrain(net: HMAENetwork, batch: Batch, cfg: TrainConfig) -> tuple[torch.Tensor, dict]:
    out = net(batch)
    rec = loss_reconstruction(out["reconstruction"], batch.tokens, batch.masked & batch.valid,
                              batch.magnitudes, cfg.normalized_loss, cfg.eps_norm)
    energy = torch.mean((out["energy"] - batch.energy) ** 2)
    corr = torch.mean((out["xi"] - batch.xi) ** 2)
    l1, l2, l3 = cfg.lambdas
    total = l1 * rec + l2 * energy + l3 * corr
    return total, {"loss_total": total.item(), "loss_rec": rec.item(),
                   "loss_energy": energy.item(), "loss_corr": corr.item()}


def learning_rate(step: int, cfg: TrainConfig) -> float:
    """Linear warmup from 0, then cosine decay to 0 at ``total_steps``."""
    warm = cfg.warmup_steps
    if step < warm:
        return cfg.lr * step / warm
    span = max(cfg.total_steps - warm, 1)
    progress = min(max(step - warm, 0) / span, 1.0)
    return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def make_optimizer(net: torch.nn.Module, cfg: TrainConfig) -> torch.optim.AdamW:
    return torch.optim.AdamW(net.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)


def optimizer_step(net: torch.nn.Module, optimizer: torch.optim.Optimizer, step: int, cfg: TrainConfig) -> dict:
    """Clip gradients to the global norm, set the scheduled rate, apply AdamW."""
    grad_norm = torch.nn.utils.clip_grad_norm_(net.parameters(), cfg.grad_clip)
    lr = learning_rate(step, cfg)
    for group in optimizer.param_groups:
        group["lr"] = lr
    optimizer.step()
    return {"lr": lr, "grad_norm": float(grad_norm)}


@dataclass
class PretrainState:
    net: HMAENetwork
    optimizer: torch.optim.Optimizer
    step: int = 0
    metrics: list[dict] = field(default_factory=list)


class PretrainData:
    """Tokens, labels and fixed masking distributions for a corpus.

    Masking probabilities depend only on the Hamiltonian, so they are computed
    once; masks themselves are redrawn per epoch from seeds ``(seed, epoch, i)``.
    """

    def __init__(self, records: Sequence, tok_cfg: TokenizerConfig, strategy: SaliencyStrategy):
        self.records = list(records)
        self.tok_cfg = tok_cfg
        self.strategy = strategy
        hams = [r.hamiltonian for r in self.records]
        self.tokens = tokenize_all(hams, tok_cfg)
        self.probs = [strategy.probabilities(H) for H in hams]
        self.energy = np.array([r.energy / r.n_qubits for r in self.records])
        self.xi = np.array([r.xi / r.n_qubits for r in self.records])

    def __len__(self) -> int:
        return len(self.records)

    def batch_indices(self, step: int, batch_size: int, seed: int) -> tuple[int, np.ndarray]:
        n = len(self)
        bs = min(batch_size, n)
        per_epoch = n // bs
        epoch, j = divmod(step, per_epoch)
        perm = np.random.default_rng([seed, epoch]).permutation(n)
        return epoch, perm[j * bs:(j + 1) * bs]

    def batch(self, step: int, cfg: TrainConfig, dtype=torch.float32) -> Batch:
        epoch, idx = self.batch_indices(step, cfg.batch_size, cfg.seed)
        plans = [sample_mask(self.probs[i], self.strategy.mask_ratio, np.random.default_rng([cfg.seed, epoch, int(i)]))
                 for i in idx]
        return collate([self.tokens[i] for i in idx], plans, self.energy[idx], self.xi[idx], dtype=dtype)


def build_network(model_cfg: ModelConfig, seed: int) -> HMAENetwork:
    torch.manual_seed(seed)
    return HMAENetwork(model_cfg)


def train_steps(state: PretrainState, data: PretrainData, cfg: TrainConfig, n_steps: int | None = None) -> PretrainState:
    """Advance ``state`` by ``n_steps`` (default: until ``total_steps``)."""
    end = cfg.total_steps if n_steps is None else min(cfg.total_steps, state.step + n_steps)
    net, opt = state.net, state.optimizer
    net.train()
    while state.step < end:
        step = state.step
        batch = data.batch(step, cfg)
        # dropout stream is a function of (seed, step) so runs can resume exactly
        torch.manual_seed(cfg.seed * 1_000_003 + step)
        opt.zero_grad(set_to_none=True)
        loss, parts = loss_pretrain(net, batch, cfg)
        if not math.isfinite(loss.item()):
            snapshot = {"step": step, **parts,
                        "param_norms": {k: float(v.norm()) for k, v in net.state_dict().items()}}
            raise NumericalAbort(f"non-finite loss at step {step}", snapshot)
        loss.backward()
        info = optimizer_step(net, opt, step, cfg)
        state.metrics.append({"step": step, "lr": info["lr"], **parts})
        state.step += 1
    return state


def pretrain(records: Sequence, strategy: SaliencyStrategy, model_cfg: ModelConfig, cfg: TrainConfig,
             tok_cfg: TokenizerConfig | None = None) -> PretrainState:
    if tok_cfg is None:
        tok_cfg = TokenizerConfig(model_cfg.n_sites, (model_cfg.token_dim - 2 - model_cfg.n_sites) // 3)
    data = PretrainData(records, tok_cfg, strategy)
    net = build_network(model_cfg, cfg.seed)
    state = PretrainState(net, make_optimizer(net, cfg))
    return train_steps(state, data, cfg)


def metrics_csv(metrics: Sequence[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=METRIC_COLUMNS, extrasaction="ignore", lineterminator="\n")
    writer.writeheader()
    for row in metrics:
        writer.writerow({k: repr(float(row[k])) if k != "step" else int(row[k]) for k in METRIC_COLUMNS})
    return buf.getvalue()
