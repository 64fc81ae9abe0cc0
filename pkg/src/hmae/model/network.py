"""Transformer encoder-decoder over Hamiltonian token sequences."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from ..tokenizer import TokenizerConfig, tokenize
from .config import ModelConfig


@dataclass
class Batch:
    tokens: torch.Tensor  # (B, K, D) original tokens, also the reconstruction target
    valid: torch.Tensor  # (B, K) bool
    masked: torch.Tensor  # (B, K) bool
    energy: torch.Tensor  # (B,) energy per qubit
    xi: torch.Tensor  # (B,) correlation length per qubit

    @property
    def magnitudes(self) -> torch.Tensor:
        return self.tokens[..., 0]

    def to(self, dtype) -> "Batch":
        return Batch(self.tokens.to(dtype), self.valid, self.masked, self.energy.to(dtype), self.xi.to(dtype))


def collate(token_arrays, plans=None, energy=None, xi=None, dtype=torch.float32) -> Batch:
    """Pad per-Hamiltonian token arrays into a batch; ``plans`` give masked positions."""
    B = len(token_arrays)
    K = max(len(t) for t in token_arrays)
    D = token_arrays[0].shape[1]
    tokens = np.zeros((B, K, D))
    valid = np.zeros((B, K), dtype=bool)
    masked = np.zeros((B, K), dtype=bool)
    for b, t in enumerate(token_arrays):
        tokens[b, :len(t)] = t
        valid[b, :len(t)] = True
        if plans is not None and plans[b] is not None:
            masked[b, list(plans[b].masked)] = True
    zeros = np.zeros(B)
    return Batch(
        torch.as_tensor(tokens, dtype=dtype),
        torch.as_tensor(valid),
        torch.as_tensor(masked),
        torch.as_tensor(zeros if energy is None else np.asarray(energy, float), dtype=dtype),
        torch.as_tensor(zeros if xi is None else np.asarray(xi, float), dtype=dtype),
    )


class SelfAttention(nn.Module):
    def __init__(self, d_model: int, n_heads: int, dropout: float):
        super().__init__()
        self.n_heads = n_heads
        self.qkv = nn.Linear(d_model, 3 * d_model)
        self.out = nn.Linear(d_model, d_model)
        self.drop = nn.Dropout(dropout)
        self.last_weights: torch.Tensor | None = None

    def forward(self, x: torch.Tensor, valid: torch.Tensor) -> torch.Tensor:
        B, K, d = x.shape
        h = self.n_heads
        q, k, v = self.qkv(x).view(B, K, 3, h, d // h).permute(2, 0, 3, 1, 4)
        scores = q @ k.transpose(-2, -1) / math.sqrt(d // h)
        scores = scores.masked_fill(~valid[:, None, None, :], float("-inf"))
        att = torch.softmax(scores, dim=-1)
        self.last_weights = att.detach()
        y = self.drop(att) @ v
        return self.out(y.transpose(1, 2).reshape(B, K, d))


class Block(nn.Module):
    """Pre-norm self-attention + ReLU feed-forward."""

    def __init__(self, d_model: int, n_heads: int, dropout: float, ffn_mult: int = 4):
        super().__init__()
        self.norm1 = nn.LayerNorm(d_model)
        self.attn = SelfAttention(d_model, n_heads, dropout)
        self.norm2 = nn.LayerNorm(d_model)
        self.ffn = nn.Sequential(
            nn.Linear(d_model, ffn_mult * d_model), nn.ReLU(), nn.Linear(ffn_mult * d_model, d_model)
        )
        self.drop = nn.Dropout(dropout)

    def forward(self, x, valid):
        x = x + self.drop(self.attn(self.norm1(x), valid))
        return x + self.drop(self.ffn(self.norm2(x)))


class HMAENetwork(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.d_model
        self.token_proj = nn.Linear(cfg.token_dim, d)
        self.mask_embedding = nn.Parameter(torch.randn(d) * 0.02)
        self.index_embedding = nn.Embedding(cfg.max_seq_len, d)
        self.site_embedding = nn.Parameter(torch.randn(cfg.n_sites, d) * 0.02)
        nn.init.normal_(self.index_embedding.weight, std=0.02)
        self.encoder = nn.ModuleList(
            Block(d, cfg.n_heads, cfg.dropout, cfg.ffn_mult) for _ in range(cfg.n_layers)
        )
        self.encoder_norm = nn.LayerNorm(d) if cfg.n_layers else nn.Identity()
        self.decoder = nn.ModuleList(
            Block(d, cfg.n_heads, cfg.dropout, cfg.ffn_mult) for _ in range(cfg.decoder_layers)
        )
        self.decoder_norm = nn.LayerNorm(d) if cfg.decoder_layers else nn.Identity()
        self.reconstruct = nn.Linear(d, cfg.token_dim)
        self.energy_head = nn.Linear(d, 1)
        self.corr_head = nn.Linear(d, 1)

    # the site bitmap sits at the tail of each token
    def _sites(self, tokens: torch.Tensor) -> torch.Tensor:
        return tokens[..., -self.cfg.n_sites:]

    def positional(self, tokens: torch.Tensor) -> torch.Tensor:
        K = tokens.shape[1]
        if K > self.cfg.max_seq_len:
            raise ValueError(f"sequence length {K} exceeds max_seq_len {self.cfg.max_seq_len}")
        idx = self.index_embedding(torch.arange(K, device=tokens.device))
        return idx[None] + self._sites(tokens) @ self.site_embedding

    def embed(self, tokens: torch.Tensor, masked: torch.Tensor | None = None) -> torch.Tensor:
        x = self.token_proj(tokens)
        if masked is not None and masked.any():
            x = torch.where(masked[..., None], self.mask_embedding.expand_as(x), x)
        return x + self.positional(tokens)

    def encode(self, x: torch.Tensor, valid: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        for block in self.encoder:
            x = block(x, valid)
        latent = self.encoder_norm(x)
        w = valid.to(latent.dtype)[..., None]
        z = (latent * w).sum(1) / w.sum(1).clamp_min(1.0)
        return latent, z

    def decode_reconstruct(self, latent: torch.Tensor, valid: torch.Tensor) -> torch.Tensor:
        x = latent
        for block in self.decoder:
            x = block(x, valid)
        return self.reconstruct(self.decoder_norm(x))

    def forward(self, batch: Batch) -> dict[str, torch.Tensor]:
        x = self.embed(batch.tokens, batch.masked)
        latent, z = self.encode(x, batch.valid)
        return {
            "latent": latent,
            "z": z,
            "reconstruction": self.decode_reconstruct(latent, batch.valid),
            "energy": self.energy_head(z).squeeze(-1),
            "xi": self.corr_head(z).squeeze(-1),
        }

    @torch.no_grad()
    def pooled_embeddings(self, token_arrays, batch_size: int = 256) -> np.ndarray:
        """Mean-pooled encoder output for unmasked sequences (eval mode)."""
        was_training = self.training
        self.eval()
        dtype = next(self.parameters()).dtype
        out = []
        for start in range(0, len(token_arrays), batch_size):
            batch = collate(token_arrays[start:start + batch_size], dtype=dtype)
            x = self.embed(batch.tokens)
            out.append(self.encode(x, batch.valid)[1].cpu().numpy())
        self.train(was_training)
        return np.concatenate(out).astype(np.float64) if out else np.zeros((0, self.cfg.d_model))


def tokenize_all(hamiltonians, tok_cfg: TokenizerConfig) -> list[np.ndarray]:
    return [tokenize(H, tok_cfg).tokens for H in hamiltonians]
