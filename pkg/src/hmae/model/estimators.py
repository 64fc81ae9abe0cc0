"""Scikit-learn style entry points: pretrain with ``fit``, embed with ``transform``."""
from __future__ import annotations

from dataclasses import asdict
from typing import Sequence

import numpy as np
import torch
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ..saliency import Kind, SaliencyStrategy
from ..tokenizer import TokenizerConfig, token_dim
from ..validation import check_hamiltonians, check_records
from . import checkpoint as ckpt_io
from .config import ModelConfig, TrainConfig
from .heads import FewShotEnergyRegressor, FewShotPhaseClassifier
from .network import HMAENetwork, tokenize_all
from .training import (PretrainData, PretrainState, build_network, make_optimizer, train_steps)


def strategy_to_dict(strategy: SaliencyStrategy) -> dict:
    d = asdict(strategy)
    d["kind"] = strategy.kind.value
    if d["weights"] is not None:
        d["weights"] = list(d["weights"])
    return d


def strategy_from_dict(d: dict) -> SaliencyStrategy:
    d = dict(d)
    if d.get("weights") is not None:
        d["weights"] = tuple(d["weights"])
    return SaliencyStrategy(**d)


def checkpoint_config(model_cfg: ModelConfig, train_cfg: TrainConfig, tok_cfg: TokenizerConfig,
                      strategy: SaliencyStrategy, step: int) -> dict:
    return {
        "model": model_cfg.to_dict(),
        "train": train_cfg.to_dict(),
        "tokenizer": {"n_qubits": tok_cfg.n_qubits, "max_locality": tok_cfg.max_locality},
        "strategy": strategy_to_dict(strategy),
        "seed": train_cfg.seed,
        "step": step,
    }


class HMAEEncoder(TransformerMixin, BaseEstimator):
    """Frozen encoder: maps Hamiltonians (or records) to mean-pooled embeddings z.

    Built from a checkpoint, a checkpoint path, or a freshly initialized
    network (the scratch baseline) via ``from_network``.
    """

    def __init__(self, checkpoint=None):
        self.checkpoint = checkpoint

    def fit(self, X=None, y=None):
        ckpt = self.checkpoint
        if ckpt is None:
            raise ValueError("HMAEEncoder needs a checkpoint")
        if not isinstance(ckpt, ckpt_io.ModelCheckpoint):
            ckpt = ckpt_io.load(ckpt)
        tok = ckpt.config["tokenizer"]
        self.tokenizer_config_ = TokenizerConfig(tok["n_qubits"], tok["max_locality"])
        self.network_ = ckpt.network().eval()
        return self

    @classmethod
    def from_network(cls, net: HMAENetwork, tok_cfg: TokenizerConfig) -> "HMAEEncoder":
        enc = cls(checkpoint=None)
        enc.tokenizer_config_ = tok_cfg
        enc.network_ = net.eval()
        return enc

    @classmethod
    def scratch(cls, model_cfg: ModelConfig, tok_cfg: TokenizerConfig, seed: int = 0) -> "HMAEEncoder":
        return cls.from_network(build_network(model_cfg, seed), tok_cfg)

    def transform(self, X) -> np.ndarray:
        if not hasattr(self, "network_"):
            self.fit()
        hams = check_hamiltonians(X)
        return self.network_.pooled_embeddings(tokenize_all(hams, self.tokenizer_config_))


class HMAEPretrainer(TransformerMixin, BaseEstimator):
    """Pre-train the masked autoencoder on a labeled corpus.

    ``fit`` takes dataset records (Hamiltonian plus energy / correlation-length
    labels); ``transform`` returns pooled embeddings of the trained encoder.
    """

    def __init__(self, strategy="enhanced", alpha_temperature=2.0, mask_ratio=0.5, alpha_mix=0.65,
                 d_model=64, n_layers=2, n_heads=4, decoder_layers=2, dropout=0.1, max_seq_len=128,
                 n_qubits=None, max_locality=4, lr=1e-4, batch_size=64, weight_decay=1e-5, grad_clip=1.0,
                 warmup_fraction=0.05, total_steps=1000, lambdas=(0.6, 0.3, 0.1), eps_norm=1e-6,
                 normalized_loss=True, random_state=0):
        self.strategy = strategy
        self.alpha_temperature = alpha_temperature
        self.mask_ratio = mask_ratio
        self.alpha_mix = alpha_mix
        self.d_model = d_model
        self.n_layers = n_layers
        self.n_heads = n_heads
        self.decoder_layers = decoder_layers
        self.dropout = dropout
        self.max_seq_len = max_seq_len
        self.n_qubits = n_qubits
        self.max_locality = max_locality
        self.lr = lr
        self.batch_size = batch_size
        self.weight_decay = weight_decay
        self.grad_clip = grad_clip
        self.warmup_fraction = warmup_fraction
        self.total_steps = total_steps
        self.lambdas = lambdas
        self.eps_norm = eps_norm
        self.normalized_loss = normalized_loss
        self.random_state = random_state

    def _configs(self, records):
        n = self.n_qubits or max(r.n_qubits for r in records)
        tok = TokenizerConfig(int(n), int(self.max_locality))
        model = ModelConfig(token_dim(tok), tok.n_qubits, self.d_model, self.n_layers, self.n_heads,
                            self.decoder_layers, self.dropout, self.max_seq_len)
        train = TrainConfig(self.lr, self.batch_size, self.weight_decay, self.grad_clip, self.warmup_fraction,
                            self.total_steps, tuple(self.lambdas), self.eps_norm, self.normalized_loss,
                            int(self.random_state or 0))
        if isinstance(self.strategy, SaliencyStrategy):
            strategy = self.strategy
        else:
            strategy = SaliencyStrategy(Kind(self.strategy), self.alpha_temperature, self.mask_ratio,
                                        alpha_mix=self.alpha_mix)
        return tok, model, train, strategy

    def fit(self, X, y=None, n_steps: int | None = None):
        """Train from scratch; ``n_steps`` stops early (the schedule still spans ``total_steps``)."""
        records = check_records(X)
        tok, model, train, strategy = self._configs(records)
        data = PretrainData(records, tok, strategy)
        net = build_network(model, train.seed)
        state = train_steps(PretrainState(net, make_optimizer(net, train)), data, train, n_steps)
        self._set_state(state, tok, model, train, strategy)
        return self

    def _set_state(self, state, tok, model, train, strategy):
        self.state_ = state
        self.network_ = state.net
        self.tokenizer_config_ = tok
        self.metrics_ = state.metrics
        self.checkpoint_ = ckpt_io.ModelCheckpoint.from_training(
            state.net, state.optimizer, checkpoint_config(model, train, tok, strategy, state.step))

    def resume(self, checkpoint: ckpt_io.ModelCheckpoint, X, n_steps: int | None = None):
        """Continue training from ``checkpoint`` on the same corpus."""
        records = check_records(X)
        cfg = checkpoint.config
        tok = TokenizerConfig(cfg["tokenizer"]["n_qubits"], cfg["tokenizer"]["max_locality"])
        model, train = checkpoint.model_config, checkpoint.train_config
        strategy = strategy_from_dict(cfg["strategy"])
        net = checkpoint.network()
        opt = make_optimizer(net, train)
        checkpoint.restore_optimizer(net, opt)
        state = PretrainState(net, opt, step=checkpoint.step)
        state = train_steps(state, PretrainData(records, tok, strategy), train, n_steps)
        self._set_state(state, tok, model, train, strategy)
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "network_")
        return HMAEEncoder.from_network(self.network_, self.tokenizer_config_).transform(X)

    def encoder(self) -> HMAEEncoder:
        check_is_fitted(self, "network_")
        return HMAEEncoder.from_network(self.network_, self.tokenizer_config_)

    def save(self, path) -> None:
        check_is_fitted(self, "checkpoint_")
        ckpt_io.save(self.checkpoint_, path)


def finetune_classifier(encoder: HMAEEncoder, records: Sequence, random_state: int = 0, **head_params):
    """Fit a phase head on K-shot records; returns (head, accuracy_fn(records))."""
    records = check_records(records)
    Z = encoder.transform(records)
    y = np.array([r.phase for r in records])
    head = FewShotPhaseClassifier(random_state=random_state, **head_params).fit(Z, y)

    def accuracy(eval_records) -> float:
        eval_records = check_records(eval_records)
        pred = head.predict(encoder.transform(eval_records))
        return float(np.mean(pred == np.array([r.phase for r in eval_records])))

    return head, accuracy


def finetune_regressor(encoder: HMAEEncoder, records: Sequence, alpha: float = 1e-3):
    """Ridge head on energy per qubit; returns (head, predict_total_energy(records), mae_fn(records))."""
    records = check_records(records)
    Z = encoder.transform(records)
    y = np.array([r.energy / r.n_qubits for r in records])
    head = FewShotEnergyRegressor(alpha=alpha).fit(Z, y)

    def predict(eval_records) -> np.ndarray:
        eval_records = check_records(eval_records)
        n = np.array([r.n_qubits for r in eval_records])
        return head.predict(encoder.transform(eval_records)) * n

    def mae(eval_records) -> float:
        eval_records = check_records(eval_records)
        return float(np.mean(np.abs(predict(eval_records) - np.array([r.energy for r in eval_records]))))

    return head, predict, mae
