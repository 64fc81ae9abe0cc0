"""Hamiltonian <-> token-sequence conversion.

Token layout: ``[|c|, phi, type (3 * L), sites (n)]`` where the type block holds
one {X, Y, Z} one-hot per slot, slots filled by non-identity Paulis in
ascending site order and zero-padded up to the locality ``L``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .spinops import Hamiltonian, HamiltonianTerm, PauliString
from .validation import check_hamiltonians

_LETTERS = "XYZ"


class TokenizerConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TokenizerConfig:
    n_qubits: int
    max_locality: int = 4

    def __post_init__(self):
        if self.n_qubits < 1 or self.max_locality < 1:
            raise TokenizerConfigError("n_qubits and max_locality must be positive")


def token_dim(cfg: TokenizerConfig) -> int:
    return 2 + 3 * cfg.max_locality + cfg.n_qubits


@dataclass(frozen=True)
class TokenSequence:
    tokens: np.ndarray  # (k, token_dim)
    n_qubits: int

    def __len__(self) -> int:
        return self.tokens.shape[0]

    @property
    def magnitudes(self) -> np.ndarray:
        return self.tokens[:, 0]


def tokenize(H: Hamiltonian, cfg: TokenizerConfig) -> TokenSequence:
    if H.n_qubits > cfg.n_qubits:
        raise TokenizerConfigError(
            f"Hamiltonian on {H.n_qubits} qubits exceeds tokenizer width {cfg.n_qubits}"
        )
    L = cfg.max_locality
    out = np.zeros((len(H), token_dim(cfg)))
    for row, term in zip(out, H.terms):
        ops = term.pauli.ops
        active = [(s, p) for s, p in enumerate(ops) if p != "I"]
        if len(active) > L:
            raise TokenizerConfigError(
                f"term {ops} has locality {len(active)} > max_locality {L}"
            )
        row[0] = abs(term.coeff)
        row[1] = np.angle(term.coeff)
        for slot, (site, p) in enumerate(active):
            row[2 + 3 * slot + _LETTERS.index(p)] = 1.0
            row[2 + 3 * L + site] = 1.0
    return TokenSequence(out, H.n_qubits)


def detokenize(seq: TokenSequence, cfg: TokenizerConfig) -> Hamiltonian:
    L = cfg.max_locality
    n = seq.n_qubits
    tokens = np.asarray(seq.tokens)
    if tokens.ndim != 2 or tokens.shape[1] != token_dim(cfg):
        raise ValueError(f"token array shape {tokens.shape} does not match token_dim {token_dim(cfg)}")
    terms = []
    for i, row in enumerate(tokens):
        mag, phi = row[0], row[1]
        if mag == 0.0:
            continue
        types = row[2:2 + 3 * L].reshape(L, 3)
        sites = np.flatnonzero(row[2 + 3 * L:] > 0.5)
        filled = [s for s in range(L) if types[s].any()]
        if filled != list(range(len(filled))) or np.any(types[filled].sum(axis=1) != 1):
            raise ValueError(f"token {i}: malformed type block")
        if len(filled) != len(sites) or (len(sites) and sites[-1] >= n):
            raise ValueError(f"token {i}: sites popcount {len(sites)} != type slots {len(filled)}")
        pauli = PauliString.from_sites(
            n, {int(site): _LETTERS[int(np.argmax(types[s]))] for s, site in zip(filled, sites)}
        )
        c = mag * np.exp(1j * phi)
        # spin corpora only carry phi in {0, pi}; keep the real branch exact
        if phi == 0.0:
            c = mag
        elif phi == np.pi:
            c = -mag
        terms.append(HamiltonianTerm(c, pauli))
    return Hamiltonian(n, terms)


class HamiltonianTokenizer(TransformerMixin, BaseEstimator):
    """Tokenize a list of Hamiltonians into zero-padded ``(N, k_max, token_dim)`` arrays.

    ``fit`` infers ``n_qubits`` (when not given) and the longest sequence.
    ``transform`` returns the padded token array; which rows are real tokens
    follows from ``lengths(X)``.
    """

    def __init__(self, n_qubits=None, max_locality=4):
        self.n_qubits = n_qubits
        self.max_locality = max_locality

    def fit(self, X: Sequence[Hamiltonian], y=None):
        X = _as_hamiltonians(X)
        n = self.n_qubits or max(H.n_qubits for H in X)
        self.config_ = TokenizerConfig(int(n), int(self.max_locality))
        self.max_len_ = max(len(H) for H in X)
        self.n_features_out_ = token_dim(self.config_)
        return self

    def transform(self, X: Sequence[Hamiltonian]) -> np.ndarray:
        check_is_fitted(self, "config_")
        X = _as_hamiltonians(X)
        seqs = [tokenize(H, self.config_) for H in X]
        k = max([self.max_len_] + [len(s) for s in seqs])
        out = np.zeros((len(seqs), k, self.n_features_out_))
        for i, s in enumerate(seqs):
            out[i, :len(s)] = s.tokens
        return out

    @staticmethod
    def lengths(X: Sequence[Hamiltonian]) -> np.ndarray:
        return np.array([len(H) for H in _as_hamiltonians(X)])


def _as_hamiltonians(X) -> list[Hamiltonian]:
    return check_hamiltonians(X)
