"""Term saliency scores, masking distributions and mask sampling.

Three different knobs are all called "alpha" in the literature this follows;
here they are kept apart:

* ``alpha_temperature`` sharpens the softmax that turns scores into masking
  probabilities,
* ``alpha_mix`` trades coefficient magnitude against structure in the
  practical (convex) score,
* the thermal prefactor of the dimensionally consistent score, ``k_B T / E0``
  (or its reciprocal under ``prefactor="proof"``).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from . import spinops
from .spinops import Hamiltonian, HamiltonianTerm
from .validation import check_hamiltonians, check_scalar, check_score_vector, check_weights


class Kind(str, enum.Enum):
    RANDOM = "random"
    ENERGY_ONLY = "energy_only"
    BASE = "base"
    PRACTICAL = "practical"
    ENHANCED = "enhanced"
    QUANTUM = "quantum"
    QUANTUM_EXTENDED = "quantum_extended"
    DIMENSIONAL = "dimensional"


SMALL_SYSTEM_WEIGHTS = (0.1, 0.8, 0.1)
LARGE_SYSTEM_WEIGHTS = (0.5, 0.3, 0.2)
DEFAULT_ALPHA_MIX = 0.65


def default_weights(n_qubits: int) -> tuple[float, float, float]:
    return LARGE_SYSTEM_WEIGHTS if n_qubits >= 10 else SMALL_SYSTEM_WEIGHTS


# ---------------------------------------------------------------------------
# structural adjacency


def jaccard_overlap(S_i, S_j) -> float:
    S_i, S_j = set(S_i), set(S_j)
    if not S_i or not S_j:
        raise ValueError("site sets must be nonempty")
    return len(S_i & S_j) / len(S_i | S_j)


def _jaccard_matrix(H: Hamiltonian) -> np.ndarray:
    k = len(H)
    J = np.zeros((k, k))
    supports = [t.support for t in H.terms]
    for i in range(k):
        for j in range(i + 1, k):
            if supports[i] and supports[j]:
                J[i, j] = J[j, i] = jaccard_overlap(supports[i], supports[j])
    return J


def adjacency(H: Hamiltonian) -> np.ndarray:
    """A_ij = Jaccard(S_i, S_j) * exp(-||[c_i P_i, c_j P_j]||_F), zero diagonal."""
    A = _jaccard_matrix(H) * np.exp(-spinops.commutator_norm_matrix(H))
    np.fill_diagonal(A, 0.0)
    return A


def adjacency_normalized(H: Hamiltonian, beta: float = 1.0) -> np.ndarray:
    """Jaccard times a softmax of exp(-beta ||comm||_F) over each term's overlapping neighbours."""
    J = _jaccard_matrix(H)
    C = spinops.commutator_norm_matrix(H)
    A = np.zeros_like(J)
    for i in range(len(H)):
        nbrs = np.flatnonzero(J[i] > 0)
        if nbrs.size == 0:
            continue
        logits = -beta * C[i, nbrs]
        w = np.exp(logits - logits.max())
        A[i, nbrs] = J[i, nbrs] * w / w.sum()
    return A


def base_saliency(H: Hamiltonian) -> np.ndarray:
    """s_i = |c_i| (1 + sum_j A_ij)."""
    return np.abs(H.coefficients) * (1.0 + adjacency(H).sum(axis=1))


# ---------------------------------------------------------------------------
# physical measures


def operator_entropy(term: HamiltonianTerm) -> float:
    """Entropy of the normalized absolute spectrum of a single term.

    A Pauli string has a flat absolute spectrum (every eigenvalue is +-|c|), so
    the value is n ln 2 for every nonzero term.
    """
    if term.coeff == 0.0:
        return 0.0
    return term.n_qubits * float(np.log(2.0))


def _minmax(x: np.ndarray) -> np.ndarray:
    lo, hi = x.min(), x.max()
    if hi - lo <= 1e-12 * max(1.0, abs(hi)):
        return np.ones_like(x)
    return (x - lo) / (hi - lo)


def qfim_element(rho: np.ndarray, t_i: HamiltonianTerm, t_j: HamiltonianTerm) -> float:
    """g_ij = Tr(rho [h_i, h_j]^dagger [h_i, h_j]) on the bare Pauli operators (dense)."""
    if t_i.n_qubits > spinops.MAX_QUBITS:
        raise spinops.SizeLimitError("dense QFIM element beyond the qubit limit")
    a, b = t_i.pauli.to_dense(), t_j.pauli.to_dense()
    comm = a @ b - b @ a
    g = np.trace(rho @ comm.conj().T @ comm).real
    return float(max(g, 0.0))


def qfim_matrix(H: Hamiltonian, rho: np.ndarray | None = None) -> np.ndarray:
    """All g_ij at once.

    For Pauli strings [P, Q] is 0 or 2PQ, so [P, Q]^dagger [P, Q] is 0 or 4I and
    g_ij = 4 Tr(rho) = 4 for anticommuting pairs, whatever the (unit-trace) state.
    """
    k = len(H)
    trace = 1.0 if rho is None else float(np.trace(rho).real)
    G = np.zeros((k, k))
    for i in range(k):
        for j in range(i + 1, k):
            if not H.terms[i].pauli.commutes_with(H.terms[j].pauli):
                G[i, j] = G[j, i] = 4.0 * trace
    return G


def _state_for(H: Hamiltonian, beta: float | None) -> np.ndarray:
    spec = spinops.spectrum(H)
    if beta is None:
        psi = spinops.ground_state(H, spec).state
        return np.outer(psi, psi.conj())
    return spinops.thermal_state(H, beta, spec)


def energy_fractions(H: Hamiltonian, rho: np.ndarray) -> np.ndarray:
    vals = np.array([abs(spinops.expectation(t, rho)) for t in H.terms])
    total = vals.sum()
    if total <= 1e-300:
        return np.full(len(H), 1.0 / len(H))
    return vals / total


def enhanced_saliency(H: Hamiltonian, weights: Sequence[float] | None = None,
                      state: np.ndarray | None = None, beta: float | None = None,
                      base: np.ndarray | None = None) -> np.ndarray:
    """s_i * (w1 S(H_i) + w2 E_frac(H_i) + w3 F_i), each factor min-max scaled to [0, 1].

    ``state`` is a density matrix or state vector; by default the ground state,
    or the thermal state when ``beta`` is given.
    """
    w1, w2, w3 = check_weights(weights if weights is not None else default_weights(H.n_qubits))
    if state is None:
        state = _state_for(H, beta)
    rho = np.outer(state, np.conj(state)) if np.ndim(state) == 1 else np.asarray(state)
    s = base_saliency(H) if base is None else np.asarray(base, float)
    S = np.array([operator_entropy(t) for t in H.terms])
    E = energy_fractions(H, rho)
    F = qfim_matrix(H, rho).sum(axis=1)
    return s * (w1 * _minmax(S) + w2 * _minmax(E) + w3 * _minmax(F))


def quantum_saliency(H: Hamiltonian, beta: float = 1.0, corrected: bool = False) -> np.ndarray:
    """Q_i = |c_i| sqrt(g_ii) + sum_{j != i} |c_j| sqrt(g_ij).

    g_ii vanishes identically (a term commutes with itself), so the first part
    is zero as written.  ``corrected=True`` puts |c_i| / max|c| in its place.
    """
    rho = spinops.thermal_state(H, beta)
    G = qfim_matrix(H, rho)
    c = np.abs(H.coefficients)
    self_part = np.sqrt(np.diag(G)) * c
    if corrected:
        self_part = c / c.max()
    off = np.sqrt(G)
    np.fill_diagonal(off, 0.0)
    return self_part + off @ c


def practical_saliency(H: Hamiltonian, alpha_mix: float = DEFAULT_ALPHA_MIX, beta: float = 1.0) -> np.ndarray:
    """alpha |c_i| / max|c| + (1 - alpha) sum_j A~_ij."""
    check_scalar(alpha_mix, "alpha_mix", lo=0.0, hi=1.0)
    c = np.abs(H.coefficients)
    return alpha_mix * c / c.max() + (1 - alpha_mix) * adjacency_normalized(H, beta).sum(axis=1)


def entanglement_contributions(H: Hamiltonian) -> np.ndarray:
    """|S_half(gs(H)) - S_half(gs(H - c_i h_i))| for every term."""
    n = H.n_qubits
    ref = spinops.entanglement_entropy_halfchain(spinops.ground_state(H).state, n)
    out = np.zeros(len(H))
    for i in range(len(H)):
        rest = H.without_term(i)
        if len(rest) == 0:
            out[i] = ref
            continue
        out[i] = abs(ref - spinops.entanglement_entropy_halfchain(spinops.ground_state(rest).state, n))
    return out


def thermal_weight(energy_scale: float, k_B_T: float) -> float:
    """alpha_T = E0 / (E0 + k_B T): 1 at zero temperature, 0 at infinite temperature."""
    if np.isinf(k_B_T):
        return 0.0
    return energy_scale / (energy_scale + k_B_T)


def extended_saliency(H: Hamiltonian, beta: float = 1.0, k_B_T: float | None = None,
                      energy_scale: float | None = None) -> np.ndarray:
    """Q_i + alpha_T * Delta S_E(h_i); ``k_B_T`` defaults to 1 / beta."""
    if k_B_T is None:
        k_B_T = np.inf if beta == 0 else 1.0 / beta
    if energy_scale is None:
        energy_scale = spinops.characteristic_energy_scale(H)
    alpha_t = thermal_weight(energy_scale, k_B_T)
    Q = quantum_saliency(H, beta)
    if alpha_t == 0.0:
        return Q
    return Q + alpha_t * entanglement_contributions(H)


def dimensional_saliency(H: Hamiltonian, k_B_T: float | None = None, prefactor: str = "theorem",
                         energy_scale: float | None = None) -> np.ndarray:
    """(|c_i| / E0) (1 + r * sum_{j in N(i)} A~_ij) with A~ at beta = 1 / k_B T.

    ``r = k_B T / E0`` by default; ``prefactor="proof"`` uses ``E0 / k_B T``.
    E0 is estimated from power-iteration extremal eigenvalues and the gap, and
    ``k_B T`` defaults to E0.
    """
    if energy_scale is None:
        energy_scale = spinops.characteristic_energy_scale(H, method="power")
    if k_B_T is None:
        k_B_T = energy_scale
    check_scalar(k_B_T, "k_B_T", lo=0.0, lo_inclusive=False)
    if prefactor == "theorem":
        r = k_B_T / energy_scale
    elif prefactor == "proof":
        r = energy_scale / k_B_T
    else:
        raise ValueError(f"prefactor must be 'theorem' or 'proof', got {prefactor!r}")
    A = adjacency_normalized(H, beta=1.0 / k_B_T)
    return np.abs(H.coefficients) / energy_scale * (1.0 + r * A.sum(axis=1))


# ---------------------------------------------------------------------------
# scores -> probabilities -> masks


def masking_probabilities(s, alpha_temperature: float = 2.0) -> np.ndarray:
    s = check_score_vector(s)
    check_scalar(alpha_temperature, "alpha_temperature", lo=0.0)
    z = alpha_temperature * s
    z = np.exp(z - z.max())
    return z / z.sum()


def mask_count(k: int, mask_ratio: float) -> int:
    if k < 2:
        raise ValueError("need at least two tokens to leave one visible and mask one")
    m = int(np.floor(mask_ratio * k + 0.5))
    return min(max(m, 1), k - 1)


@dataclass(frozen=True)
class MaskingPlan:
    probabilities: np.ndarray
    masked: tuple[int, ...]
    seed: int | None = None

    @property
    def k(self) -> int:
        return len(self.probabilities)

    @property
    def visible(self) -> tuple[int, ...]:
        m = set(self.masked)
        return tuple(i for i in range(self.k) if i not in m)

    def mask_vector(self) -> np.ndarray:
        out = np.zeros(self.k, dtype=bool)
        out[list(self.masked)] = True
        return out

    @classmethod
    def empty(cls, k: int) -> "MaskingPlan":
        return cls(np.full(k, 1.0 / k), (), None)


def sample_mask(probs, mask_ratio: float = 0.5, seed: int | np.random.Generator | None = None) -> MaskingPlan:
    """Draw the masked set one index at a time without replacement, renormalizing each draw."""
    p = np.asarray(probs, dtype=float)
    check_scalar(mask_ratio, "mask_ratio", lo=0.0, hi=1.0, lo_inclusive=False, hi_inclusive=False)
    m = mask_count(len(p), mask_ratio)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    remaining = p.copy()
    chosen = []
    for _ in range(m):
        total = remaining.sum()
        if total <= 0:
            # all remaining mass underflowed; fall back to uniform over what is left
            remaining = np.where(remaining == 0, 1.0, remaining)
            remaining[chosen] = 0.0
            total = remaining.sum()
        idx = int(rng.choice(len(p), p=remaining / total))
        chosen.append(idx)
        remaining[idx] = 0.0
    return MaskingPlan(p, tuple(sorted(chosen)), seed if isinstance(seed, (int, np.integer)) else None)


# ---------------------------------------------------------------------------
# strategy object


@dataclass(frozen=True)
class SaliencyStrategy:
    kind: Kind = Kind.ENHANCED
    alpha_temperature: float = 2.0
    mask_ratio: float = 0.5
    weights: tuple[float, float, float] | None = None
    alpha_mix: float = DEFAULT_ALPHA_MIX
    beta_thermal: float = 1.0
    k_B_T: float | None = None
    prefactor: str = "theorem"
    corrected: bool = False
    ablate: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        check_scalar(self.alpha_temperature, "alpha_temperature", lo=0.0)
        check_scalar(self.mask_ratio, "mask_ratio", lo=0.0, hi=1.0, lo_inclusive=False, hi_inclusive=False)
        if self.weights is not None:
            object.__setattr__(self, "weights", check_weights(self.weights))
        if self.ablate not in (None, "energy", "structure"):
            raise ValueError(f"ablate must be None, 'energy' or 'structure', got {self.ablate!r}")

    def _inverse_temperature(self, H: Hamiltonian) -> float:
        # beta_thermal is expressed in units of 1 / E0
        return self.beta_thermal / spinops.characteristic_energy_scale(H)

    def scores(self, H: Hamiltonian) -> np.ndarray:
        if len(H) == 0:
            return np.zeros(0)
        kind = self.kind
        if self.ablate == "energy":
            # unit magnitudes, no energy-fraction factor
            H = Hamiltonian(H.n_qubits, [HamiltonianTerm(1.0, t.pauli) for t in H.terms])
        if kind is Kind.RANDOM:
            return np.zeros(len(H))
        if kind is Kind.ENERGY_ONLY:
            return np.abs(H.coefficients)
        if kind in (Kind.BASE, Kind.ENHANCED):
            base = np.abs(H.coefficients) if self.ablate == "structure" else base_saliency(H)
            if kind is Kind.BASE:
                return base
            w = self.weights or default_weights(H.n_qubits)
            if self.ablate == "energy":
                w = (w[0], 0.0, w[2])
            return enhanced_saliency(H, w, base=base)
        if kind is Kind.PRACTICAL:
            if self.ablate == "structure":
                return self.alpha_mix * np.abs(H.coefficients) / np.abs(H.coefficients).max()
            return practical_saliency(H, self.alpha_mix)
        if kind is Kind.QUANTUM:
            return quantum_saliency(H, self._inverse_temperature(H), self.corrected)
        if kind is Kind.QUANTUM_EXTENDED:
            beta = self._inverse_temperature(H)
            return extended_saliency(H, beta, self.k_B_T)
        return dimensional_saliency(H, self.k_B_T, self.prefactor)

    def probabilities(self, H: Hamiltonian) -> np.ndarray:
        return masking_probabilities(self.scores(H), self.alpha_temperature)

    def plan(self, H: Hamiltonian, seed=None) -> MaskingPlan:
        return sample_mask(self.probabilities(H), self.mask_ratio, seed)

    def with_(self, **changes) -> "SaliencyStrategy":
        return replace(self, **changes)


class SaliencyMasker(TransformerMixin, BaseEstimator):
    """Scikit-learn style wrapper: ``transform`` maps Hamiltonians to masking plans.

    ``fit`` is stateless apart from input validation; ``score_terms`` exposes
    the raw saliencies.
    """

    def __init__(self, kind="enhanced", alpha_temperature=2.0, mask_ratio=0.5, weights=None,
                 alpha_mix=DEFAULT_ALPHA_MIX, beta_thermal=1.0, k_B_T=None, prefactor="theorem",
                 corrected=False, ablate=None, random_state=None):
        self.kind = kind
        self.alpha_temperature = alpha_temperature
        self.mask_ratio = mask_ratio
        self.weights = weights
        self.alpha_mix = alpha_mix
        self.beta_thermal = beta_thermal
        self.k_B_T = k_B_T
        self.prefactor = prefactor
        self.corrected = corrected
        self.ablate = ablate
        self.random_state = random_state

    def _strategy(self) -> SaliencyStrategy:
        return SaliencyStrategy(
            Kind(self.kind), self.alpha_temperature, self.mask_ratio,
            tuple(self.weights) if self.weights is not None else None,
            self.alpha_mix, self.beta_thermal, self.k_B_T, self.prefactor, self.corrected, self.ablate,
        )

    def fit(self, X, y=None):
        check_hamiltonians(X)
        self.strategy_ = self._strategy()
        return self

    def score_terms(self, X) -> list[np.ndarray]:
        strategy = getattr(self, "strategy_", None) or self._strategy()
        return [strategy.scores(H) for H in check_hamiltonians(X)]

    def transform(self, X) -> list[MaskingPlan]:
        strategy = getattr(self, "strategy_", None) or self._strategy()
        rng = np.random.default_rng(self.random_state)
        return [strategy.plan(H, rng) for H in check_hamiltonians(X)]
