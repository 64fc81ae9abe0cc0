"""Pauli-string algebra and exact dense computation for small spin Hamiltonians.

Qubit ``k`` is the ``k``-th tensor factor (leftmost in the Kronecker product),
i.e. bit ``n - 1 - k`` of a computational-basis index.  Entropies are in nats.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, NamedTuple, Sequence

import numpy as np

MAX_QUBITS = 12
PAULI_LETTERS = "IXYZ"
_ENTROPY_FLOOR = 1e-14

_PAULI = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


class SizeLimitError(ValueError):
    """Raised when a dense computation would exceed ``MAX_QUBITS``."""


class ConvergenceError(RuntimeError):
    """Power iteration ran out of iterations; ``best_estimate`` holds the last value."""

    def __init__(self, message: str, best_estimate):
        super().__init__(message)
        self.best_estimate = best_estimate


@dataclass(frozen=True, order=True)
class PauliString:
    ops: str

    def __post_init__(self):
        ops = str(self.ops).upper()
        if not ops or any(ch not in PAULI_LETTERS for ch in ops):
            raise ValueError(f"invalid Pauli string {self.ops!r}")
        object.__setattr__(self, "ops", ops)

    @property
    def n_qubits(self) -> int:
        return len(self.ops)

    @property
    def support(self) -> frozenset[int]:
        return frozenset(i for i, p in enumerate(self.ops) if p != "I")

    @property
    def locality(self) -> int:
        return sum(p != "I" for p in self.ops)

    @classmethod
    def from_sites(cls, n_qubits: int, sites: dict[int, str]) -> "PauliString":
        ops = ["I"] * n_qubits
        for site, letter in sites.items():
            ops[site] = letter
        return cls("".join(ops))

    def _masks(self) -> tuple[int, int, int]:
        n = self.n_qubits
        x = y = z = 0
        for k, p in enumerate(self.ops):
            bit = 1 << (n - 1 - k)
            if p == "X":
                x |= bit
            elif p == "Y":
                y |= bit
            elif p == "Z":
                z |= bit
        return x, y, z

    def commutes_with(self, other: "PauliString") -> bool:
        if self.n_qubits != other.n_qubits:
            raise ValueError("Pauli strings act on different numbers of qubits")
        clashes = sum(
            a != "I" and b != "I" and a != b for a, b in zip(self.ops, other.ops)
        )
        return clashes % 2 == 0

    def to_dense(self) -> np.ndarray:
        mat = np.ones((1, 1), dtype=complex)
        for p in self.ops:
            mat = np.kron(mat, _PAULI[p])
        return mat

    def action(self) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(src, phase)`` with ``(P v)[b] = phase[b] * v[src[b]]``."""
        n = self.n_qubits
        x, y, z = self._masks()
        idx = np.arange(1 << n, dtype=np.int64)
        src = idx ^ (x | y)
        # P|b> = i^{#Y} (-1)^{popcount(b & (y|z))} |b ^ (x|y)>
        parity = _popcount(src & (y | z)) & 1
        phase = (1j ** bin(y).count("1")) * (1 - 2 * parity)
        return src, phase.astype(complex)


def _popcount(a: np.ndarray) -> np.ndarray:
    a = a.copy()
    count = np.zeros_like(a)
    while np.any(a):
        count += a & 1
        a >>= 1
    return count


@dataclass(frozen=True)
class HamiltonianTerm:
    coeff: float
    pauli: PauliString

    def __post_init__(self):
        c = complex(self.coeff)
        if not (np.isfinite(c.real) and np.isfinite(c.imag)):
            raise ValueError(f"non-finite coefficient {self.coeff!r}")
        if abs(c.imag) > 1e-12:
            raise ValueError(
                f"coefficient {self.coeff!r} of {self.pauli.ops} is not real; "
                "the Hamiltonian would not be Hermitian"
            )
        if not isinstance(self.pauli, PauliString):
            object.__setattr__(self, "pauli", PauliString(self.pauli))
        object.__setattr__(self, "coeff", float(c.real))

    @property
    def n_qubits(self) -> int:
        return self.pauli.n_qubits

    @property
    def support(self) -> frozenset[int]:
        return self.pauli.support

    def to_dense(self) -> np.ndarray:
        return self.coeff * self.pauli.to_dense()


class Hamiltonian:
    """Immutable weighted sum of Pauli strings in canonical (lexicographic) order.

    Duplicate strings are merged and exactly-zero coefficients dropped, so two
    Hamiltonians describing the same operator compare equal.
    """

    def __init__(self, n_qubits: int, terms: Iterable[HamiltonianTerm | tuple] = ()):
        n_qubits = int(n_qubits)
        if n_qubits < 1:
            raise ValueError("n_qubits must be positive")
        if n_qubits > MAX_QUBITS:
            raise SizeLimitError(f"{n_qubits} qubits exceeds the {MAX_QUBITS}-qubit limit")
        merged: dict[str, float] = {}
        for t in terms:
            if not isinstance(t, HamiltonianTerm):
                c, p = t
                t = HamiltonianTerm(c, p if isinstance(p, PauliString) else PauliString(p))
            if t.n_qubits != n_qubits:
                raise ValueError(
                    f"term {t.pauli.ops} acts on {t.n_qubits} qubits, expected {n_qubits}"
                )
            merged[t.pauli.ops] = merged.get(t.pauli.ops, 0.0) + t.coeff
        self.n_qubits = n_qubits
        self.terms = tuple(
            HamiltonianTerm(c, PauliString(p)) for p, c in sorted(merged.items()) if c != 0.0
        )

    @classmethod
    def from_list(cls, n_qubits: int, pairs: Sequence[tuple[float, str]]) -> "Hamiltonian":
        return cls(n_qubits, [HamiltonianTerm(c, PauliString(p)) for c, p in pairs])

    def __len__(self) -> int:
        return len(self.terms)

    def __iter__(self):
        return iter(self.terms)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Hamiltonian):
            return NotImplemented
        return self.n_qubits == other.n_qubits and self.terms == other.terms

    def __hash__(self) -> int:
        return hash((self.n_qubits, self.terms))

    def __repr__(self) -> str:
        body = " + ".join(f"{t.coeff:g}*{t.pauli.ops}" for t in self.terms[:6])
        more = f" + ... ({len(self.terms)} terms)" if len(self.terms) > 6 else ""
        return f"Hamiltonian(n={self.n_qubits}: {body or '0'}{more})"

    @property
    def coefficients(self) -> np.ndarray:
        return np.array([t.coeff for t in self.terms], dtype=float)

    def without_term(self, index: int) -> "Hamiltonian":
        return Hamiltonian(self.n_qubits, self.terms[:index] + self.terms[index + 1:])

    def scaled(self, factor: float) -> "Hamiltonian":
        return Hamiltonian(
            self.n_qubits, [HamiltonianTerm(factor * t.coeff, t.pauli) for t in self.terms]
        )

    @cached_property
    def _action(self) -> tuple[np.ndarray, np.ndarray]:
        dim = 1 << self.n_qubits
        if not self.terms:
            return np.zeros((0, dim), dtype=np.int64), np.zeros((0, dim), dtype=complex)
        srcs, weights = [], []
        for t in self.terms:
            src, phase = t.pauli.action()
            srcs.append(src)
            weights.append(t.coeff * phase)
        return np.stack(srcs), np.stack(weights)

    def matvec(self, v: np.ndarray) -> np.ndarray:
        """Apply H term by term without building the dense matrix."""
        src, weight = self._action
        if len(src) == 0:
            return np.zeros_like(v, dtype=complex)
        if v.ndim == 1:
            return np.einsum("td,td->d", weight, v[src])
        return np.einsum("td,tdp->dp", weight, v[src])

    def norm_bound(self) -> float:
        return float(np.abs(self.coefficients).sum())


# ---------------------------------------------------------------------------
# dense construction and spectra


def to_dense(H: Hamiltonian) -> np.ndarray:
    if H.n_qubits > MAX_QUBITS:
        raise SizeLimitError(f"{H.n_qubits} qubits exceeds the {MAX_QUBITS}-qubit limit")
    dim = 1 << H.n_qubits
    mat = np.zeros((dim, dim), dtype=complex)
    rows = np.arange(dim)
    for t in H.terms:
        src, phase = t.pauli.action()
        mat[rows, src] += t.coeff * phase
    return mat


def commutator_frob_norm(t_i: HamiltonianTerm, t_j: HamiltonianTerm) -> float:
    """Frobenius norm of ``[c_i P_i, c_j P_j]`` via the Pauli (anti)commutation rule."""
    if t_i.n_qubits != t_j.n_qubits:
        raise ValueError(
            f"shape mismatch: terms act on {t_i.n_qubits} and {t_j.n_qubits} qubits"
        )
    if t_i.coeff == 0.0 or t_j.coeff == 0.0 or t_i.pauli.commutes_with(t_j.pauli):
        return 0.0
    return 2.0 * abs(t_i.coeff) * abs(t_j.coeff) * 2.0 ** (t_i.n_qubits / 2)


def commutator_norm_matrix(H: Hamiltonian) -> np.ndarray:
    k = len(H)
    out = np.zeros((k, k))
    for i in range(k):
        for j in range(i + 1, k):
            out[i, j] = out[j, i] = commutator_frob_norm(H.terms[i], H.terms[j])
    return out


class SpectralDecomposition(NamedTuple):
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def diagonalize(M: np.ndarray) -> SpectralDecomposition:
    M = np.asarray(M)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    if M.shape[0] > 1 << MAX_QUBITS:
        raise SizeLimitError(f"dimension {M.shape[0]} exceeds {1 << MAX_QUBITS}")
    if not np.allclose(M, M.conj().T, atol=1e-10, rtol=0):
        raise ValueError("matrix is not Hermitian within 1e-10")
    w, v = np.linalg.eigh(M)
    return SpectralDecomposition(w, v)


def spectrum(H: Hamiltonian) -> SpectralDecomposition:
    return diagonalize(to_dense(H))


class GroundState(NamedTuple):
    energy: float
    state: np.ndarray
    degenerate: bool


def ground_state(H: Hamiltonian, spec: SpectralDecomposition | None = None) -> GroundState:
    w, v = spec if spec is not None else spectrum(H)
    degenerate = len(w) > 1 and (w[1] - w[0]) < 1e-10
    psi = v[:, 0]
    return GroundState(float(w[0]), psi / np.linalg.norm(psi), bool(degenerate))


def thermal_state(H: Hamiltonian, beta: float, spec: SpectralDecomposition | None = None) -> np.ndarray:
    if not np.isfinite(beta):
        raise ValueError("beta must be finite")
    if beta < 0:
        raise ValueError(f"beta must be non-negative, got {beta}")
    w, v = spec if spec is not None else spectrum(H)
    # shift by the smallest eigenvalue so the largest Boltzmann weight is 1
    weights = np.exp(-beta * (w - w[0]))
    weights /= weights.sum()
    rho = (v * weights) @ v.conj().T
    return 0.5 * (rho + rho.conj().T)


def _as_density(rho_or_state: np.ndarray) -> np.ndarray:
    a = np.asarray(rho_or_state)
    return np.outer(a, a.conj()) if a.ndim == 1 else a


def partial_trace(rho: np.ndarray, keep: Iterable[int], n_qubits: int) -> np.ndarray:
    keep = sorted(set(int(k) for k in keep))
    if not keep:
        raise ValueError("keep set must be nonempty")
    if keep[0] < 0 or keep[-1] >= n_qubits:
        raise ValueError(f"keep sites {keep} out of range for {n_qubits} qubits")
    rho = _as_density(rho)
    if len(keep) == n_qubits:
        return rho.copy()
    drop = [k for k in range(n_qubits) if k not in keep]
    t = rho.reshape([2] * (2 * n_qubits))
    perm = keep + drop + [n_qubits + k for k in keep] + [n_qubits + k for k in drop]
    dk, dd = 1 << len(keep), 1 << len(drop)
    t = t.transpose(perm).reshape(dk, dd, dk, dd)
    return np.einsum("ajbj->ab", t)


def von_neumann_entropy(rho: np.ndarray) -> float:
    p = np.linalg.eigvalsh(_as_density(rho))
    p = p[p >= _ENTROPY_FLOOR]
    return float(max(0.0, -np.sum(p * np.log(p))))


def _check_partition(n_qubits: int, V: Iterable[int], M: Iterable[int]) -> tuple[list, list]:
    V, M = sorted(set(V)), sorted(set(M))
    if not V or not M:
        raise ValueError("both sides of the partition must be nonempty")
    if set(V) & set(M):
        raise ValueError("partition sides overlap")
    if set(V) | set(M) != set(range(n_qubits)):
        raise ValueError("partition does not cover every site")
    return V, M


def mutual_information(rho: np.ndarray, V: Iterable[int], M: Iterable[int], n_qubits: int) -> float:
    V, M = _check_partition(n_qubits, V, M)
    value = (
        von_neumann_entropy(partial_trace(rho, V, n_qubits))
        + von_neumann_entropy(partial_trace(rho, M, n_qubits))
        - von_neumann_entropy(rho)
    )
    if -1e-9 <= value < 0:
        value = 0.0
    return float(value)


def qmi(H: Hamiltonian, site_partition: tuple[Iterable[int], Iterable[int]], beta: float,
        spec: SpectralDecomposition | None = None) -> float:
    """Quantum mutual information of the Gibbs state across a site bipartition."""
    V, M = _check_partition(H.n_qubits, *site_partition)
    return mutual_information(thermal_state(H, beta, spec), V, M, H.n_qubits)


def term_partition_to_site_partition(H: Hamiltonian, masked_term_indices: Iterable[int]) -> tuple[list[int], list[int]]:
    """Assign each site to the side (visible/masked) carrying more coefficient weight on it.

    Ties and untouched sites go to the visible side.  If one side comes out
    empty, the site leaning most strongly toward that side is moved there.
    """
    masked = set(int(i) for i in masked_term_indices)
    if not masked or min(masked) < 0 or max(masked) >= len(H):
        raise ValueError("masked set must be a nonempty set of term indices")
    n = H.n_qubits
    if n < 2:
        raise ValueError("a site bipartition needs at least two qubits")
    w_masked = np.zeros(n)
    w_visible = np.zeros(n)
    for idx, t in enumerate(H.terms):
        target = w_masked if idx in masked else w_visible
        for s in t.support:
            target[s] += abs(t.coeff)
    margin = w_masked - w_visible
    M = [s for s in range(n) if margin[s] > 0]
    V = [s for s in range(n) if margin[s] <= 0]
    if not V:
        s = int(np.argmin(margin))
        M.remove(s)
        V = [s]
    elif not M:
        s = int(np.argmax(margin))
        V.remove(s)
        M = [s]
    return V, M


# ---------------------------------------------------------------------------
# matrix-free extremal eigenvalues


def _power_iterate(apply, V: np.ndarray, tol_abs: float, max_iter: int) -> tuple[float, bool]:
    """Dominant eigenvalue of a PSD operator by block power iteration.

    The block is re-orthonormalized every step and the top Rayleigh-Ritz value
    is read off every few steps, so a near-degenerate top cluster converges at
    the rate of the first eigenvalue outside the block.  Ritz values are
    nondecreasing for a PSD operator, so a negligible rise between iteration
    k/2 and k is used as the stopping test.
    """
    V, _ = np.linalg.qr(V)
    history: dict[int, float] = {}
    theta = 0.0
    for it in range(1, max_iter + 1):
        W = apply(V)
        if it % 4 == 0 or it == max_iter:
            T = V.conj().T @ W
            theta = float(np.linalg.eigvalsh(0.5 * (T + T.conj().T))[-1])
            history[it] = theta
            half = (it // 2) - (it // 2) % 4
            if it >= 16 and half in history and theta - history[half] <= tol_abs:
                return theta, True
        V, _ = np.linalg.qr(W)
    return theta, False


def extremal_eigenvalues_power(H: Hamiltonian, tol: float = 1e-6, max_iter: int = 10000,
                               seed: int = 0, block: int = 8) -> tuple[float, float]:
    """(lambda_min, lambda_max) by shifted power iteration on the term-wise matvec.

    lambda_max comes from H + b*I with b the coefficient-sum bound on ||H||;
    lambda_min from lambda_max*I - H, whose dominant eigenvalue is the
    spectral width.  Both operators are PSD.
    """
    if H.n_qubits > MAX_QUBITS:
        raise SizeLimitError(f"{H.n_qubits} qubits exceeds the {MAX_QUBITS}-qubit limit")
    dim = 1 << H.n_qubits
    bound = H.norm_bound()
    if bound == 0.0:
        return 0.0, 0.0
    rng = np.random.default_rng(seed)
    p = min(block, dim)
    start = rng.standard_normal((dim, p)) + 1j * rng.standard_normal((dim, p))
    tol_abs = tol * bound

    top, ok_top = _power_iterate(lambda V: H.matvec(V) + bound * V, start, tol_abs, max_iter)
    lam_max = top - bound
    width, ok_bot = _power_iterate(lambda V: lam_max * V - H.matvec(V), start, tol_abs, max_iter)
    lam_min = lam_max - width
    if not (ok_top and ok_bot):
        raise ConvergenceError(
            f"power iteration did not converge in {max_iter} iterations",
            best_estimate=(lam_min, lam_max),
        )
    return float(lam_min), float(lam_max)


def energy_gap(H: Hamiltonian, spec: SpectralDecomposition | None = None) -> float:
    w = (spec if spec is not None else spectrum(H)).eigenvalues
    if len(w) < 2:
        return 0.0
    gap = float(w[1] - w[0])
    return gap if gap >= 1e-10 else 0.0


def characteristic_energy_scale(H: Hamiltonian, method: str = "dense") -> float:
    """max(|lambda_max - lambda_min|, gap); extremes by dense ED or power iteration."""
    if len(H) == 0:
        raise ValueError("characteristic energy scale of the zero Hamiltonian is undefined")
    spec = spectrum(H)
    if method == "dense":
        lo, hi = spec.eigenvalues[0], spec.eigenvalues[-1]
    elif method == "power":
        lo, hi = extremal_eigenvalues_power(H)
    else:
        raise ValueError(f"unknown method {method!r}")
    scale = max(abs(hi - lo), energy_gap(H, spec))
    if scale <= 0:
        # a pure identity term has a flat spectrum
        scale = float(np.abs(H.coefficients).max())
    return float(scale)


# ---------------------------------------------------------------------------
# correlations and entanglement


class CorrelationFit(NamedTuple):
    xi: float
    degenerate: bool


def _site_z(n: int, site: int) -> np.ndarray:
    idx = np.arange(1 << n)
    return 1.0 - 2.0 * ((idx >> (n - 1 - site)) & 1)


def correlation_length_from_state(psi: np.ndarray, n_qubits: int) -> CorrelationFit:
    prob = np.abs(psi) ** 2
    z0 = _site_z(n_qubits, 0)
    mean0 = float(prob @ z0)
    rs, logs = [], []
    for r in range(1, n_qubits):
        zr = _site_z(n_qubits, r)
        c = float(prob @ (z0 * zr)) - mean0 * float(prob @ zr)
        if abs(c) > 1e-8:
            rs.append(r)
            logs.append(np.log(abs(c)))
    if len(rs) < 2:
        return CorrelationFit(0.0, True)
    slope = np.polyfit(np.array(rs, float), np.array(logs), 1)[0]
    if slope >= 0:
        return CorrelationFit(0.0, True)
    return CorrelationFit(float(np.clip(-1.0 / slope, 0.0, 10.0 * n_qubits)), False)


def correlation_length(H: Hamiltonian, spec: SpectralDecomposition | None = None) -> CorrelationFit:
    """Decay length of connected Z_0 Z_r correlators in the ground state."""
    return correlation_length_from_state(ground_state(H, spec).state, H.n_qubits)


def entanglement_entropy_halfchain(state: np.ndarray, n_qubits: int) -> float:
    half = n_qubits // 2
    if half == 0:
        return 0.0
    # Schmidt values of the left/right split
    s = np.linalg.svd(np.asarray(state).reshape(1 << half, -1), compute_uv=False)
    p = s ** 2
    p = p[p >= _ENTROPY_FLOOR]
    return float(max(0.0, -np.sum(p * np.log(p))))


def expectation(H_or_term, rho: np.ndarray) -> float:
    """<O> = Tr(rho O) for a term or Hamiltonian; ``rho`` may be a state vector."""
    if isinstance(H_or_term, HamiltonianTerm):
        H_or_term = Hamiltonian(H_or_term.n_qubits, [H_or_term])
    rho = np.asarray(rho)
    if rho.ndim == 1:
        return float(np.vdot(rho, H_or_term.matvec(rho)).real)
    src, weight = H_or_term._action
    # Tr(rho O) = sum_b (O rho)[b, b] = sum_t sum_b w_t[b] rho[src_t[b], b]
    cols = np.arange(rho.shape[0])
    return float(sum(np.sum(w * rho[s, cols]) for s, w in zip(src, weight)).real)
