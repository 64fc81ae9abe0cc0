"""Pool-based active learning over Hamiltonians with an exact-diagonalization oracle."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import log_softmax, softmax

from . import hamgen
from .hamgen import DatasetRecord
from .model.heads import FewShotEnergyRegressor, FewShotPhaseClassifier

CURVE_COLUMNS = ("round", "labels_used", "acquisition", "accuracy", "mae", "ece")


class Acquisition(str, enum.Enum):
    PREDICTIVE_ENTROPY = "predictive_entropy"
    ENSEMBLE_DISAGREEMENT = "ensemble_disagreement"
    PHASE_BOUNDARY_MARGIN = "phase_boundary_margin"
    EMBEDDING_DISTANCE = "embedding_distance"
    RANDOM = "random"


class ActiveLearningConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# acquisition scores (higher = more worth labeling)


def predictive_entropy(probs: np.ndarray) -> np.ndarray:
    p = np.clip(np.asarray(probs, float), 1e-300, 1.0)
    return -np.sum(np.asarray(probs) * np.log(p), axis=1)


def ensemble_disagreement(member_probs: Sequence[np.ndarray]) -> np.ndarray:
    """Variance across ensemble members, summed over classes."""
    stack = np.stack([np.asarray(p, float) for p in member_probs])
    return stack.var(axis=0).sum(axis=1)


def boundary_margin(probs: np.ndarray) -> np.ndarray:
    """Negative half top-2 margin; equals -|p_max - 1/2| for two classes."""
    p = np.sort(np.asarray(probs, float), axis=1)
    if p.shape[1] < 2:
        return np.zeros(p.shape[0])
    return -(p[:, -1] - p[:, -2]) / 2.0


def embedding_distance(Z_pool: np.ndarray, Z_labeled: np.ndarray) -> np.ndarray:
    d = np.linalg.norm(Z_pool[:, None, :] - Z_labeled[None, :, :], axis=-1)
    return d.min(axis=1)


def score_pool(kind: Acquisition | str, *, probs=None, member_probs=None, Z_pool=None, Z_labeled=None,
               rng: np.random.Generator | None = None, n_pool: int | None = None) -> np.ndarray:
    kind = Acquisition(kind)
    if kind is Acquisition.PREDICTIVE_ENTROPY:
        return predictive_entropy(probs)
    if kind is Acquisition.ENSEMBLE_DISAGREEMENT:
        return ensemble_disagreement(member_probs)
    if kind is Acquisition.PHASE_BOUNDARY_MARGIN:
        return boundary_margin(probs)
    if kind is Acquisition.EMBEDDING_DISTANCE:
        return embedding_distance(Z_pool, Z_labeled)
    n = n_pool if n_pool is not None else len(probs)
    return (rng or np.random.default_rng()).uniform(size=n)


def select_top(scores: np.ndarray, ids: np.ndarray, k: int) -> np.ndarray:
    """Positions of the k best scores; ties go to the smaller record id."""
    order = np.lexsort((ids, -np.asarray(scores)))
    return order[:k]


# ---------------------------------------------------------------------------
# calibration


def nll(logits: np.ndarray, labels: np.ndarray, temperature: float = 1.0) -> float:
    lp = log_softmax(np.asarray(logits, float) / temperature, axis=1)
    return float(-lp[np.arange(len(labels)), labels].mean())


def expected_calibration_error(probs: np.ndarray, labels: np.ndarray, n_bins: int = 10) -> float:
    probs = np.asarray(probs, float)
    conf = probs.max(axis=1)
    correct = (probs.argmax(axis=1) == labels).astype(float)
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    bins = np.clip(np.digitize(conf, edges[1:-1], right=True), 0, n_bins - 1)
    ece = 0.0
    for b in range(n_bins):
        sel = bins == b
        if sel.any():
            ece += sel.mean() * abs(correct[sel].mean() - conf[sel].mean())
    return float(ece)


def golden_section(f: Callable[[float], float], lo: float, hi: float, tol: float = 1e-6, max_iter: int = 200) -> float:
    inv_phi = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    c, d = b - inv_phi * (b - a), a + inv_phi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if abs(b - a) < tol:
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = f(d)
    return (a + b) / 2


@dataclass
class Calibration:
    temperature: float
    ece_before: float
    ece_after: float
    nll_before: float
    nll_after: float
    fallback: bool = False

    def apply(self, logits: np.ndarray) -> np.ndarray:
        return softmax(np.asarray(logits, float) / self.temperature, axis=1)


def calibrate_temperature(logits, labels, lo: float = 0.05, hi: float = 20.0, n_bins: int = 10) -> Calibration:
    """Fit a single logit temperature by golden-section search on validation NLL.

    The search runs over log T.  The fitted temperature is kept only if
    neither NLL nor ECE gets worse than at T = 1; otherwise T = 1 is
    returned with ``fallback`` set.
    """
    logits = np.asarray(logits, float)
    labels = np.asarray(labels)
    if len(np.unique(labels)) < 2:
        raise ValueError("temperature calibration needs a validation set with at least two classes")
    t = math.exp(golden_section(lambda s: nll(logits, labels, math.exp(s)), math.log(lo), math.log(hi)))
    nll0, nll1 = nll(logits, labels), nll(logits, labels, t)
    ece0 = expected_calibration_error(softmax(logits, axis=1), labels, n_bins)
    ece1 = expected_calibration_error(softmax(logits / t, axis=1), labels, n_bins)
    if nll1 > nll0 or ece1 > ece0:
        return Calibration(1.0, ece0, ece0, nll0, nll0, fallback=True)
    return Calibration(t, ece0, ece1, nll0, nll1)


# ---------------------------------------------------------------------------
# oracle and loop


class ExactDiagonalizationOracle:
    """Labels a record by re-simulating its Hamiltonian; counts simulations."""

    def __init__(self):
        self.calls = 0

    def __call__(self, record: DatasetRecord) -> DatasetRecord:
        self.calls += 1
        energy, xi = hamgen.label_hamiltonian(record.hamiltonian)
        phase = hamgen.phase_label(record.family, record.params)
        if phase is None:
            phase = record.phase
        return DatasetRecord(record.hamiltonian, record.family, record.params, energy, phase, xi, record.split)


@dataclass
class ActiveState:
    labeled: list[int]
    unlabeled: list[int]
    budget: int
    batch_size: int
    round: int = 0
    curve: list[dict] = field(default_factory=list)
    calibrations: list[Calibration] = field(default_factory=list)

    def check(self) -> None:
        assert not set(self.labeled) & set(self.unlabeled)
        assert len(self.labeled) <= self.budget


def _fit_heads(Z, y, seed: int, n_heads: int) -> list[FewShotPhaseClassifier]:
    return [FewShotPhaseClassifier(random_state=seed * 1000 + m).fit(Z, y) for m in range(n_heads)]


def active_loop(seed_indices: Sequence[int], pool: Sequence[DatasetRecord], oracle: Callable,
                acquisition: Acquisition | str, k: int, budget: int, Z_pool: np.ndarray,
                test_records: Sequence[DatasetRecord], Z_test: np.ndarray, seed: int = 0,
                ensemble_size: int = 5, val: tuple[np.ndarray, np.ndarray] | None = None) -> ActiveState:
    """Train on the labeled set, score the pool, label the top ``k``, repeat until ``budget``.

    ``Z_pool`` / ``Z_test`` are frozen encoder embeddings; record ids are the
    positions in ``pool``.  ``val`` = (Z_val, y_val) enables temperature
    calibration, in which case the ``ece`` column is post-calibration and each
    row also carries the fitted temperature and validation ECE before / after.
    """
    acquisition = Acquisition(acquisition)
    seed_indices = [int(i) for i in seed_indices]
    if budget < len(seed_indices):
        raise ActiveLearningConfigError(f"budget {budget} is smaller than the seed set ({len(seed_indices)})")
    if k < 1:
        raise ActiveLearningConfigError("acquisition batch size must be >= 1")
    if budget > len(pool):
        raise ActiveLearningConfigError("budget exceeds the pool size")
    rng = np.random.default_rng(seed)
    labels: dict[int, DatasetRecord] = {i: oracle(pool[i]) for i in seed_indices}
    state = ActiveState(list(seed_indices), [i for i in range(len(pool)) if i not in labels], budget, k)
    y_test = np.array([r.phase for r in test_records])
    e_test = np.array([r.energy for r in test_records])
    n_test = np.array([r.n_qubits for r in test_records])
    n_heads = ensemble_size if acquisition is Acquisition.ENSEMBLE_DISAGREEMENT else 1

    while True:
        Z_lab = Z_pool[state.labeled]
        y_lab = np.array([labels[i].phase for i in state.labeled])
        heads = _fit_heads(Z_lab, y_lab, seed + state.round, n_heads)
        logits_test = heads[0].decision_function(Z_test)
        probs_test = heads[0].predict_proba(Z_test)
        accuracy = float(np.mean(heads[0].classes_[probs_test.argmax(1)] == y_test))
        reg = FewShotEnergyRegressor().fit(Z_lab, [labels[i].energy / labels[i].n_qubits for i in state.labeled])
        mae = float(np.mean(np.abs(reg.predict(Z_test) * n_test - e_test)))
        calibration = None
        if val is not None and len(np.unique(val[1])) > 1:
            Z_val, y_val = val
            cls_index = np.searchsorted(heads[0].classes_, y_val)
            if np.all(heads[0].classes_[np.clip(cls_index, 0, len(heads[0].classes_) - 1)] == y_val):
                calibration = calibrate_temperature(heads[0].decision_function(Z_val), cls_index)
        extra = {}
        if calibration is not None:
            probs_test = calibration.apply(logits_test)
            state.calibrations.append(calibration)
            extra = {"temperature": calibration.temperature, "val_ece_before": calibration.ece_before,
                     "val_ece_after": calibration.ece_after}
        test_index = np.searchsorted(heads[0].classes_, y_test)
        known = np.isin(y_test, heads[0].classes_)
        ece = expected_calibration_error(probs_test[known], test_index[known]) if known.any() else float("nan")
        state.curve.append({"round": state.round, "labels_used": len(state.labeled),
                            "acquisition": acquisition.value, "accuracy": accuracy, "mae": mae, "ece": ece, **extra})
        if len(state.labeled) >= budget or not state.unlabeled:
            break

        U = np.array(state.unlabeled)
        Z_U = Z_pool[U]
        probs_U = heads[0].predict_proba(Z_U)
        if calibration is not None:
            probs_U = calibration.apply(heads[0].decision_function(Z_U))
        scores = score_pool(acquisition, probs=probs_U, member_probs=[h.predict_proba(Z_U) for h in heads],
                            Z_pool=Z_U, Z_labeled=Z_lab, rng=rng, n_pool=len(U))
        take = min(k, budget - len(state.labeled))
        picked = U[select_top(scores, U, take)]
        for i in picked:
            labels[int(i)] = oracle(pool[int(i)])
        state.labeled.extend(int(i) for i in picked)
        picked_set = set(int(i) for i in picked)
        state.unlabeled = [i for i in state.unlabeled if i not in picked_set]
        state.round += 1
        state.check()
    return state


def labels_to_reach(curve: Sequence[dict], fraction: float = 0.9) -> int:
    """Labels used at the first point reaching ``fraction`` of the final accuracy."""
    final = curve[-1]["accuracy"]
    for row in curve:
        if row["accuracy"] >= fraction * final:
            return int(row["labels_used"])
    return int(curve[-1]["labels_used"])
