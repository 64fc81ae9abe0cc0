"""Synthetic spin-Hamiltonian corpora labeled by exact diagonalization.

Phase vocabularies (documented conventions, J > 0):

    TFIM  H = -J sum Z_i Z_i+1 - h sum X_i
          0 ferromagnetic |h/J| < 1,  1 paramagnetic |h/J| > 1
    XXZ   H = J sum (X X + Y Y + delta Z Z)
          0 Ising-like delta > 1,  1 XY-like |delta| <= 1,  2 ferromagnetic delta < -1
    XY    H = J sum ((1+gamma)/2 X X + (1-gamma)/2 Y Y) - h sum Z_i
          0 x-ordered (gamma > 0, |h/J| < 1),  1 y-ordered (gamma < 0, |h/J| < 1),
          2 paramagnetic |h/J| > 1
    RandomLocal  random 1- and 2-local nearest-neighbour Pauli terms; single class 0
"""
from __future__ import annotations

import json
import logging
import os
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import spinops
from .spinops import Hamiltonian, HamiltonianTerm, PauliString

logger = logging.getLogger(__name__)

FAMILIES = ("TFIM", "XXZ", "XY", "RandomLocal")
TOPOLOGIES = ("chain_open", "chain_periodic")
PHASE_VOCAB = {"TFIM": (0, 1), "XXZ": (0, 1, 2), "XY": (0, 1, 2), "RandomLocal": (0,)}
SPLITS = ("train", "val", "test")

_DEFAULT_RANGES = {
    "TFIM": {"J": (1.0, 1.0), "h": (0.0, 2.0)},
    "XXZ": {"J": (1.0, 1.0), "delta": (-2.0, 2.0)},
    "XY": {"J": (1.0, 1.0), "gamma": (-1.0, 1.0), "h": (0.0, 2.0)},
    "RandomLocal": {"scale": (0.5, 1.5)},
}
_BOUNDARY_TOL = 1e-6
_MAX_RESAMPLE = 1000


class DatasetFormatError(ValueError):
    pass


@dataclass
class FamilySpec:
    family: str
    n_qubits: int
    count: int
    seed: int = 0
    topology: str = "chain_open"
    ranges: dict = field(default_factory=dict)
    noise_sigma: float = 0.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if self.topology not in TOPOLOGIES:
            raise ValueError(f"unknown topology {self.topology!r}")
        if not 2 <= self.n_qubits <= spinops.MAX_QUBITS:
            raise ValueError(f"n_qubits must be in [2, {spinops.MAX_QUBITS}]")
        if self.count < 1:
            raise ValueError("count must be >= 1")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        merged = dict(_DEFAULT_RANGES[self.family])
        for key, value in self.ranges.items():
            if key not in merged:
                raise ValueError(f"{self.family} has no parameter {key!r}")
            lo, hi = (value, value) if np.isscalar(value) else value
            if lo > hi:
                raise ValueError(f"empty interval for {key}: {value}")
            merged[key] = (float(lo), float(hi))
        self.ranges = merged


@dataclass
class DatasetRecord:
    hamiltonian: Hamiltonian
    family: str
    params: dict
    energy: float
    phase: int
    xi: float
    split: str | None = None

    @property
    def n_qubits(self) -> int:
        return self.hamiltonian.n_qubits

    @property
    def energy_per_qubit(self) -> float:
        return self.energy / self.n_qubits

    @property
    def labels(self) -> dict:
        return {
            "energy": self.energy,
            "energy_per_qubit": self.energy_per_qubit,
            "phase": self.phase,
            "correlation_length": self.xi,
        }

    def to_json(self) -> dict:
        return {
            "n_qubits": self.n_qubits,
            "terms": [{"c": t.coeff, "p": t.pauli.ops} for t in self.hamiltonian.terms],
            "family": self.family,
            "params": self.params,
            "labels": {"energy": self.energy, "phase": self.phase, "xi": self.xi},
            "split": self.split,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "DatasetRecord":
        H = Hamiltonian(obj["n_qubits"], [(t["c"], t["p"]) for t in obj["terms"]])
        labels = obj["labels"]
        family = obj["family"]
        phase = int(labels["phase"])
        if family in PHASE_VOCAB and phase not in PHASE_VOCAB[family]:
            raise ValueError(f"phase {phase} not in the {family} vocabulary")
        split = obj.get("split")
        if split is not None and split not in SPLITS:
            raise ValueError(f"unknown split {split!r}")
        return cls(H, family, dict(obj["params"]), float(labels["energy"]), phase,
                   float(labels["xi"]), split)

    def __eq__(self, other) -> bool:
        if not isinstance(other, DatasetRecord):
            return NotImplemented
        return self.to_json() == other.to_json()


# ---------------------------------------------------------------------------
# family builders


def _bonds(n: int, topology: str) -> list[tuple[int, int]]:
    bonds = [(i, i + 1) for i in range(n - 1)]
    if topology == "chain_periodic" and n > 2:
        bonds.append((n - 1, 0))
    return bonds


def _two(n, i, j, a, b) -> PauliString:
    return PauliString.from_sites(n, {i: a, j: b})


def _one(n, i, a) -> PauliString:
    return PauliString.from_sites(n, {i: a})


def tfim(n: int, J: float, h: float, topology: str = "chain_open") -> list[tuple[float, PauliString]]:
    terms = [(-J, _two(n, i, j, "Z", "Z")) for i, j in _bonds(n, topology)]
    terms += [(-h, _one(n, i, "X")) for i in range(n)]
    return terms


def xxz(n: int, J: float, delta: float, topology: str = "chain_open") -> list[tuple[float, PauliString]]:
    terms = []
    for i, j in _bonds(n, topology):
        terms += [(J, _two(n, i, j, "X", "X")), (J, _two(n, i, j, "Y", "Y")),
                  (J * delta, _two(n, i, j, "Z", "Z"))]
    return terms


def xy(n: int, J: float, gamma: float, h: float, topology: str = "chain_open") -> list[tuple[float, PauliString]]:
    terms = []
    for i, j in _bonds(n, topology):
        terms += [(J * (1 + gamma) / 2, _two(n, i, j, "X", "X")),
                  (J * (1 - gamma) / 2, _two(n, i, j, "Y", "Y"))]
    terms += [(-h, _one(n, i, "Z")) for i in range(n)]
    return terms


def random_local(n: int, scale: float, rng: np.random.Generator,
                 topology: str = "chain_open") -> list[tuple[float, PauliString]]:
    terms = []
    for i, j in _bonds(n, topology):
        a, b = rng.choice(list("XYZ"), size=2)
        terms.append((scale * rng.normal(), _two(n, i, j, str(a), str(b))))
    for i in range(n):
        terms.append((scale * rng.normal(), _one(n, i, str(rng.choice(list("XYZ"))))))
    return terms


def phase_label(family: str, params: dict) -> int | None:
    """Phase id from the pre-noise parameters, or None within the boundary tolerance."""
    tol = _BOUNDARY_TOL
    if family == "TFIM":
        r = abs(params["h"] / params["J"])
        if abs(r - 1) < tol:
            return None
        return 0 if r < 1 else 1
    if family == "XXZ":
        d = params["delta"]
        if abs(abs(d) - 1) < tol:
            return None
        if d > 1:
            return 0
        return 1 if d >= -1 else 2
    if family == "XY":
        r = abs(params["h"] / params["J"])
        if abs(r - 1) < tol:
            return None
        if r > 1:
            return 2
        if abs(params["gamma"]) < tol:
            return None
        return 0 if params["gamma"] > 0 else 1
    return 0


def _sample_params(spec: FamilySpec, rng: np.random.Generator) -> dict:
    return {k: float(lo if lo == hi else rng.uniform(lo, hi)) for k, (lo, hi) in sorted(spec.ranges.items())}


def _build_terms(spec: FamilySpec, params: dict, rng) -> list[tuple[float, PauliString]]:
    n, topo = spec.n_qubits, spec.topology
    if spec.family == "TFIM":
        return tfim(n, params["J"], params["h"], topo)
    if spec.family == "XXZ":
        return xxz(n, params["J"], params["delta"], topo)
    if spec.family == "XY":
        return xy(n, params["J"], params["gamma"], params["h"], topo)
    return random_local(n, params["scale"], rng, topo)


def label_hamiltonian(H: Hamiltonian) -> tuple[float, float]:
    """(ground energy, correlation length) from one dense diagonalization."""
    spec = spinops.spectrum(H)
    gs = spinops.ground_state(H, spec)
    xi = spinops.correlation_length_from_state(gs.state, H.n_qubits).xi
    return gs.energy, xi


def _make_record(spec: FamilySpec, index: int) -> DatasetRecord:
    rng = np.random.default_rng([spec.seed, index])
    for _ in range(_MAX_RESAMPLE):
        params = _sample_params(spec, rng)
        phase = phase_label(spec.family, params)
        if phase is not None:
            break
    else:
        raise ValueError(f"could not sample {spec.family} parameters away from a phase boundary")
    terms = _build_terms(spec, params, rng)
    # labels come from the clean Hamiltonian; noise only perturbs what the model sees
    clean = Hamiltonian(spec.n_qubits, [HamiltonianTerm(c, p) for c, p in terms])
    energy, xi = label_hamiltonian(clean)
    if spec.noise_sigma > 0:
        terms = [(c + rng.normal(0.0, spec.noise_sigma * abs(c)), p) for c, p in terms]
    H = Hamiltonian(spec.n_qubits, [HamiltonianTerm(c, p) for c, p in terms])
    return DatasetRecord(H, spec.family, params, energy, phase, xi)


def generate(spec: FamilySpec) -> list[DatasetRecord]:
    return [_make_record(spec, i) for i in range(spec.count)]


def generate_many(specs: Iterable[FamilySpec]) -> list[DatasetRecord]:
    records: list[DatasetRecord] = []
    for spec in specs:
        records.extend(generate(spec))
    return records


def split_dataset(records: Sequence[DatasetRecord], fractions=(0.8, 0.1, 0.1),
                  seed: int = 0) -> list[DatasetRecord]:
    """Tag records train/val/test, stratified by (family, phase) when every stratum has >= 3 items."""
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9 or min(fractions) < 0:
        raise ValueError("fractions must be three non-negative numbers summing to 1")
    rng = np.random.default_rng(seed)
    strata: dict = defaultdict(list)
    for i, r in enumerate(records):
        strata[(r.family, r.phase)].append(i)
    if any(len(idx) < 3 for idx in strata.values()):
        logger.warning("stratum smaller than 3 records; falling back to an unstratified split")
        strata = {None: list(range(len(records)))}

    assignment: dict[int, str] = {}
    for key in sorted(strata, key=str):
        idx = np.array(strata[key])
        rng.shuffle(idx)
        n_train = int(round(fractions[0] * len(idx)))
        n_val = int(round(fractions[1] * len(idx)))
        for pos, i in enumerate(idx):
            assignment[int(i)] = "train" if pos < n_train else "val" if pos < n_train + n_val else "test"
    out = []
    for i, r in enumerate(records):
        out.append(DatasetRecord(r.hamiltonian, r.family, r.params, r.energy, r.phase, r.xi, assignment[i]))
    return out


# ---------------------------------------------------------------------------
# JSONL


def dumps_jsonl(records: Iterable[DatasetRecord]) -> str:
    return "".join(json.dumps(r.to_json(), sort_keys=True) + "\n" for r in records)


def write_jsonl(records: Iterable[DatasetRecord], path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_jsonl(records))
    os.replace(tmp, path)


def read_jsonl(path) -> list[DatasetRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                records.append(DatasetRecord.from_json(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DatasetFormatError(f"{path}: malformed record on line {lineno}: {exc}") from exc
    return records


def summarize(records: Sequence[DatasetRecord]) -> dict:
    return {
        "total": len(records),
        "by_family": dict(sorted(Counter(r.family for r in records).items())),
        "by_split": dict(sorted(Counter(str(r.split) for r in records).items())),
    }


def default_family_specs(seed: int = 0, sizes=(4, 6, 8), noise_sigma: float = 0.0) -> list[FamilySpec]:
    """The 600-record mixed corpus: 300 TFIM, 120 XXZ, 120 XY, 60 RandomLocal."""
    per_size = {"TFIM": 100, "XXZ": 40, "XY": 40, "RandomLocal": 20}
    specs = []
    for f_idx, family in enumerate(FAMILIES):
        for n in sizes:
            specs.append(FamilySpec(family, n, per_size[family], seed=seed * 1000 + f_idx * 100 + n,
                                    noise_sigma=noise_sigma))
    return specs
