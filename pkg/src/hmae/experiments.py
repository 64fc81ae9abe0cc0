"""Experiment drivers behind the CLI: QMI verification, few-shot evaluation,
masking ablations and active-learning curves.

Every driver is deterministic given its arguments and returns plain rows or
dicts; serialization lives in :mod:`hmae.cli`.
"""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from scipy.stats import binomtest, pearsonr
from sklearn.metrics import f1_score, mean_absolute_error, mean_squared_error, r2_score

from . import active, hamgen, spinops
from .hamgen import DatasetRecord, FamilySpec
from .model.estimators import HMAEEncoder, HMAEPretrainer
from .model.heads import FewShotEnergyRegressor, FewShotPhaseClassifier
from .saliency import Kind, SaliencyStrategy

QMI_COLUMNS = ("hamiltonian", "family", "n_qubits", "strategy", "mean_qmi_nats", "mean_qmi_bits", "std_qmi_nats",
               "n_masks")
ABLATION_COLUMNS = ("variant", "accuracy_mean", "accuracy_std", "mae_mean", "mae_std", "delta_accuracy", "delta_mae")
DEFAULT_QMI_STRATEGIES = ("random", "energy_only", "base", "practical", "enhanced")


# ---------------------------------------------------------------------------
# QMI verification


def qmi_hamiltonians(count: int = 20, sizes: Sequence[int] = (4, 6), seed: int = 0) -> list[DatasetRecord]:
    """``count`` Hamiltonians cycling through the four families and the sizes in [min, max]."""
    lo, hi = min(sizes), max(sizes)
    ns = list(range(lo, hi + 1))
    out = []
    for i in range(count):
        family = hamgen.FAMILIES[i % len(hamgen.FAMILIES)]
        n = ns[(i // len(hamgen.FAMILIES)) % len(ns)]
        out.extend(hamgen.generate(FamilySpec(family, n, 1, seed=seed * 100_003 + i)))
    return out


def qmi_verify(records: Sequence[DatasetRecord], strategies: Sequence[SaliencyStrategy], beta: float = 1.0,
               n_masks: int = 64, seed: int = 0) -> tuple[list[dict], dict]:
    """Retained QMI per (Hamiltonian, strategy) plus ordering statistics.

    Retained QMI of one mask is the Gibbs-state QMI across the site
    bipartition induced by the masked terms; each table cell averages
    ``n_masks`` seeded masks.  The summary holds per-strategy means, a
    one-sided sign test of every strategy against random masking, and the
    Pearson correlation between a term's saliency and the QMI obtained by
    masking that term alone.
    """
    names = [s.kind.value if s.ablate is None else f"{s.kind.value}-no_{s.ablate}" for s in strategies]
    rows: list[dict] = []
    table = {name: [] for name in names}
    pairs = {name: ([], []) for name in names}
    for h_idx, rec in enumerate(records):
        H = rec.hamiltonian
        rho = spinops.thermal_state(H, beta)
        single = np.array([spinops.mutual_information(rho, *spinops.term_partition_to_site_partition(H, [t]),
                                                      H.n_qubits) for t in range(len(H))])
        for name, strategy in zip(names, strategies):
            values = []
            for m in range(n_masks):
                plan = strategy.plan(H, np.random.default_rng([seed, h_idx, m]))
                V, M = spinops.term_partition_to_site_partition(H, plan.masked)
                values.append(spinops.mutual_information(rho, V, M, H.n_qubits))
            values = np.array(values)
            table[name].append(values.mean())
            pairs[name][0].extend(strategy.scores(H))
            pairs[name][1].extend(single)
            rows.append({"hamiltonian": h_idx, "family": rec.family, "n_qubits": H.n_qubits, "strategy": name,
                         "mean_qmi_nats": float(values.mean()), "mean_qmi_bits": float(values.mean() / math.log(2)),
                         "std_qmi_nats": float(values.std()), "n_masks": n_masks})
    summary = {"beta": beta, "n_hamiltonians": len(records), "n_masks": n_masks, "strategies": {}}
    reference = np.array(table[names[0]]) if "random" not in table else np.array(table["random"])
    for name in names:
        vals = np.array(table[name])
        entry = {"mean_qmi_nats": float(vals.mean()), "min_qmi_nats": float(vals.min())}
        if name != "random" and "random" in table:
            diff = vals - reference
            wins, losses = int((diff > 0).sum()), int((diff < 0).sum())
            p = binomtest(wins, wins + losses, alternative="greater").pvalue if wins + losses else 1.0
            entry.update({"wins_vs_random": wins, "losses_vs_random": losses, "sign_test_p": float(p)})
        x, y = pairs[name]
        if np.ptp(x) > 0 and np.ptp(y) > 0:
            entry["saliency_qmi_pearson"] = float(pearsonr(x, y)[0])
        else:
            entry["saliency_qmi_pearson"] = None
        summary["strategies"][name] = entry
    return rows, summary


# ---------------------------------------------------------------------------
# few-shot evaluation


def _k_shot(records: Sequence[DatasetRecord], k: int, rng: np.random.Generator, per_class: bool) -> list[int]:
    if not per_class:
        return sorted(rng.choice(len(records), size=min(k, len(records)), replace=False).tolist())
    picked = []
    for phase in sorted({r.phase for r in records}):
        idx = [i for i, r in enumerate(records) if r.phase == phase]
        picked.extend(rng.choice(idx, size=min(k, len(idx)), replace=False).tolist())
    return sorted(picked)


def phase_metrics(y_true, y_pred) -> dict:
    return {"accuracy": float(np.mean(np.asarray(y_true) == np.asarray(y_pred))),
            "f1": float(f1_score(y_true, y_pred, average="macro", zero_division=0))}


def energy_metrics(true, pred) -> dict:
    return {"mae": float(mean_absolute_error(true, pred)), "rmse": float(math.sqrt(mean_squared_error(true, pred))),
            "r2": float(r2_score(true, pred))}


def evaluate_phase(encoder: HMAEEncoder, train: Sequence[DatasetRecord], test: Sequence[DatasetRecord], k: int,
                   seed: int) -> dict:
    """K labeled examples per phase, linear head, accuracy and macro F1 on ``test``."""
    idx = _k_shot(train, k, np.random.default_rng([seed, 1]), per_class=True)
    shots = [train[i] for i in idx]
    Z_train, Z_test = encoder.transform(shots), encoder.transform(test)
    head = FewShotPhaseClassifier(random_state=seed).fit(Z_train, [r.phase for r in shots])
    return phase_metrics([r.phase for r in test], head.predict(Z_test))


def evaluate_energy(encoder: HMAEEncoder, train: Sequence[DatasetRecord], test: Sequence[DatasetRecord], k: int,
                    seed: int) -> dict:
    """K labeled examples, ridge head on energy per qubit, metrics on total energy."""
    idx = _k_shot(train, k, np.random.default_rng([seed, 2]), per_class=False)
    shots = [train[i] for i in idx]
    head = FewShotEnergyRegressor().fit(encoder.transform(shots), [r.energy_per_qubit for r in shots])
    n = np.array([r.n_qubits for r in test])
    pred = head.predict(encoder.transform(test)) * n
    return energy_metrics([r.energy for r in test], pred)


def majority_accuracy(train: Sequence[DatasetRecord], test: Sequence[DatasetRecord]) -> float:
    phases = [r.phase for r in train]
    majority = max(sorted(set(phases)), key=phases.count)
    return float(np.mean([r.phase == majority for r in test]))


def _aggregate(results: list[dict]) -> dict:
    out = {}
    for key in results[0]:
        vals = np.array([r[key] for r in results])
        out[key] = {"mean": float(vals.mean()), "std": float(vals.std()), "values": vals.tolist()}
    return out


def few_shot_split(records: Sequence[DatasetRecord], family: str | None) -> tuple[list, list]:
    """Few-shot pool from the train split; evaluation on val + test, optionally one family only."""
    keep = [r for r in records if family is None or r.family == family]
    train = [r for r in keep if r.split in (None, "train")]
    test = [r for r in keep if r.split in ("val", "test")]
    if not test:
        raise ValueError("no held-out (val/test) records to evaluate on")
    return train, test


def finetune_eval(encoder: HMAEEncoder, records: Sequence[DatasetRecord], task: str = "phase", k: int = 10,
                  seeds: int = 5, family: str | None = "TFIM", scratch: HMAEEncoder | None = None) -> dict:
    if task not in ("phase", "energy"):
        raise ValueError(f"task must be 'phase' or 'energy', got {task!r}")
    if k < 1 or seeds < 1:
        raise ValueError("k and seeds must be >= 1")
    train, test = few_shot_split(records, family)
    run = evaluate_phase if task == "phase" else evaluate_energy
    out = {"task": task, "k": k, "seeds": seeds, "family": family, "n_test": len(test),
           "pretrained": _aggregate([run(encoder, train, test, k, s) for s in range(seeds)])}
    if scratch is not None:
        out["scratch"] = _aggregate([run(scratch, train, test, k, s) for s in range(seeds)])
    if task == "phase":
        out["majority_baseline"] = majority_accuracy(train, test)
    else:
        out["mean_baseline_mae"] = float(np.mean(np.abs(np.array([r.energy for r in test])
                                                        - np.mean([r.energy for r in test]))))
    return out


# ---------------------------------------------------------------------------
# masking ablation


ABLATION_VARIANTS = {
    "full": {},
    "random": {"kind": "random"},
    "no_energy": {"ablate": "energy"},
    "no_structure": {"ablate": "structure"},
}


def mask_compare(records: Sequence[DatasetRecord], base_params: dict, variants: Sequence[str] = tuple(ABLATION_VARIANTS),
                 seeds: int = 3, k: int = 10, eval_seeds: int = 5, family: str = "TFIM") -> list[dict]:
    """Pre-train one model per (variant, seed); report few-shot accuracy / MAE deltas against ``full``."""
    if seeds < 3:
        raise ValueError("mask-compare needs at least 3 seeds")
    variants = list(variants)
    unknown = [v for v in variants if v not in ABLATION_VARIANTS]
    if unknown:
        raise ValueError(f"unknown ablation variants {unknown}; choose from {sorted(ABLATION_VARIANTS)}")
    if "full" not in variants:
        variants.insert(0, "full")
    train_records = [r for r in records if r.split in (None, "train")]
    split_train, split_test = few_shot_split(records, family)
    base_strategy = base_params.get("strategy", "enhanced")
    if not isinstance(base_strategy, SaliencyStrategy):
        base_strategy = SaliencyStrategy(Kind(base_strategy), base_params.get("alpha_temperature", 2.0),
                                         base_params.get("mask_ratio", 0.5),
                                         alpha_mix=base_params.get("alpha_mix", 0.65))
    params = {key: v for key, v in base_params.items()
              if key not in ("strategy", "alpha_temperature", "mask_ratio", "alpha_mix", "random_state")}
    stats = {}
    for variant in variants:
        accs, maes = [], []
        for seed in range(seeds):
            strategy = base_strategy.with_(**ABLATION_VARIANTS[variant])
            model = HMAEPretrainer(strategy=strategy, random_state=seed, **params).fit(train_records)
            enc = model.encoder()
            accs.append(np.mean([evaluate_phase(enc, split_train, split_test, k, s)["accuracy"]
                                 for s in range(eval_seeds)]))
            maes.append(np.mean([evaluate_energy(enc, split_train, split_test, k, s)["mae"]
                                 for s in range(eval_seeds)]))
        stats[variant] = (np.array(accs), np.array(maes))
    ref_acc, ref_mae = stats["full"][0].mean(), stats["full"][1].mean()
    rows = []
    for variant in variants:
        acc, mae = stats[variant]
        rows.append({"variant": variant, "accuracy_mean": float(acc.mean()), "accuracy_std": float(acc.std()),
                     "mae_mean": float(mae.mean()), "mae_std": float(mae.std()),
                     "delta_accuracy": float(acc.mean() - ref_acc), "delta_mae": float(mae.mean() - ref_mae)})
    return rows


# ---------------------------------------------------------------------------
# active learning


def tfim_pool(n_qubits: int, count: int, seed: int, h_range=(0.2, 2.0)) -> list[DatasetRecord]:
    return hamgen.generate(FamilySpec("TFIM", n_qubits, count, seed=seed, ranges={"h": tuple(h_range)}))


def seed_set(pool: Sequence[DatasetRecord], per_class: int, seed: int) -> list[int]:
    return _k_shot(pool, per_class, np.random.default_rng([seed, 3]), per_class=True)


def active_learn(encoder: HMAEEncoder, pool: Sequence[DatasetRecord], test: Sequence[DatasetRecord],
                 val: Sequence[DatasetRecord] | None, acquisitions: Sequence[str], k: int, budget: int,
                 seeds: int, seed_per_class: int = 2, ensemble_size: int = 5) -> list[dict]:
    """Curves for every acquisition plus the random control arm, ``seeds`` repetitions each."""
    names = [active.Acquisition(a).value for a in acquisitions]
    if active.Acquisition.RANDOM.value not in names:
        names.append(active.Acquisition.RANDOM.value)
    Z_pool, Z_test = encoder.transform(pool), encoder.transform(test)
    val_arrays = None
    if val:
        val_arrays = (encoder.transform(val), np.array([r.phase for r in val]))
    rows = []
    for seed in range(seeds):
        start = seed_set(pool, seed_per_class, seed)
        for name in names:
            state = active.active_loop(start, pool, active.ExactDiagonalizationOracle(), name, k, budget, Z_pool,
                                       test, Z_test, seed=seed, ensemble_size=ensemble_size, val=val_arrays)
            for row in state.curve:
                rows.append({"seed": seed, **row})
    return rows


def efficiency_table(rows: Sequence[dict], fraction: float = 0.9) -> dict:
    """Mean labels-to-reach ``fraction`` of final accuracy, per acquisition."""
    by_arm: dict[str, list[int]] = {}
    for acq in sorted({r["acquisition"] for r in rows}):
        for seed in sorted({r["seed"] for r in rows}):
            curve = [r for r in rows if r["acquisition"] == acq and r["seed"] == seed]
            by_arm.setdefault(acq, []).append(active.labels_to_reach(curve, fraction))
    return {acq: float(np.mean(v)) for acq, v in by_arm.items()}
