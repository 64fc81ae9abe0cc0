"""Command-line pipeline: ``hmae <subcommand> --config run.json ...``.

Exit codes: 0 success, 2 configuration error, 3 numerical abort, 4 I/O error.
"""
from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import io
import json
import logging
import os
import sys
from pathlib import Path

import torch

from . import experiments, hamgen
from .hamgen import DatasetFormatError, FamilySpec
from .model import checkpoint as ckpt_io
from .model.config import ConfigError, ModelConfig
from .model.estimators import HMAEEncoder, HMAEPretrainer
from .model.gradcheck import check_gradients, worst
from .model.training import NumericalAbort, metrics_csv
from .saliency import Kind, SaliencyStrategy
from .tokenizer import TokenizerConfig

logger = logging.getLogger("hmae")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4
SCHEMA_VERSION = 1

DEFAULT_CONFIG = {
    "seed": 0,
    "output_dir": "runs",
    "corpus": {
        "sizes": [4, 6, 8],
        "families": {"TFIM": 100, "XXZ": 40, "XY": 40, "RandomLocal": 20},
        "topology": "chain_open",
        "noise_sigma": 0.0,
        "ranges": {},
        "split": [0.8, 0.1, 0.1],
    },
    "tokenizer": {"max_locality": 2, "n_qubits": None},
    "strategy": {
        "kind": "enhanced",
        "alpha_temperature": 2.0,
        "mask_ratio": 0.5,
        "weights": None,
        "alpha_mix": 0.65,
        "beta_thermal": 1.0,
        "k_B_T": None,
        "prefactor": "theorem",
        "corrected": False,
        "ablate": None,
    },
    "model": {"d_model": 64, "n_layers": 2, "n_heads": 4, "decoder_layers": 2, "dropout": 0.1, "max_seq_len": 128},
    "train": {
        "lr": 1e-3,
        "batch_size": 32,
        "weight_decay": 1e-5,
        "grad_clip": 1.0,
        "warmup_fraction": 0.05,
        "total_steps": 1500,
        "lambdas": [0.6, 0.3, 0.1],
        "eps_norm": 1e-6,
        "normalized_loss": True,
    },
    "finetune": {"task": "phase", "k": 10, "seeds": 5, "family": "TFIM", "with_scratch": False},
    "qmi_verify": {"n_hamiltonians": 20, "sizes": [4, 6], "beta": 1.0, "n_masks": 64,
                   "strategies": list(experiments.DEFAULT_QMI_STRATEGIES)},
    "mask_compare": {"variants": list(experiments.ABLATION_VARIANTS), "seeds": 3, "k": 10, "eval_seeds": 5,
                     "family": "TFIM", "total_steps": 800},
    "active": {"acquisitions": ["predictive_entropy", "ensemble_disagreement", "phase_boundary_margin",
                                "embedding_distance"],
               "n_qubits": 6, "pool_size": 200, "test_size": 100, "val_size": 50, "h_range": [0.2, 2.0],
               "seed_per_class": 2, "k": 4, "budget": 40, "seeds": 5, "ensemble_size": 5},
}

CONFIG_DOC = {
    "seed": "master seed; every random draw derives from it",
    "output_dir": "default directory for outputs when --out is not given",
    "corpus": "dataset generation: sizes (qubit counts), records per family per size, topology, "
              "multiplicative coefficient noise sigma, parameter-range overrides per family, train/val/test fractions",
    "tokenizer": "max_locality L of the token type field; n_qubits (site field width) defaults to the corpus maximum",
    "strategy": "masking strategy kind and knobs; kind is one of " + ", ".join(k.value for k in Kind),
    "model": "encoder/decoder sizes",
    "train": "pre-training optimization",
    "finetune": "K-shot evaluation: task phase|energy, K, number of K-shot draws, family filter, scratch arm",
    "qmi_verify": "QMI-retention experiment",
    "mask_compare": "masking ablation: variants, pre-training seeds (>= 3), per-model pre-training steps",
    "active": "active-learning loop over a TFIM pool",
}


class CLIError(Exception):
    def __init__(self, message: str, code: int = EXIT_CONFIG):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# config handling


def _merge(defaults: dict, overrides: dict, path: str = "") -> dict:
    out = copy.deepcopy(defaults)
    for key, value in overrides.items():
        where = f"{path}{key}"
        if key not in defaults:
            raise CLIError(f"unknown config key {where!r}")
        # free-form mappings: corpus.families and corpus.ranges
        if isinstance(defaults[key], dict) and where not in ("corpus.families", "corpus.ranges"):
            if not isinstance(value, dict):
                raise CLIError(f"config key {where!r} must be an object")
            out[key] = _merge(defaults[key], value, where + ".")
        else:
            out[key] = value
    return out


def load_config(path: str | None) -> dict:
    if path is None:
        return copy.deepcopy(DEFAULT_CONFIG)
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise CLIError(f"cannot read config {path}: {exc}", EXIT_IO) from exc
    except json.JSONDecodeError as exc:
        raise CLIError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise CLIError("config must be a JSON object")
    return _merge(DEFAULT_CONFIG, raw)


def family_specs(cfg: dict) -> list[FamilySpec]:
    corpus, seed = cfg["corpus"], int(cfg["seed"])
    specs = []
    try:
        for f_idx, (family, count) in enumerate(sorted(corpus["families"].items())):
            if family not in hamgen.FAMILIES:
                raise CLIError(f"invalid family {family!r}; expected one of {', '.join(hamgen.FAMILIES)}")
            for n in corpus["sizes"]:
                specs.append(FamilySpec(family, int(n), int(count), seed=seed * 1000 + f_idx * 100 + int(n),
                                        topology=corpus["topology"], ranges=corpus["ranges"].get(family, {}),
                                        noise_sigma=float(corpus["noise_sigma"])))
    except (ValueError, TypeError) as exc:
        raise CLIError(f"invalid corpus config: {exc}") from exc
    return specs


def strategy_from_config(cfg: dict) -> SaliencyStrategy:
    s = dict(cfg["strategy"])
    if s.get("weights") is not None:
        s["weights"] = tuple(s["weights"])
    try:
        return SaliencyStrategy(**s)
    except (ValueError, TypeError) as exc:
        raise CLIError(f"invalid strategy config: {exc}") from exc


def pretrainer_params(cfg: dict) -> dict:
    s, m, t = cfg["strategy"], cfg["model"], cfg["train"]
    return {
        "strategy": strategy_from_config(cfg), "d_model": m["d_model"], "n_layers": m["n_layers"],
        "n_heads": m["n_heads"], "decoder_layers": m["decoder_layers"], "dropout": m["dropout"],
        "max_seq_len": m["max_seq_len"], "n_qubits": cfg["tokenizer"]["n_qubits"],
        "max_locality": cfg["tokenizer"]["max_locality"], "lr": t["lr"], "batch_size": t["batch_size"],
        "weight_decay": t["weight_decay"], "grad_clip": t["grad_clip"], "warmup_fraction": t["warmup_fraction"],
        "total_steps": t["total_steps"], "lambdas": tuple(t["lambdas"]), "eps_norm": t["eps_norm"],
        "normalized_loss": t["normalized_loss"], "random_state": cfg["seed"], "alpha_temperature":
        s["alpha_temperature"], "mask_ratio": s["mask_ratio"], "alpha_mix": s["alpha_mix"],
    }


# ---------------------------------------------------------------------------
# atomic output helpers


def _write_bytes(path: Path, data: bytes) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_bytes(data)
        os.replace(tmp, path)
    except OSError as exc:
        raise CLIError(f"cannot write {path}: {exc}", EXIT_IO) from exc


def write_json(path: Path, obj) -> None:
    _write_bytes(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode("utf-8"))


def write_csv(path: Path, rows, columns) -> None:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n", extrasaction="ignore")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    _write_bytes(path, buf.getvalue().encode("utf-8"))


def read_corpus(path) -> list:
    try:
        return hamgen.read_jsonl(path)
    except OSError as exc:
        raise CLIError(f"cannot read corpus {path}: {exc}", EXIT_IO) from exc
    except DatasetFormatError as exc:
        raise CLIError(str(exc)) from exc


def load_checkpoint(path) -> ckpt_io.ModelCheckpoint:
    try:
        return ckpt_io.load(path)
    except OSError as exc:
        raise CLIError(f"cannot read checkpoint {path}: {exc}", EXIT_IO) from exc
    except ckpt_io.CheckpointFormatError as exc:
        raise CLIError(str(exc)) from exc


def _out(args, cfg: dict, default_name: str) -> Path:
    return Path(args.out) if args.out else Path(cfg["output_dir"]) / default_name


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen(args, cfg) -> int:
    records = hamgen.generate_many(family_specs(cfg))
    records = hamgen.split_dataset(records, tuple(cfg["corpus"]["split"]), seed=int(cfg["seed"]))
    out = _out(args, cfg, "corpus.jsonl")
    payload = hamgen.dumps_jsonl(records).encode("utf-8")
    _write_bytes(out, payload)
    counts = {}
    for r in records:
        counts.setdefault(r.family, {}).setdefault(r.split, 0)
        counts[r.family][r.split] += 1
    manifest = {"schema_version": SCHEMA_VERSION, "file": out.name, "records": len(records), "seed": cfg["seed"],
                "sha256": hashlib.sha256(payload).hexdigest(), "counts": counts,
                "summary": hamgen.summarize(records)}
    write_json(out.with_suffix(".manifest.json"), manifest)
    print(f"wrote {len(records)} records to {out} (sha256 {manifest['sha256'][:12]})")
    return EXIT_OK


def cmd_pretrain(args, cfg) -> int:
    records = read_corpus(args.corpus)
    train = [r for r in records if r.split in (None, "train")]
    out = _out(args, cfg, "model.ckpt")
    try:
        if args.resume:
            model = HMAEPretrainer().resume(load_checkpoint(args.resume), train, args.steps)
        else:
            model = HMAEPretrainer(**pretrainer_params(cfg)).fit(train, n_steps=args.steps)
    except NumericalAbort as exc:
        write_json(out.with_suffix(".abort.json"), exc.snapshot)
        raise CLIError(f"numerical abort: {exc}", EXIT_NUMERICAL) from exc
    except (ConfigError, ValueError) as exc:
        raise CLIError(str(exc)) from exc
    _write_bytes(out, ckpt_io.to_bytes(model.checkpoint_))
    _write_bytes(out.with_suffix(".metrics.csv"), metrics_csv(model.metrics_).encode("utf-8"))
    last = model.metrics_[-1] if model.metrics_ else {}
    print(f"trained to step {model.state_.step}; final loss {last.get('loss_total', float('nan')):.6f}; "
          f"checkpoint {out}")
    return EXIT_OK


def _encoders(args, cfg):
    ckpt = load_checkpoint(args.checkpoint)
    encoder = HMAEEncoder(ckpt).fit()
    scratch = None
    if args.with_scratch or cfg["finetune"]["with_scratch"]:
        scratch = HMAEEncoder.scratch(ModelConfig.from_dict(ckpt.config["model"]), encoder.tokenizer_config_,
                                      seed=int(ckpt.config.get("seed", 0)))
    return encoder, scratch


def cmd_finetune_eval(args, cfg) -> int:
    ft = cfg["finetune"]
    task = args.task or ft["task"]
    k = args.k if args.k is not None else ft["k"]
    seeds = args.seeds if args.seeds is not None else ft["seeds"]
    encoder, scratch = _encoders(args, cfg)
    try:
        result = experiments.finetune_eval(encoder, read_corpus(args.corpus), task, k, seeds, ft["family"], scratch)
    except ValueError as exc:
        raise CLIError(str(exc)) from exc
    result["schema_version"] = SCHEMA_VERSION
    write_json(_out(args, cfg, f"finetune_{task}.json"), result)
    print(json.dumps({key: v["mean"] for key, v in result["pretrained"].items()}))
    return EXIT_OK


def cmd_qmi_verify(args, cfg) -> int:
    q = cfg["qmi_verify"]
    try:
        strategies = [SaliencyStrategy(Kind(name)) for name in q["strategies"]]
        records = experiments.qmi_hamiltonians(int(q["n_hamiltonians"]), q["sizes"], int(cfg["seed"]))
    except ValueError as exc:
        raise CLIError(str(exc)) from exc
    rows, summary = experiments.qmi_verify(records, strategies, float(q["beta"]), int(q["n_masks"]), int(cfg["seed"]))
    out = _out(args, cfg, "qmi_verify.csv")
    write_csv(out, rows, experiments.QMI_COLUMNS)
    summary["schema_version"] = SCHEMA_VERSION
    write_json(out.with_suffix(".summary.json"), summary)
    for name, entry in summary["strategies"].items():
        p = entry.get("sign_test_p")
        print(f"{name:>14s}  mean QMI {entry['mean_qmi_nats']:.4f} nats" + ("" if p is None else f"  p={p:.3g}"))
    return EXIT_OK


def cmd_mask_compare(args, cfg) -> int:
    mc = cfg["mask_compare"]
    params = pretrainer_params(cfg)
    params["total_steps"] = int(mc["total_steps"])
    params.pop("random_state")
    try:
        rows = experiments.mask_compare(read_corpus(args.corpus), params, mc["variants"], int(mc["seeds"]),
                                        int(mc["k"]), int(mc["eval_seeds"]), mc["family"])
    except NumericalAbort as exc:
        raise CLIError(f"numerical abort: {exc}", EXIT_NUMERICAL) from exc
    except ValueError as exc:
        raise CLIError(str(exc)) from exc
    write_csv(_out(args, cfg, "mask_compare.csv"), rows, experiments.ABLATION_COLUMNS)
    for row in rows:
        print(f"{row['variant']:>14s}  acc {row['accuracy_mean']:.3f} ({row['delta_accuracy']:+.3f})  "
              f"mae {row['mae_mean']:.3f} ({row['delta_mae']:+.3f})")
    return EXIT_OK


def cmd_active_learn(args, cfg) -> int:
    a, seed = cfg["active"], int(cfg["seed"])
    if args.checkpoint:
        encoder = HMAEEncoder(load_checkpoint(args.checkpoint)).fit()
    else:
        tok = TokenizerConfig(int(a["n_qubits"]), int(cfg["tokenizer"]["max_locality"]))
        m = cfg["model"]
        model_cfg = ModelConfig(token_dim=2 + 3 * tok.max_locality + tok.n_qubits, n_sites=tok.n_qubits,
                                **{key: m[key] for key in ("d_model", "n_layers", "n_heads", "decoder_layers",
                                                           "dropout", "max_seq_len")})
        logger.warning("no --checkpoint given; using a randomly initialized encoder")
        encoder = HMAEEncoder.scratch(model_cfg, tok, seed)
    try:
        pool = experiments.tfim_pool(a["n_qubits"], a["pool_size"], seed * 10 + 1, a["h_range"])
        test = experiments.tfim_pool(a["n_qubits"], a["test_size"], seed * 10 + 2, a["h_range"])
        val = experiments.tfim_pool(a["n_qubits"], a["val_size"], seed * 10 + 3, a["h_range"]) if a["val_size"] else None
        rows = experiments.active_learn(encoder, pool, test, val, a["acquisitions"], int(a["k"]), int(a["budget"]),
                                        int(a["seeds"]), int(a["seed_per_class"]), int(a["ensemble_size"]))
    except ValueError as exc:
        raise CLIError(str(exc)) from exc
    out = _out(args, cfg, "active_curves.csv")
    write_csv(out, rows, ("seed",) + experiments.active.CURVE_COLUMNS)
    table = experiments.efficiency_table(rows)
    write_json(out.with_suffix(".summary.json"), {"schema_version": SCHEMA_VERSION,
                                                  "labels_to_90pct_final": table})
    for name, labels in table.items():
        print(f"{name:>22s}  labels to 90% of final accuracy: {labels:.1f}")
    return EXIT_OK


def cmd_gradcheck(args, cfg) -> int:
    results = check_gradients(seed=int(cfg["seed"]))
    bad = [r for r in results if not r.rel_error < args.tol]
    for r in results:
        print(f"{'FAIL' if r in bad else 'ok':>4s}  {r.name:<45s} rel_err={r.rel_error:.3e}")
    w = worst(results)
    print(f"worst tensor: {w.name} ({w.rel_error:.3e})")
    return EXIT_NUMERICAL if bad else EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hmae", description="Masked-autoencoder pipeline for spin Hamiltonians")
    parser.add_argument("--print-default-config", action="store_true",
                        help="print the default run config with per-section notes and exit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command")

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="run config JSON (unknown keys are rejected)")
        p.add_argument("--out", help="output path")
        p.set_defaults(func=func)
        return p

    add("gen", cmd_gen, "generate a labeled corpus (JSONL + manifest)")
    p = add("pretrain", cmd_pretrain, "pre-train the masked autoencoder")
    p.add_argument("--corpus", required=True)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--steps", type=int, help="stop after this many steps (the schedule still spans train.total_steps)")
    p = add("finetune-eval", cmd_finetune_eval, "K-shot fine-tune and evaluate a frozen encoder")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--task", choices=("phase", "energy"))
    p.add_argument("--k", type=int, choices=(5, 10, 20))
    p.add_argument("--seeds", type=int)
    p.add_argument("--with-scratch", action="store_true")
    add("qmi-verify", cmd_qmi_verify, "measure QMI retained by each masking strategy")
    p = add("mask-compare", cmd_mask_compare, "masking-strategy ablation table")
    p.add_argument("--corpus", required=True)
    p = add("active-learn", cmd_active_learn, "active-learning curves on a TFIM pool")
    p.add_argument("--checkpoint")
    p = add("gradcheck", cmd_gradcheck, "finite-difference gradient check of the minimal model")
    p.add_argument("--tol", type=float, default=1e-4)
    return parser


def _limit_threads() -> None:
    value = os.environ.get("HMAE_THREADS")
    if value:
        try:
            torch.set_num_threads(max(1, int(value)))
        except ValueError:
            raise CLIError(f"HMAE_THREADS must be an integer, got {value!r}")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.print_default_config:
        print(json.dumps({"config": DEFAULT_CONFIG, "notes": CONFIG_DOC}, indent=2))
        return EXIT_OK
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_CONFIG
    try:
        _limit_threads()
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except CLIError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
