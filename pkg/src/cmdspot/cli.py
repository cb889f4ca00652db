"""Command-line interface.

Subcommands: prepare, train, eval, infer, sweep, inspect-checkpoint.
Exit codes: 0 success, 2 validation/usage failure, 3 numeric fault during
training.  Run configuration lives in a JSON file; command-line flags
override file values; the fully resolved config is written next to every
training run so the run can be reproduced from it alone.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio_io import (
    LabelMap,
    SplitSpec,
    build_manifest,
    carve_noise_clips,
    read_manifest,
    read_wav,
    scan_synthetic,
    write_manifest,
)
from .augment import AugmentationPolicy, ImpulseResponseSet, NoiseBank
from .errors import CmdspotError, ConfigError, NumericFaultError, ValidationError
from .features import FeatureConfig, MaskSpec, mfcc
from .model import ModelConfig, load_checkpoint, param_count
from .training import TrainConfig, evaluate, train

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3

# Table-shaped default sweep grid: (d_model, heads, layers).
DEFAULT_GRID = (
    (64, 4, 2),
    (64, 4, 1),
    (64, 2, 2),
    (64, 2, 1),
    (96, 4, 2),
    (96, 4, 1),
    (96, 2, 2),
    (96, 2, 1),
    (128, 4, 2),
    (128, 4, 1),
    (128, 2, 2),
    (128, 2, 1),
)

_PATH_KEYS = ("manifest", "output_dir", "dataset_root", "synthetic_root", "noise_dir", "rir_dir")


@dataclass
class RunConfig:
    """Composite run configuration; round-trips losslessly through JSON."""

    feature: FeatureConfig
    policy: AugmentationPolicy
    mask: MaskSpec
    model: ModelConfig
    train: TrainConfig
    paths: dict

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.to_dict(),
            "augment": {
                "lambda_rate": self.policy.lambda_rate,
                "gamma_rate": self.policy.gamma_rate,
                "time_ops": list(self.policy.time_ops),
                "freq_ops": list(self.policy.freq_ops),
                "rng_seed": self.policy.rng_seed,
                "normalize_impulse_responses": self.policy.normalize_impulse_responses,
            },
            "mask": {
                "max_time_mask_frames": self.mask.max_time_mask_frames,
                "max_freq_mask_bins": self.mask.max_freq_mask_bins,
                "n_time_masks": self.mask.n_time_masks,
                "n_freq_masks": self.mask.n_freq_masks,
            },
            "model": self.model.to_dict(),
            "train": self.train.to_dict(),
            "paths": {k: self.paths.get(k) for k in _PATH_KEYS},
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        model_section = dict(raw.get("model", {}))
        model_section.setdefault("d_model", 64)
        model_section.setdefault("n_heads", 2)
        model_section.setdefault("n_layers", 2)
        train_section = dict(raw.get("train", {}))
        if "epochs" not in train_section:
            raise ConfigError("train.epochs is required (no default exists); set --epochs")
        augment_section = dict(raw.get("augment", {}))
        return cls(
            feature=FeatureConfig(**raw.get("feature", {})),
            policy=AugmentationPolicy(**augment_section),
            mask=MaskSpec(**raw.get("mask", {})),
            model=ModelConfig(**model_section),
            train=TrainConfig(**train_section),
            paths={k: raw.get("paths", {}).get(k) for k in _PATH_KEYS},
        )


def _load_config_file(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise ValidationError(f"--config file not found: {p}")
    return json.loads(p.read_text(encoding="utf-8"))


def _merge_section(raw: dict, section: str, overrides: dict) -> None:
    updates = {k: v for k, v in overrides.items() if v is not None}
    if updates:
        raw.setdefault(section, {})
        raw[section].update(updates)


def _resolve_train_config(args) -> RunConfig:
    raw = _load_config_file(getattr(args, "config", None))
    _merge_section(
        raw,
        "model",
        {
            "d_model": args.d_model,
            "n_heads": args.heads,
            "n_layers": args.layers,
            "ff_expansion": args.ff_expansion,
            "conv_kernel": args.conv_kernel,
            "gru_hidden": args.gru_hidden,
            "dropout": args.dropout,
        },
    )
    _merge_section(
        raw,
        "train",
        {
            "epochs": args.epochs,
            "batch_size": args.batch_size,
            "lr0": args.lr,
            "seed": args.seed,
        },
    )
    _merge_section(
        raw,
        "augment",
        {
            "lambda_rate": args.lambda_rate,
            "gamma_rate": args.gamma_rate,
            "rng_seed": args.seed,
        },
    )
    _merge_section(
        raw,
        "paths",
        {
            "manifest": args.manifest,
            "output_dir": args.out,
            "synthetic_root": args.synthetic,
            "noise_dir": args.noise_dir,
            "rir_dir": args.rir_dir,
        },
    )
    return RunConfig.from_dict(raw)


def _load_augment_resources(cfg: RunConfig):
    """Load the noise bank / impulse responses the policy can actually reach."""
    policy = cfg.policy
    reachable = set(policy.time_ops) if policy.lambda_rate < 1.0 else set()
    bank = None
    irs = None
    if "noise" in reachable:
        if not cfg.paths.get("noise_dir"):
            raise ConfigError(
                "augmentation can schedule 'noise' but no --noise-dir was given "
                "(or set augment.lambda_rate to 1.0)"
            )
        bank = NoiseBank.from_directory(cfg.paths["noise_dir"])
    if "reverb" in reachable:
        if not cfg.paths.get("rir_dir"):
            raise ConfigError(
                "augmentation can schedule 'reverb' but no --rir-dir was given "
                "(or set augment.lambda_rate to 1.0)"
            )
        irs = ImpulseResponseSet.from_directory(
            cfg.paths["rir_dir"], normalize=policy.normalize_impulse_responses
        )
    return bank, irs


def _load_entries(cfg: RunConfig) -> list:
    manifest = cfg.paths.get("manifest")
    if not manifest or not Path(manifest).is_file():
        raise ValidationError(f"--manifest file not found: {manifest}")
    entries = read_manifest(manifest)
    synthetic = cfg.paths.get("synthetic_root")
    if synthetic:
        entries = entries + scan_synthetic(synthetic)
    return entries


# --------------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------------


def cmd_prepare(args) -> int:
    dataset = Path(args.dataset)
    if not dataset.is_dir():
        raise ValidationError(f"--dataset directory not found: {dataset}")
    explicit = None
    if args.split_file:
        split_path = Path(args.split_file)
        if not split_path.is_file():
            raise ValidationError(f"--split-file not found: {split_path}")
        explicit = json.loads(split_path.read_text(encoding="utf-8"))
    try:
        fractions = tuple(float(x) for x in args.fractions.split(","))
    except ValueError as err:
        raise ValidationError(f"--fractions must be three numbers: {err}") from err
    spec = SplitSpec(fractions=fractions, by=args.split_by, explicit=explicit)

    if args.synthetic and not Path(args.synthetic).is_dir():
        raise ValidationError(f"--synthetic directory not found: {args.synthetic}")
    entries = build_manifest(dataset, args.synthetic, spec, seed=args.seed)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.noise:
        noise_dir = Path(args.noise)
        if not noise_dir.is_dir():
            raise ValidationError(f"--noise directory not found: {noise_dir}")
        sources = [read_wav(p) for p in sorted(noise_dir.glob("*.wav"))]
        entries = entries + carve_noise_clips(
            sources, args.noise_count, args.clip_seconds, args.seed, out_dir / "noise_clips"
        )

    manifest_path = out_dir / "manifest.jsonl"
    write_manifest(entries, manifest_path)

    labels = sorted({e.label for e in entries})
    print(f"wrote {manifest_path} ({len(entries)} entries, {len(labels)} labels)")
    for split in ("train", "dev", "test"):
        n = sum(1 for e in entries if e.split == split)
        print(f"  {split:>5}: {n}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _resolve_train_config(args)
    entries = _load_entries(cfg)
    bank, irs = _load_augment_resources(cfg)
    out_dir = Path(cfg.paths.get("output_dir") or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    resolved = dict(cfg.to_dict())
    resolved["paths"]["output_dir"] = str(out_dir)
    (out_dir / "resolved-config.json").write_text(
        json.dumps(resolved, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )
    result = train(
        entries,
        cfg.policy,
        cfg.feature,
        cfg.model,
        cfg.train,
        out_dir,
        noise_bank=bank,
        impulse_responses=irs,
        mask_spec=cfg.mask,
    )
    best = result.metrics[result.best_epoch]
    print(
        f"trained {cfg.train.epochs} epochs; best dev accuracy "
        f"{best['dev_acc']:.2f} at epoch {result.best_epoch}"
    )
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"metrics: {out_dir / 'metrics.jsonl'}")
    return EXIT_OK


def _write_confusion_csv(path, confusion, labels) -> None:
    lines = ["label," + ",".join(labels)]
    for label, row in zip(labels, confusion):
        lines.append(label + "," + ",".join(str(int(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_eval(args) -> int:
    ck_path = Path(args.checkpoint)
    if not ck_path.is_file():
        raise ValidationError(f"--checkpoint file not found: {ck_path}")
    manifest_path = Path(args.manifest)
    if not manifest_path.is_file():
        raise ValidationError(f"--manifest file not found: {manifest_path}")
    entries = [e for e in read_manifest(manifest_path) if e.split == args.split]
    if not entries:
        raise ValidationError(f"manifest has no entries in split {args.split!r}")
    feature_config = None
    if args.config:
        raw = _load_config_file(args.config)
        feature_config = FeatureConfig(**raw.get("feature", {}))
    result = evaluate(entries, str(ck_path), feature_config=feature_config)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    confusion_path = out_dir / "confusion.csv"
    _write_confusion_csv(confusion_path, result.confusion, result.labels)
    print(f"accuracy: {result.accuracy:.2f}")
    print(f"confusion matrix: {confusion_path}")
    return EXIT_OK


def cmd_infer(args) -> int:
    ck_path = Path(args.checkpoint)
    if not ck_path.is_file():
        raise ValidationError(f"--checkpoint file not found: {ck_path}")
    ck = load_checkpoint(ck_path)
    feat_cfg = FeatureConfig(**ck.feature_config)
    wave = read_wav(args.wav)
    if wave.sample_rate != feat_cfg.sample_rate:
        raise ValidationError(
            f"{args.wav} is {wave.sample_rate} Hz but the model expects "
            f"{feat_cfg.sample_rate} Hz; resample it first"
        )
    if len(wave) < feat_cfg.window_samples:
        raise ValidationError(
            f"{args.wav} is shorter than one analysis window "
            f"({feat_cfg.window_samples} samples)"
        )
    feat = mfcc(wave, feat_cfg)
    from .model import model_forward  # local import keeps CLI import cheap

    out = model_forward(feat.data, ck.params, ck.model_config, mode="eval")
    probs = np.exp(out.log_probs.astype(np.float64))
    order = np.argsort(-probs, kind="stable")[: args.top_k]
    label_map = LabelMap()
    for idx in order:
        label = ck.labels[idx]
        display = label_map.display(label)
        suffix = f"\t{display}" if display else ""
        print(f"{label}\t{probs[idx]:.6f}{suffix}")
    return EXIT_OK


def _parse_grid(text: str) -> list:
    cells = []
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        pieces = part.split(",")
        if len(pieces) != 3:
            raise ValidationError(f"--grid cell {part!r} must be d_model,heads,layers")
        cells.append(tuple(int(p) for p in pieces))
    if not cells:
        raise ValidationError("--grid is empty")
    return cells


def cmd_sweep(args) -> int:
    grid = _parse_grid(args.grid) if args.grid is not None else list(DEFAULT_GRID)
    cfg = _resolve_train_config(args)
    entries = _load_entries(cfg)
    bank, irs = _load_augment_resources(cfg)
    out_dir = Path(cfg.paths.get("output_dir") or ".")
    out_dir.mkdir(parents=True, exist_ok=True)

    rows = []
    for d_model, heads, layers in grid:
        base = cfg.model.to_dict()
        base.update({"d_model": d_model, "n_heads": heads, "n_layers": layers})
        row = {"d_model": d_model, "h": heads, "n_layers": layers, "acc": None, "error": ""}
        try:
            model_config = ModelConfig(**base)
            row["params"] = param_count(model_config)
            cell_dir = out_dir / f"cell_d{d_model}_h{heads}_n{layers}"
            result = train(
                entries,
                cfg.policy,
                cfg.feature,
                model_config,
                cfg.train,
                cell_dir,
                noise_bank=bank,
                impulse_responses=irs,
                mask_spec=cfg.mask,
            )
            score_split = "test" if any(e.split == "test" for e in entries) else "dev"
            scored = [e for e in entries if e.split == score_split]
            row["acc"] = evaluate(scored, result.checkpoint_path).accuracy
        except Exception as err:  # record the cell failure, keep sweeping
            row.setdefault("params", "")
            row["error"] = str(err)
        rows.append(row)

    csv_path = out_dir / "sweep.csv"
    lines = ["d_model,h,n_layers,acc,params,error"]
    for r in rows:
        acc = "" if r["acc"] is None else f"{r['acc']:.2f}"
        lines.append(f"{r['d_model']},{r['h']},{r['n_layers']},{acc},{r['params']},{r['error']}")
    csv_path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    header = f"{'d_model':>8} {'h':>3} {'N':>3} {'acc':>7} {'params':>9}"
    print(header)
    print("-" * len(header))
    for r in rows:
        acc = "  error" if r["acc"] is None else f"{r['acc']:7.2f}"
        print(f"{r['d_model']:>8} {r['h']:>3} {r['n_layers']:>3} {acc} {r['params']:>9}")
    print(f"sweep table: {csv_path}")
    return EXIT_OK


def cmd_inspect_checkpoint(args) -> int:
    ck_path = Path(args.checkpoint)
    if not ck_path.is_file():
        raise ValidationError(f"checkpoint file not found: {ck_path}")
    ck = load_checkpoint(ck_path)
    summary = {
        "format_version": ck.header["format_version"],
        "model_config": ck.header["model_config"],
        "feature_fingerprint": ck.feature_fingerprint,
        "labels": len(ck.labels),
        "seeds": ck.seeds,
        "epoch": ck.epoch,
        "tensors": len(ck.header["tensors"]),
        "total_parameters": ck.params.total_count(),
    }
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run config; flags override file values")
    p.add_argument("--manifest", help="manifest.jsonl from `prepare`")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, default=None, help="global seed")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None, help="initial learning rate")
    p.add_argument("--d-model", type=int, default=None)
    p.add_argument("--heads", type=int, default=None)
    p.add_argument("--layers", type=int, default=None)
    p.add_argument("--ff-expansion", type=int, default=None)
    p.add_argument("--conv-kernel", type=int, default=None)
    p.add_argument("--gru-hidden", type=int, default=None)
    p.add_argument("--dropout", type=float, default=None)
    p.add_argument("--lambda-rate", type=float, default=None, help="time-domain augmentation rate")
    p.add_argument("--gamma-rate", type=float, default=None, help="frequency-domain augmentation rate")
    p.add_argument("--noise-dir", help="directory of noise wavs for injection")
    p.add_argument("--rir-dir", help="directory of impulse-response wavs")
    p.add_argument("--synthetic", help="synthetic audio tree; entries join the train split")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cmdspot", description="Spoken-command spotting toolkit."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="build dataset manifests and carve noise clips")
    p.add_argument("--dataset", required=True, help="root with one directory per command")
    p.add_argument("--synthetic", help="synthetic audio tree (train split only)")
    p.add_argument("--noise", help="directory of long noise recordings")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fractions", default="0.6,0.2,0.2", help="train,dev,test fractions")
    p.add_argument("--split-by", choices=("file", "speaker"), default="file")
    p.add_argument("--split-file", help="explicit JSON mapping of file name to split")
    p.add_argument("--noise-count", type=int, default=300, help="noise clips to carve")
    p.add_argument("--clip-seconds", type=float, default=1.0)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train a classifier")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a manifest split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", choices=("train", "dev", "test"), default="test")
    p.add_argument("--out", default=".", help="where confusion.csv is written")
    p.add_argument("--config", help="run config whose feature section must match the checkpoint")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="classify a single wav file")
    p.add_argument("wav")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--top-k", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("sweep", help="train a grid of (d_model, heads, layers) cells")
    _add_train_flags(p)
    p.add_argument(
        "--grid",
        default=None,
        help="cells as 'd,h,N;d,h,N;...'; default is the full 12-cell grid",
    )
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("inspect-checkpoint", help="print a checkpoint header summary")
    p.add_argument("checkpoint")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_inspect_checkpoint)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else int(exc.code)
    try:
        return args.func(args)
    except NumericFaultError as err:
        print(f"numeric fault: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CmdspotError, OSError, json.JSONDecodeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE


def run() -> None:
    sys.exit(main())
