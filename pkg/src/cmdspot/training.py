"""Optimization loop: NLL loss, Adam with linear LR decay, accuracy,
checkpointing, and evaluation.

Reproducibility contract: shuffling, augmentation, and dropout all draw
from streams derived from (seed, purpose, utterance/epoch/batch keys), so
two runs with identical configs and seeds produce identical parameters,
metrics, and checkpoints.  Evaluation never consults the augmentation
policy and applies no dropout.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .audio_io import LabelMap, read_wav
from .augment import AugmentationPolicy, ImpulseResponseSet, NoiseBank, apply_time_augment
from .errors import (
    ConfigError,
    EmptyInputError,
    NumericFaultError,
    ScheduleDomainError,
    ValidationError,
)
from .features import FeatureConfig, MaskSpec, apply_freq_augment, mfcc
from .model import (
    Checkpoint,
    ModelConfig,
    Parameters,
    init_parameters,
    load_checkpoint,
    model_backward,
    model_forward,
    save_checkpoint,
)
from .rng import derive_rng

# Waveforms are kept in memory when the manifest is small enough; larger
# runs re-read from disk every epoch.
_CACHE_MAX_ENTRIES = 5000

_EVAL_BATCH = 64


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    lr0: float = 1e-3
    batch_size: int = 256
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip: float | None = None

    def __post_init__(self):
        if self.lr0 <= 0:
            raise ValidationError(f"lr0 must be positive, got {self.lr0}")
        if self.epochs < 1:
            raise ValidationError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class Batch:
    """Right-padded feature batch with true lengths and class labels."""

    features: np.ndarray  # (batch, frames, n_features)
    lengths: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if self.features.ndim != 3:
            raise ValidationError("batch features must be 3-D")
        if self.lengths.shape[0] != self.features.shape[0]:
            raise ValidationError("one length per batch row required")
        if self.lengths.max() > self.features.shape[1] or self.lengths.min() < 1:
            raise ValidationError("lengths must lie in [1, padded frames]")
        if self.labels.shape[0] != self.features.shape[0]:
            raise ValidationError("one label per batch row required")

    def __len__(self) -> int:
        return self.features.shape[0]


class OptimizerState:
    """Per-parameter Adam moment accumulators and the shared step counter."""

    def __init__(self, m: dict, v: dict, step: int = 0):
        self.m = m
        self.v = v
        self.step = step

    @classmethod
    def for_params(cls, params: Parameters) -> "OptimizerState":
        return cls(
            m={k: np.zeros_like(a) for k, a in params.arrays.items()},
            v={k: np.zeros_like(a) for k, a in params.arrays.items()},
        )


def nll_loss(log_probs, labels) -> float:
    """Mean over the batch of -log_prob[label]."""
    lp = np.asarray(log_probs, dtype=np.float64)
    if lp.ndim == 1:
        lp = lp[None]
    labels = np.asarray(labels).reshape(-1)
    if labels.shape[0] != lp.shape[0]:
        raise ValidationError("one label per row required")
    if labels.min() < 0 or labels.max() >= lp.shape[1]:
        raise IndexError(f"label out of range [0, {lp.shape[1]})")
    return float(-lp[np.arange(lp.shape[0]), labels].mean())


def nll_gradient(log_probs, labels) -> np.ndarray:
    """d(mean NLL)/d(log_probs): -1/N at each row's true label."""
    lp = np.asarray(log_probs)
    squeeze = lp.ndim == 1
    if squeeze:
        lp = lp[None]
    labels = np.asarray(labels).reshape(-1)
    grad = np.zeros_like(lp)
    grad[np.arange(lp.shape[0]), labels] = -1.0 / lp.shape[0]
    return grad[0] if squeeze else grad


def lr_at(epoch: int, total_epochs: int, lr0: float) -> float:
    """Linear decay lr0 * (1 - e/E), held constant within an epoch."""
    if not 0 <= epoch < total_epochs:
        raise ScheduleDomainError(
            f"epoch {epoch} outside schedule domain [0, {total_epochs})"
        )
    return lr0 * (1.0 - epoch / total_epochs)


def adam_step(
    params: Parameters,
    grads: dict,
    state: OptimizerState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    grad_clip: float | None = None,
) -> tuple:
    """One bias-corrected Adam update, in place; returns (params, state)."""
    if lr <= 0:
        raise ValidationError(f"learning rate must be positive, got {lr}")
    for name in params.names():
        if name not in grads:
            raise ValidationError(f"missing gradient for {name}")
        if not np.isfinite(grads[name]).all():
            raise NumericFaultError(f"non-finite gradient in {name}", where=name)

    if grad_clip is not None:
        total = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
        if total > grad_clip:
            scale = grad_clip / total
            grads = {k: g * scale for k, g in grads.items()}

    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for name in params.names():
        g = grads[name].astype(params[name].dtype, copy=False)
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        update = (m / bc1) / (np.sqrt(v / bc2) + eps)
        params.arrays[name] -= (lr * update).astype(params[name].dtype, copy=False)
    return params, state


def accuracy(predictions, labels) -> float:
    """Percentage of argmax predictions equal to the labels.

    ``predictions`` is either a (n, classes) score matrix (ties break to
    the lowest class index) or an already-argmaxed integer vector.
    """
    preds = np.asarray(predictions)
    labels = np.asarray(labels).reshape(-1)
    if labels.size == 0:
        raise ValidationError("accuracy of an empty set is undefined")
    if preds.ndim == 2:
        preds = preds.argmax(axis=1)
    if preds.shape != labels.shape:
        raise ValidationError("predictions and labels must align")
    return float((preds == labels).mean() * 100.0)


# --------------------------------------------------------------------------
# Data plumbing
# --------------------------------------------------------------------------


class _AudioLoader:
    def __init__(self, entries):
        self._cache = {} if len(entries) <= _CACHE_MAX_ENTRIES else None

    def load(self, entry):
        if self._cache is not None and entry.path in self._cache:
            return self._cache[entry.path]
        wave = read_wav(entry.path)
        if self._cache is not None:
            self._cache[entry.path] = wave
        return wave


def _pad_batch(feature_list, labels) -> Batch:
    lengths = np.array([f.shape[0] for f in feature_list], dtype=np.int64)
    t_max = int(lengths.max())
    width = feature_list[0].shape[1]
    out = np.zeros((len(feature_list), t_max, width), dtype=np.float32)
    for i, f in enumerate(feature_list):
        out[i, : f.shape[0]] = f
    return Batch(features=out, lengths=lengths, labels=np.asarray(labels, dtype=np.int64))


def _chunks(seq, size):
    for i in range(0, len(seq), size):
        yield seq[i : i + size]


def _forward_eval_logprobs(entries, loader, params, model_config, feature_config, label_map):
    """Eval-mode log-probs and labels for a list of manifest entries."""
    log_probs = []
    labels = []
    for group in _chunks(entries, _EVAL_BATCH):
        feats = [mfcc(loader.load(e), feature_config).data for e in group]
        batch = _pad_batch(feats, [label_map.index(e.label) for e in group])
        out = model_forward(
            batch.features, params, model_config, mode="eval", lengths=batch.lengths
        )
        log_probs.append(out.log_probs)
        labels.append(batch.labels)
    return np.concatenate(log_probs), np.concatenate(labels)


def _confusion(log_probs, labels, n_classes) -> np.ndarray:
    matrix = np.zeros((n_classes, n_classes), dtype=np.int64)
    preds = log_probs.argmax(axis=1)
    for true, pred in zip(labels, preds):
        matrix[true, pred] += 1
    return matrix


# --------------------------------------------------------------------------
# Training and evaluation
# --------------------------------------------------------------------------


@dataclass
class TrainResult:
    metrics: list
    checkpoint_path: str
    params: Parameters
    best_epoch: int


def metrics_line(row: dict) -> str:
    keys = ("epoch", "lr", "train_loss", "dev_acc", "wall_s")
    return json.dumps({k: row[k] for k in keys}, separators=(",", ":"))


def train(
    manifest,
    policy: AugmentationPolicy,
    feature_config: FeatureConfig,
    model_config: ModelConfig,
    train_config: TrainConfig,
    out_dir,
    noise_bank: NoiseBank | None = None,
    impulse_responses: ImpulseResponseSet | None = None,
    mask_spec: MaskSpec | None = None,
    label_map: LabelMap | None = None,
) -> TrainResult:
    """Full training run over a manifest.

    Per epoch: seeded shuffle of the train split; per batch: load audio,
    time-domain augmentation, MFCC, feature-space masks, forward, NLL,
    backward, Adam at lr(e, E).  After each epoch the dev split is scored
    in eval mode (no augmentation); the best-dev checkpoint is retained
    with ties going to the later epoch.
    """
    label_map = label_map or LabelMap()
    mask_spec = mask_spec or MaskSpec()
    train_entries = [e for e in manifest if e.split == "train"]
    dev_entries = [e for e in manifest if e.split == "dev"]
    if not train_entries or not dev_entries:
        raise ValidationError("manifest must provide non-empty train and dev splits")

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics_path = out_dir / "metrics.jsonl"
    checkpoint_path = out_dir / "checkpoint_best.ckpt"

    loader = _AudioLoader(train_entries + dev_entries)
    params = init_parameters(model_config, train_config.seed)
    state = OptimizerState.for_params(params)
    seeds = {"train_seed": train_config.seed, "augment_seed": policy.rng_seed}

    metrics = []
    best_acc = -1.0
    best_epoch = -1
    epochs = train_config.epochs
    with open(metrics_path, "w", encoding="utf-8") as metrics_file:
        for epoch in range(epochs):
            t0 = time.perf_counter()
            lr = lr_at(epoch, epochs, train_config.lr0)
            order = derive_rng(train_config.seed, "shuffle", epoch).permutation(
                len(train_entries)
            )
            loss_sum = 0.0
            seen = 0
            for batch_index, idx_group in enumerate(
                _chunks(order, train_config.batch_size)
            ):
                entries = [train_entries[i] for i in idx_group]
                feats = []
                for entry in entries:
                    arng = derive_rng(policy.rng_seed, "augment", entry.id, epoch)
                    wave = apply_time_augment(
                        loader.load(entry), policy, noise_bank, impulse_responses, arng
                    )
                    feat = mfcc(wave, feature_config)
                    feat = apply_freq_augment(feat, mask_spec, policy, arng)
                    feats.append(feat.data)
                batch = _pad_batch(feats, [label_map.index(e.label) for e in entries])
                drng = derive_rng(train_config.seed, "dropout", epoch, batch_index)
                try:
                    out = model_forward(
                        batch.features,
                        params,
                        model_config,
                        mode="train",
                        rng=drng,
                        lengths=batch.lengths,
                    )
                    loss = nll_loss(out.log_probs, batch.labels)
                    grads = model_backward(out, nll_gradient(out.log_probs, batch.labels))
                    adam_step(
                        params,
                        grads,
                        state,
                        lr,
                        beta1=train_config.adam_beta1,
                        beta2=train_config.adam_beta2,
                        eps=train_config.adam_eps,
                        grad_clip=train_config.grad_clip,
                    )
                except NumericFaultError as err:
                    raise NumericFaultError(
                        f"epoch {epoch}, batch {batch_index}: {err}", where=err.where
                    ) from err
                loss_sum += loss * len(batch)
                seen += len(batch)

            dev_lp, dev_labels = _forward_eval_logprobs(
                dev_entries, loader, params, model_config, feature_config, label_map
            )
            dev_acc = accuracy(dev_lp, dev_labels)
            row = {
                "epoch": epoch,
                "lr": lr,
                "train_loss": loss_sum / seen,
                "dev_acc": dev_acc,
                "wall_s": round(time.perf_counter() - t0, 3),
            }
            metrics.append(row)
            metrics_file.write(metrics_line(row) + "\n")
            metrics_file.flush()

            if dev_acc >= best_acc:
                best_acc = dev_acc
                best_epoch = epoch
                save_checkpoint(
                    checkpoint_path,
                    params,
                    model_config,
                    feature_config.fingerprint(),
                    feature_config.to_dict(),
                    label_map,
                    seeds,
                    epoch,
                )

    return TrainResult(
        metrics=metrics,
        checkpoint_path=str(checkpoint_path),
        params=params,
        best_epoch=best_epoch,
    )


@dataclass
class EvalResult:
    accuracy: float
    confusion: np.ndarray
    labels: list


def evaluate(
    entries,
    checkpoint: Checkpoint | str,
    feature_config: FeatureConfig | None = None,
) -> EvalResult:
    """Score manifest entries against a checkpoint.

    When a feature config is supplied its fingerprint must match the one
    recorded in the checkpoint.  Features are recomputed from the
    checkpoint's stored feature config; no augmentation and no dropout.
    """
    ck = load_checkpoint(checkpoint) if not isinstance(checkpoint, Checkpoint) else checkpoint
    if feature_config is not None and feature_config.fingerprint() != ck.feature_fingerprint:
        raise ConfigError(
            "feature config fingerprint does not match the checkpoint "
            f"({feature_config.fingerprint()} != {ck.feature_fingerprint})"
        )
    if not ck.feature_config:
        raise ConfigError("checkpoint does not embed a feature config")
    feat_cfg = FeatureConfig(**ck.feature_config)
    entries = list(entries)
    if not entries:
        raise EmptyInputError("no entries to evaluate")
    label_map = LabelMap()
    if list(label_map.labels) != list(ck.labels):
        raise ConfigError("checkpoint label inventory does not match this build")
    loader = _AudioLoader(entries)
    log_probs, labels = _forward_eval_logprobs(
        entries, loader, ck.params, ck.model_config, feat_cfg, label_map
    )
    return EvalResult(
        accuracy=accuracy(log_probs, labels),
        confusion=_confusion(log_probs, labels, ck.model_config.n_classes),
        labels=list(label_map.labels),
    )
