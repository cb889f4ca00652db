"""Conformer-GRU classifier: configuration, parameters, forward and backward.

Architecture per utterance (frames x n_features in, class log-probs out):

* pre-net linear projection into d_model (+ dropout),
* N conformer layers, each: half-step feed-forward, multi-head
  self-attention, gated depthwise convolution module, second half-step
  feed-forward, final layer norm (pre-norm residuals throughout),
* bidirectional GRU; the two final hidden states concatenated form the
  utterance embedding,
* post-net projection with ReLU, then the prediction layer and log-softmax.

No positional encoding is used by default; order sensitivity comes from the
convolution module and the GRU.  Batches are right-padded and carry true
lengths; padded positions are masked out of attention, the convolution
input, and the GRU state updates, so padding never reaches the embedding.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .audio_io import LabelMap
from .errors import (
    ConfigError,
    ConsistencyError,
    CorruptFileError,
    EmptyInputError,
    NumericFaultError,
    ValidationError,
)


@dataclass(frozen=True)
class ModelConfig:
    d_model: int
    n_heads: int
    n_layers: int
    ff_expansion: int = 4
    conv_kernel: int = 15
    gru_hidden: int | None = None
    dropout: float = 0.15
    n_classes: int = 41
    n_features: int = 40
    use_positional_encoding: bool = False

    def __post_init__(self):
        if self.d_model <= 0 or self.n_heads <= 0 or self.n_layers <= 0:
            raise ConfigError("d_model, n_heads, and n_layers must be positive")
        if self.d_model % self.n_heads != 0:
            raise ConfigError(
                f"d_model {self.d_model} is not divisible by n_heads {self.n_heads}"
            )
        if self.conv_kernel % 2 == 0:
            raise ConfigError(f"conv_kernel must be odd, got {self.conv_kernel}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.n_classes < 2:
            raise ConfigError("need at least two classes")

    @property
    def gru_dim(self) -> int:
        return self.d_model if self.gru_hidden is None else self.gru_hidden

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


class Parameters:
    """Named float tensors in a fixed canonical order."""

    def __init__(self, arrays: dict):
        self.arrays = dict(arrays)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def __contains__(self, name: str) -> bool:
        return name in self.arrays

    def names(self):
        return list(self.arrays)

    def total_count(self) -> int:
        return sum(a.size for a in self.arrays.values())

    def astype(self, dtype) -> "Parameters":
        return Parameters({k: v.astype(dtype) for k, v in self.arrays.items()})

    def copy(self) -> "Parameters":
        return Parameters({k: v.copy() for k, v in self.arrays.items()})


def parameter_shapes(config: ModelConfig) -> dict:
    """Canonical name -> (shape, init kind) map; the single source of truth
    for both initialization and parameter counting."""
    d = config.d_model
    ff = config.ff_expansion * d
    k = config.conv_kernel
    h = config.gru_dim
    spec = {}

    def linear(prefix, n_in, n_out):
        spec[f"{prefix}.weight"] = ((n_in, n_out), "uniform")
        spec[f"{prefix}.bias"] = ((n_out,), "zeros")

    def norm(prefix):
        spec[f"{prefix}.gain"] = ((d,), "ones")
        spec[f"{prefix}.bias"] = ((d,), "zeros")

    linear("pre_net", config.n_features, d)
    for i in range(config.n_layers):
        base = f"layers.{i}"
        for ffn in ("ff1", "ff2"):
            norm(f"{base}.{ffn}.ln")
            linear(f"{base}.{ffn}.in", d, ff)
            linear(f"{base}.{ffn}.out", ff, d)
        norm(f"{base}.attn.ln")
        for proj in ("q", "k", "v", "o"):
            linear(f"{base}.attn.{proj}", d, d)
        norm(f"{base}.conv.ln")
        linear(f"{base}.conv.pw_in", d, 2 * d)
        spec[f"{base}.conv.dw.weight"] = ((k, d), "uniform")
        spec[f"{base}.conv.dw.bias"] = ((d,), "zeros")
        norm(f"{base}.conv.norm")
        linear(f"{base}.conv.pw_out", d, d)
        norm(f"{base}.final_ln")
    for direction in ("fw", "bw"):
        spec[f"gru.{direction}.w_ih"] = ((d, 3 * h), "uniform")
        spec[f"gru.{direction}.w_hh"] = ((h, 3 * h), "uniform")
        spec[f"gru.{direction}.b_ih"] = ((3 * h,), "zeros")
        spec[f"gru.{direction}.b_hh"] = ((3 * h,), "zeros")
    linear("post_net", 2 * h, d)
    linear("classifier", d, config.n_classes)
    return spec


def param_count(config: ModelConfig) -> int:
    """Exact scalar count; a pure function of the config, independent of
    the number of attention heads."""
    return sum(
        int(np.prod(shape)) for shape, _ in parameter_shapes(config).values()
    )


def init_parameters(config: ModelConfig, seed: int, dtype=np.float32) -> Parameters:
    """Deterministic init: weights ~ U(-s, s) with s = sqrt(1/fan_in),
    biases zero, norm gains one."""
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, (shape, kind) in parameter_shapes(config).items():
        if kind == "uniform":
            s = float(np.sqrt(1.0 / shape[0]))
            arr = rng.uniform(-s, s, size=shape)
        elif kind == "ones":
            arr = np.ones(shape)
        else:
            arr = np.zeros(shape)
        arrays[name] = arr.astype(dtype)
    return Parameters(arrays)


# --------------------------------------------------------------------------
# Forward pass
# --------------------------------------------------------------------------


def _check_finite(t: ad.Tensor, where: str) -> None:
    if not np.isfinite(t.data).all():
        raise NumericFaultError(f"non-finite activation in {where}", where=where)


def _dropout(t, p, rng):
    if p <= 0.0:
        return t
    keep = (rng.random(t.shape) >= p).astype(t.data.dtype) / np.asarray(1.0 - p, dtype=t.data.dtype)
    return ad.mul(t, ad.constant(keep))


def _linear(t, weights, prefix):
    return ad.add(ad.matmul(t, weights[f"{prefix}.weight"]), weights[f"{prefix}.bias"])


def _ln(t, weights, prefix):
    return ad.layer_norm(t, weights[f"{prefix}.gain"], weights[f"{prefix}.bias"])


def _ff_block(h, w, prefix, drop, rng):
    y = _ln(h, w, f"{prefix}.ln")
    y = ad.swish(_linear(y, w, f"{prefix}.in"))
    y = _dropout(y, drop, rng) if rng is not None else y
    y = _linear(y, w, f"{prefix}.out")
    return _dropout(y, drop, rng) if rng is not None else y


def _attention(h, w, prefix, config, mask_bias, capture=None):
    b, t, d = h.shape
    heads = config.n_heads
    dk = d // heads

    def split_heads(x):
        return ad.swapaxes(ad.reshape(x, (b, t, heads, dk)), 1, 2)

    q = split_heads(_linear(h, w, f"{prefix}.q"))
    k = split_heads(_linear(h, w, f"{prefix}.k"))
    v = split_heads(_linear(h, w, f"{prefix}.v"))
    scores = ad.mul(ad.matmul(q, ad.swapaxes(k, -1, -2)), 1.0 / np.sqrt(dk))
    if mask_bias is not None:
        scores = ad.add(scores, ad.constant(mask_bias))
    probs = ad.softmax(scores, axis=-1)
    if capture is not None:
        capture["attention_probs"] = probs.data
    ctx = ad.reshape(ad.swapaxes(ad.matmul(probs, v), 1, 2), (b, t, d))
    return _linear(ctx, w, f"{prefix}.o")


def _conv_module(h, w, prefix, mask):
    d = h.shape[-1]
    y = _ln(h, w, f"{prefix}.ln")
    y = _linear(y, w, f"{prefix}.pw_in")
    gate = ad.sigmoid(y[..., d:])
    y = ad.mul(y[..., :d], gate)
    if mask is not None:
        # keep padded positions at zero so the depthwise taps read silence
        y = ad.mul(y, ad.constant(mask[:, :, None]))
    y = ad.depthwise_conv1d(y, w[f"{prefix}.dw.weight"], w[f"{prefix}.dw.bias"])
    y = _ln(y, w, f"{prefix}.norm")
    y = ad.swish(y)
    return _linear(y, w, f"{prefix}.pw_out")


def _conformer_layer(h, w, index, config, mask, mask_bias, rng, capture=None):
    base = f"layers.{index}"
    drop = config.dropout
    h = ad.add(h, ad.mul(_ff_block(h, w, f"{base}.ff1", drop, rng), 0.5))
    _check_finite(h, f"{base}.ff1")

    att = _attention(_ln(h, w, f"{base}.attn.ln"), w, f"{base}.attn", config, mask_bias, capture)
    att = _dropout(att, drop, rng) if rng is not None else att
    h = ad.add(h, att)
    _check_finite(h, f"{base}.attn")

    cnv = _conv_module(h, w, f"{base}.conv", mask)
    cnv = _dropout(cnv, drop, rng) if rng is not None else cnv
    h = ad.add(h, cnv)
    _check_finite(h, f"{base}.conv")

    h = ad.add(h, ad.mul(_ff_block(h, w, f"{base}.ff2", drop, rng), 0.5))
    _check_finite(h, f"{base}.ff2")

    h = _ln(h, w, f"{base}.final_ln")
    _check_finite(h, f"{base}.final_ln")
    return h


def _gru_direction(h, w, direction, mask):
    """Final hidden state of one GRU direction, shape (batch, hidden).

    Gate order in the stacked weights is (reset, update, candidate).
    Padded steps keep the previous state, so the returned state is the one
    at each utterance's true end (or true start for the backward pass).
    """
    b, t, _ = h.shape
    hidden = w[f"gru.{direction}.w_hh"].shape[0]
    x_all = ad.add(ad.matmul(h, w[f"gru.{direction}.w_ih"]), w[f"gru.{direction}.b_ih"])
    dtype = h.data.dtype
    state = ad.constant(np.zeros((b, hidden), dtype=dtype))
    steps = range(t - 1, -1, -1) if direction == "bw" else range(t)
    for step in steps:
        xt = x_all[:, step]
        hh = ad.add(ad.matmul(state, w[f"gru.{direction}.w_hh"]), w[f"gru.{direction}.b_hh"])
        r = ad.sigmoid(ad.add(xt[:, :hidden], hh[:, :hidden]))
        z = ad.sigmoid(ad.add(xt[:, hidden : 2 * hidden], hh[:, hidden : 2 * hidden]))
        n = ad.tanh(ad.add(xt[:, 2 * hidden :], ad.mul(r, hh[:, 2 * hidden :])))
        new = ad.add(ad.mul(z, state), ad.mul(ad.sub(ad.constant(np.asarray(1.0, dtype=dtype)), z), n))
        if mask is None:
            state = new
        else:
            m = ad.constant(mask[:, step : step + 1])
            keep = ad.constant(1.0 - mask[:, step : step + 1])
            state = ad.add(ad.mul(m, new), ad.mul(keep, state))
    return state


def sinusoidal_encoding(n_frames: int, d_model: int, dtype=np.float32) -> np.ndarray:
    pos = np.arange(n_frames)[:, None]
    dim = np.arange(d_model)[None, :]
    angle = pos / np.power(10000.0, (2 * (dim // 2)) / d_model)
    enc = np.where(dim % 2 == 0, np.sin(angle), np.cos(angle))
    return enc.astype(dtype)


@dataclass
class ModelOutput:
    """Log-probabilities plus (in train mode) the trace needed for backward."""

    log_probs: np.ndarray
    mode: str
    _root: ad.Tensor | None = None
    _param_tensors: dict | None = None
    _params: Parameters | None = None
    _squeezed: bool = False


def model_forward(
    features,
    params: Parameters,
    config: ModelConfig,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
    lengths=None,
    capture: dict | None = None,
) -> ModelOutput:
    """Run the classifier over one utterance (frames x n_features) or a
    right-padded batch (batch x frames x n_features).

    ``mode`` is "train" or "eval"; eval applies no dropout and records no
    trace.  Train mode with a positive dropout rate requires ``rng``.
    Output rows are log-softmax normalized (logsumexp == 0).
    """
    if mode not in ("train", "eval"):
        raise ValidationError(f"mode must be 'train' or 'eval', got {mode!r}")
    arr = np.asarray(features)
    squeezed = arr.ndim == 2
    if squeezed:
        arr = arr[None]
    if arr.ndim != 3:
        raise ValidationError(f"features must be 2-D or 3-D, got shape {arr.shape}")
    b, t, f = arr.shape
    if t == 0 or b == 0:
        raise EmptyInputError("model_forward needs at least one frame")
    if f != config.n_features:
        raise ConfigError(f"expected {config.n_features} features per frame, got {f}")
    if not np.isfinite(arr).all():
        raise ValidationError("features contain non-finite values")

    train = mode == "train"
    if train and config.dropout > 0.0 and rng is None:
        raise ValidationError("train-mode forward with dropout > 0 requires an rng")
    dtype = next(iter(params.arrays.values())).dtype
    arr = arr.astype(dtype, copy=False)

    if lengths is None:
        mask = None
        mask_bias = None
    else:
        lengths = np.asarray(lengths, dtype=np.int64)
        if lengths.shape != (b,):
            raise ValidationError("lengths must have one entry per batch row")
        if lengths.min() < 1 or lengths.max() > t:
            raise ValidationError("lengths must lie in [1, frames]")
        if int(lengths.min()) == t:
            mask = None
            mask_bias = None
        else:
            mask = (np.arange(t)[None, :] < lengths[:, None]).astype(dtype)
            mask_bias = ((1.0 - mask) * np.asarray(-1e9, dtype=dtype))[:, None, None, :]

    wrap = ad.parameter if train else ad.constant
    w = {name: wrap(a) for name, a in params.arrays.items()}
    drng = rng if (train and config.dropout > 0.0) else None

    h = _linear(ad.constant(arr), w, "pre_net")
    if config.use_positional_encoding:
        h = ad.add(h, ad.constant(sinusoidal_encoding(t, config.d_model, dtype)))
    if drng is not None:
        h = _dropout(h, config.dropout, drng)
    if mask is not None:
        h = ad.mul(h, ad.constant(mask[:, :, None]))
    for i in range(config.n_layers):
        h = _conformer_layer(h, w, i, config, mask, mask_bias, drng, capture)

    fw = _gru_direction(h, w, "fw", mask)
    bw = _gru_direction(h, w, "bw", mask)
    agg = ad.concat([fw, bw], axis=1)
    y = ad.relu(_linear(agg, w, "post_net"))
    logits = _linear(y, w, "classifier")
    _check_finite(logits, "classifier")
    out = ad.log_softmax(logits, axis=-1)

    return ModelOutput(
        log_probs=out.data[0] if squeezed else out.data,
        mode=mode,
        _root=out if train else None,
        _param_tensors=w if train else None,
        _params=params,
        _squeezed=squeezed,
    )


def model_backward(output: ModelOutput, upstream, params: Parameters | None = None) -> dict:
    """Gradients of sum(upstream * log_probs) w.r.t. every parameter.

    Requires a train-mode output; parameters without a path to the output
    get zero gradients.
    """
    if output.mode != "train" or output._root is None:
        raise ConsistencyError("model_backward needs a train-mode forward trace")
    if params is not None and params is not output._params:
        raise ConsistencyError("trace was recorded against a different Parameters object")
    seed = np.asarray(upstream, dtype=output._root.data.dtype)
    if output._squeezed:
        seed = seed[None]
    if seed.shape != output._root.data.shape:
        raise ConsistencyError(
            f"upstream shape {seed.shape} does not match output {output._root.data.shape}"
        )
    output._root.backward(seed)
    grads = {}
    for name, tensor in output._param_tensors.items():
        grads[name] = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
        tensor.grad = None
    return grads


def conformer_layer_forward(
    x,
    params: Parameters,
    config: ModelConfig,
    layer_index: int = 0,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
    capture: dict | None = None,
) -> np.ndarray:
    """Run a single conformer layer over (frames x d_model) input."""
    arr = np.asarray(x)
    if arr.ndim != 2 or arr.shape[1] != config.d_model:
        raise ValidationError(f"expected (frames, {config.d_model}) input, got {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValidationError("input contains non-finite values")
    dtype = next(iter(params.arrays.values())).dtype
    w = {name: ad.constant(a) for name, a in params.arrays.items()}
    drng = rng if (mode == "train" and config.dropout > 0.0) else None
    h = ad.constant(arr.astype(dtype, copy=False)[None])
    out = _conformer_layer(h, w, layer_index, config, None, None, drng, capture)
    return out.data[0]


# --------------------------------------------------------------------------
# Checkpoints
# --------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"CSPT0001"
CHECKPOINT_VERSION = 1


@dataclass
class Checkpoint:
    params: Parameters
    model_config: ModelConfig
    feature_fingerprint: str
    feature_config: dict
    labels: list
    seeds: dict
    epoch: int
    header: dict


def save_checkpoint(
    path,
    params: Parameters,
    model_config: ModelConfig,
    feature_fingerprint: str,
    feature_config: dict,
    label_map: LabelMap,
    seeds: dict,
    epoch: int,
) -> None:
    """Binary container: magic, header length, JSON header, float32 blobs."""
    tensors = []
    blobs = []
    offset = 0
    for name in params.names():
        blob = params[name].astype("<f4").tobytes()
        tensors.append(
            {
                "name": name,
                "shape": list(params[name].shape),
                "dtype": "<f4",
                "offset": offset,
                "nbytes": len(blob),
            }
        )
        blobs.append(blob)
        offset += len(blob)
    header = {
        "format_version": CHECKPOINT_VERSION,
        "model_config": model_config.to_dict(),
        "feature_fingerprint": feature_fingerprint,
        "feature_config": feature_config,
        "labels": list(label_map.labels),
        "seeds": dict(seeds),
        "epoch": int(epoch),
        "tensors": tensors,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < len(CHECKPOINT_MAGIC) + 8 or raw[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CorruptFileError(f"{path}: not a checkpoint file")
    header_len = struct.unpack_from("<Q", raw, len(CHECKPOINT_MAGIC))[0]
    header_start = len(CHECKPOINT_MAGIC) + 8
    try:
        header = json.loads(raw[header_start : header_start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise CorruptFileError(f"{path}: unreadable checkpoint header") from err
    blob_start = header_start + header_len
    arrays = {}
    for t in header["tensors"]:
        start = blob_start + t["offset"]
        end = start + t["nbytes"]
        if end > len(raw):
            raise CorruptFileError(f"{path}: truncated tensor {t['name']}")
        arrays[t["name"]] = (
            np.frombuffer(raw[start:end], dtype=t["dtype"]).reshape(t["shape"]).copy()
        )
    model_config = ModelConfig(**header["model_config"])
    return Checkpoint(
        params=Parameters(arrays),
        model_config=model_config,
        feature_fingerprint=header["feature_fingerprint"],
        feature_config=header.get("feature_config", {}),
        labels=header["labels"],
        seeds=header["seeds"],
        epoch=header["epoch"],
        header=header,
    )
