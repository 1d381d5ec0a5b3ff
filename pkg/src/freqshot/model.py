"""Episodic classifier: conv encoder, metric heads, losses, checkpoints.

The encoder is three conv blocks (3x3 stride-1 pad-1 convolution, channel
bias, relu, 2x2 max pool), so spatial dims shrink by 8x and the input
must be divisible by 8.  Features are the flattened final map.

Two heads are available.  ``proto`` scores a query by negative squared
distance to class-mean support embeddings.  ``relation`` concatenates
each (query, prototype) pair and scores it with a small two-layer MLP.
Both produce [Q, N] logits over the episode's N classes.

Losses: cross-entropy is the mean over queries of the negative
log-softmax at the true label.  KL divergence takes two probability
matrices (new distribution first, reference second), floors both at
1e-12 inside the logs only, and averages over queries; gradients flow
through both arguments.  Rows must sum to 1 within 1e-6 or the call
raises.

Checkpoints are a single binary file: an 8-byte magic, a format version,
a JSON header listing tensor names/shapes plus a free-form meta dict,
then the raw float64 little-endian tensor data concatenated in header
order.  See ``save_checkpoint``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import tensor as T
from .attention import init_attention_params
from .augment import xavier_normal
from .rng import Rng
from .tensor import NumericError, ParamSet, ShapeError, Tensor

CHECKPOINT_MAGIC = b"FRQSHOT1"
CHECKPOINT_VERSION = 1
HEADS = ("proto", "relation")
PROB_FLOOR = 1e-12
ROW_SUM_TOL = 1e-6


@dataclass(frozen=True)
class EncoderConfig:
    in_channels: int = 1
    image_hw: tuple[int, int] = (32, 32)
    widths: tuple[int, int, int] = (16, 32, 64)

    def __post_init__(self):
        H, W = self.image_hw
        if H % 8 or W % 8 or H < 8 or W < 8:
            raise ValueError(f"encoder: image dims must be multiples of 8, got {H}x{W}")
        if len(self.widths) != 3 or any(int(w) < 1 for w in self.widths):
            raise ValueError(f"encoder: need three positive widths, got {self.widths}")
        if self.in_channels < 1:
            raise ValueError(f"encoder: in_channels must be >= 1, got {self.in_channels}")

    @property
    def feature_dim(self) -> int:
        H, W = self.image_hw
        return self.widths[2] * (H // 8) * (W // 8)

    def to_dict(self) -> dict:
        return {
            "in_channels": self.in_channels,
            "image_hw": list(self.image_hw),
            "widths": list(self.widths),
        }

    @staticmethod
    def from_dict(d: Mapping) -> "EncoderConfig":
        return EncoderConfig(
            in_channels=int(d["in_channels"]),
            image_hw=tuple(int(v) for v in d["image_hw"]),
            widths=tuple(int(v) for v in d["widths"]),
        )


def init_params(
    cfg: EncoderConfig,
    head: str,
    rng: Rng,
    with_attention: bool = True,
    relation_hidden: int = 64,
) -> ParamSet:
    """Fresh parameters for encoder, head, and (optionally) attention."""
    if head not in HEADS:
        raise ValueError(f"unknown head {head!r}; expected one of {HEADS}")
    ps = ParamSet()
    c_in = cfg.in_channels
    for i, c_out in enumerate(cfg.widths):
        fan_in, fan_out = c_in * 9, c_out * 9
        w = xavier_normal((c_out, c_in, 3, 3), fan_in, fan_out, rng.child("enc", i, "w"))
        ps.add(f"enc.conv{i}.w", T.tensor(w, requires_grad=True))
        ps.add(f"enc.conv{i}.b", T.tensor(np.zeros(c_out), requires_grad=True))
        c_in = c_out
    if head == "relation":
        d = cfg.feature_dim
        h = int(relation_hidden)
        w1 = xavier_normal((2 * d, h), 2 * d, h, rng.child("rel", "w1"))
        w2 = xavier_normal((h, 1), h, 1, rng.child("rel", "w2"))
        ps.add("rel.w1", T.tensor(w1, requires_grad=True))
        ps.add("rel.b1", T.tensor(np.zeros(h), requires_grad=True))
        ps.add("rel.w2", T.tensor(w2, requires_grad=True))
        ps.add("rel.b2", T.tensor(np.zeros(1), requires_grad=True))
    if with_attention:
        for name, t in init_attention_params(cfg.in_channels, rng.child("attn")).items():
            ps.add(name, t)
    return ps


def encode(x: Tensor, params: Mapping[str, Tensor], cfg: EncoderConfig) -> Tensor:
    """[B, C, H, W] -> [B, feature_dim]."""
    if x.ndim != 4 or x.shape[1] != cfg.in_channels or x.shape[2:] != tuple(cfg.image_hw):
        raise ShapeError(
            f"encode: expected [B, {cfg.in_channels}, {cfg.image_hw[0]}, {cfg.image_hw[1]}], "
            f"got {x.shape}"
        )
    h = x
    for i in range(3):
        h = T.conv2d(h, params[f"enc.conv{i}.w"], stride=1, padding=1)
        h = T.add_channel_bias(h, params[f"enc.conv{i}.b"])
        h = T.relu(h)
        h = T.max_pool2d(h)
    return T.flatten(h)


def proto_logits(support_emb: Tensor, support_y: np.ndarray, query_emb: Tensor, n_way: int) -> Tensor:
    """Negative squared distance to class-mean prototypes."""
    protos = T.class_mean(support_emb, support_y, n_way)
    return T.scale(T.pairwise_sqdist(query_emb, protos), -1.0)


def relation_logits(
    support_emb: Tensor,
    support_y: np.ndarray,
    query_emb: Tensor,
    n_way: int,
    params: Mapping[str, Tensor],
) -> Tensor:
    """Two-layer MLP score for each (query, prototype) pair."""
    protos = T.class_mean(support_emb, support_y, n_way)
    pairs = T.pair_concat(query_emb, protos)  # [Q * N, 2D]
    h = T.relu(T.dense(pairs, params["rel.w1"], params["rel.b1"]))
    scores = T.dense(h, params["rel.w2"], params["rel.b2"])  # [Q * N, 1]
    return T.reshape(scores, (query_emb.shape[0], n_way))


def episode_logits(
    params: Mapping[str, Tensor],
    cfg: EncoderConfig,
    head: str,
    support_x: Tensor,
    support_y: np.ndarray,
    query_x: Tensor,
    n_way: int,
) -> Tensor:
    """Encode both sets and score queries against the episode's classes."""
    if head not in HEADS:
        raise ValueError(f"unknown head {head!r}")
    se = encode(support_x, params, cfg)
    qe = encode(query_x, params, cfg)
    if head == "proto":
        return proto_logits(se, support_y, qe, n_way)
    return relation_logits(se, support_y, qe, n_way, params)


def episode_logits_stacked(
    x: Tensor,
    params: Mapping[str, Tensor],
    cfg: EncoderConfig,
    head: str,
    support_y: np.ndarray,
    n_support: int,
    n_way: int,
) -> Tensor:
    """Like :func:`episode_logits` for one stacked support-then-query tensor.

    Keeps the whole episode a single graph node, which lets loss
    gradients reach every image of the episode at once (the ascent loop
    perturbs support and query jointly through this path).
    """
    n_support = int(n_support)
    if not 0 < n_support < x.shape[0]:
        raise ShapeError(f"episode_logits_stacked: bad support count {n_support} for {x.shape[0]} rows")
    se = encode(T.slice_rows(x, 0, n_support), params, cfg)
    qe = encode(T.slice_rows(x, n_support, x.shape[0]), params, cfg)
    if head == "proto":
        return proto_logits(se, support_y, qe, n_way)
    if head == "relation":
        return relation_logits(se, support_y, qe, n_way, params)
    raise ValueError(f"unknown head {head!r}")


def predict_episode(
    params: Mapping[str, Tensor],
    cfg: EncoderConfig,
    head: str,
    support_x: np.ndarray,
    support_y: np.ndarray,
    query_x: np.ndarray,
    n_way: int,
) -> np.ndarray:
    """Meta-test path: plain encode-and-score on the given images, with no
    augmentation, attention, or ascent anywhere."""
    logits = episode_logits(
        params, cfg, head, T.tensor(support_x), support_y, T.tensor(query_x), n_way
    )
    return np.argmax(logits.data, axis=1)


# losses

def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean over rows of -log softmax(logits)[label]."""
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy: logits must be [Q, N], got {logits.shape}")
    labels = np.asarray(labels)
    return T.scale(T.mean_all(T.gather_rows(T.log_softmax(logits), labels)), -1.0)


def prediction_distribution(logits: Tensor) -> Tensor:
    """Row-stochastic softmax of the logits."""
    if logits.ndim != 2:
        raise ShapeError(f"prediction_distribution: logits must be [Q, N], got {logits.shape}")
    return T.softmax(logits)


def _check_rows(p: Tensor, name: str) -> None:
    if p.ndim != 2:
        raise ShapeError(f"kl_divergence: {name} must be [Q, N], got {p.shape}")
    bad = np.abs(p.data.sum(axis=-1) - 1.0)
    if np.any(bad > ROW_SUM_TOL):
        raise NumericError(
            f"kl_divergence: {name} rows deviate from 1 by up to {bad.max():.3e}"
        )
    if np.any(p.data < 0.0):
        raise NumericError(f"kl_divergence: {name} has negative entries")


def kl_divergence(p_new: Tensor, p_ref: Tensor) -> Tensor:
    """KL(p_new || p_ref), mean over rows; floors apply inside the logs only.

    Gradients flow through both distributions; nothing is detached.
    """
    _check_rows(p_new, "p_new")
    _check_rows(p_ref, "p_ref")
    if p_new.shape != p_ref.shape:
        raise ShapeError(f"kl_divergence: shapes {p_new.shape} and {p_ref.shape} differ")
    rows = p_new.shape[0]
    log_new = T.log(T.clamp_min(p_new, PROB_FLOOR))
    log_ref = T.log(T.clamp_min(p_ref, PROB_FLOOR))
    total = T.sum_all(T.mul(p_new, T.sub(log_new, log_ref)))
    return T.scale(total, 1.0 / rows)


# checkpoint I/O

def save_checkpoint(path, params: ParamSet, meta: Mapping) -> None:
    """Write magic + version + JSON header + packed float64 data."""
    tensors = [{"name": name, "shape": list(t.data.shape)} for name, t in params.items()]
    header = json.dumps({"tensors": tensors, "meta": dict(meta)}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(header)))
        f.write(header)
        for _, t in params.items():
            f.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[ParamSet, dict]:
    """Read a checkpoint back into a fresh ParamSet plus its meta dict."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < len(CHECKPOINT_MAGIC) + 8:
        raise ValueError(f"checkpoint {path}: truncated file")
    if blob[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise ValueError(f"checkpoint {path}: bad magic")
    off = len(CHECKPOINT_MAGIC)
    version, hlen = struct.unpack_from("<II", blob, off)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"checkpoint {path}: unsupported version {version}")
    off += 8
    if off + hlen > len(blob):
        raise ValueError(f"checkpoint {path}: truncated header")
    header = json.loads(blob[off : off + hlen].decode("utf-8"))
    off += hlen
    ps = ParamSet()
    for entry in header["tensors"]:
        shape = tuple(int(s) for s in entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        nbytes = n * 8
        if off + nbytes > len(blob):
            raise ValueError(f"checkpoint {path}: truncated data for {entry['name']}")
        arr = np.frombuffer(blob[off : off + nbytes], dtype="<f8").reshape(shape).copy()
        ps.add(entry["name"], T.tensor(arr, requires_grad=True))
        off += nbytes
    if off != len(blob):
        raise ValueError(f"checkpoint {path}: {len(blob) - off} trailing bytes")
    return ps, dict(header["meta"])
