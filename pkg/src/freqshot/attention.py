"""Mutual attention between an anchor batch and one of its variants.

Images are flattened to T = H * W tokens of dimension C and attended in
both directions with a single head and one shared projection triple
(w_q, w_k, w_v, each C x C, no bias):

    A1 = softmax(Q_a K_v^T / sqrt(C)) V_v      anchor attends to variant
    A2 = softmax(Q_v K_a^T / sqrt(C)) V_a      variant attends to anchor

The two directions are averaged and added to the variant tokens (the
residual comes from the variant, not the anchor), then folded back to
[B, C, H, W].  Shapes in and out are identical.  With all three
projections zero the block is exactly the identity on the variant.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .rng import Rng
from .tensor import ParamSet, ShapeError, Tensor

PARAM_NAMES = ("attn.w_q", "attn.w_k", "attn.w_v")


def init_attention_params(channels: int, rng: Rng) -> dict[str, Tensor]:
    """Xavier-normal C x C projection triple, as ParamSet entries."""
    from .augment import xavier_normal

    c = int(channels)
    if c < 1:
        raise ValueError(f"init_attention_params: channels must be >= 1, got {channels}")
    out = {}
    for name in PARAM_NAMES:
        out[name] = T.tensor(xavier_normal((c, c), c, c, rng.child(name)), requires_grad=True)
    return out


def _tokens(x: Tensor) -> Tensor:
    """[B, C, H, W] -> [B, T, C] with T = H * W."""
    B, C, H, W = x.shape
    return T.permute(T.reshape(x, (B, C, H * W)), (0, 2, 1))


def _untokens(x: Tensor, shape: tuple[int, int, int, int]) -> Tensor:
    B, C, H, W = shape
    return T.reshape(T.permute(x, (0, 2, 1)), (B, C, H, W))


def _attend(q: Tensor, k: Tensor, v: Tensor, inv_sqrt_c: float) -> Tensor:
    scores = T.scale(T.bmm(q, T.permute(k, (0, 2, 1))), inv_sqrt_c)
    return T.bmm(T.softmax(scores), v)


def mutual_attention(anchor: Tensor, variant: Tensor, wq: Tensor, wk: Tensor, wv: Tensor) -> Tensor:
    """Blend a variant with its anchor; returns a batch shaped like the inputs."""
    if anchor.shape != variant.shape or anchor.ndim != 4:
        raise ShapeError(
            f"mutual_attention: need matching [B, C, H, W], got {anchor.shape} and {variant.shape}"
        )
    B, C, H, W = anchor.shape
    for name, w in zip(PARAM_NAMES, (wq, wk, wv)):
        if w.shape != (C, C):
            raise ShapeError(f"mutual_attention: {name} must be {C}x{C}, got {w.shape}")

    a = _tokens(anchor)
    v = _tokens(variant)
    q_a, k_a, v_a = (T.linear_tokens(a, w) for w in (wq, wk, wv))
    q_v, k_v, v_v = (T.linear_tokens(v, w) for w in (wq, wk, wv))

    inv = 1.0 / float(np.sqrt(C))
    a1 = _attend(q_a, k_v, v_v, inv)  # anchor queries the variant
    a2 = _attend(q_v, k_a, v_a, inv)  # variant queries the anchor
    merged = T.scale(T.add(a1, a2), 0.5)
    return _untokens(T.add(merged, v), (B, C, H, W))


def attention_params_from(params) -> tuple[Tensor, Tensor, Tensor]:
    """Pull the projection triple out of a ParamSet or frozen mapping."""
    return params["attn.w_q"], params["attn.w_k"], params["attn.w_v"]
