"""Similarity-guided interaction: interpolation attention plus guided FFN.

The coarse block blends cross- and self-attention per channel using the
modality-wise similarity mask, adds a residual, and layer-normalizes. The fine
block feeds a token-similarity-weighted mix of the other modality into the FFN
of the guided modality; the other modality gets a conventional FFN.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .polymerizer import ModalityFeatures
from .tensor import ShapeError, Tensor, concat, layer_norm

__all__ = [
    "AttentionParams",
    "SimFfnParams",
    "PlainFfnParams",
    "project_qkv",
    "multi_head_attention",
    "interpolate_attention",
    "coarse_block",
    "similarity_ffn_text",
    "plain_ffn_image",
]


class ConfigurationError(ValueError):
    """Model extents are inconsistent (e.g. head count does not divide width)."""


@dataclass
class AttentionParams:
    """Q/K/V projections per modality plus shared output projections."""

    w_q: dict[str, Tensor]
    w_k: dict[str, Tensor]
    w_v: dict[str, Tensor]
    w_self: Tensor   # output projection for self-attention heads
    w_cross: Tensor  # output projection for cross-attention heads
    heads: int
    ln_gain: dict[str, Tensor]
    ln_bias: dict[str, Tensor]


@dataclass
class SimFfnParams:
    """Guided FFN: hidden = ReLU(x W1 + x_inter W3 + b1), out = hidden W2 + b2."""

    w1: Tensor
    w2: Tensor
    w3: Tensor
    b1: Tensor
    b2: Tensor
    ln_gain: Tensor
    ln_bias: Tensor


@dataclass
class PlainFfnParams:
    """Conventional two-layer FFN with residual and layer norm."""

    w1: Tensor
    w2: Tensor
    b1: Tensor
    b2: Tensor
    ln_gain: Tensor
    ln_bias: Tensor


def project_qkv(
    x: Tensor, params: AttentionParams, modality: str
) -> tuple[Tensor, Tensor, Tensor]:
    w_q, w_k, w_v = params.w_q[modality], params.w_k[modality], params.w_v[modality]
    if x.shape[-1] != w_q.shape[0]:
        raise ShapeError(f"token width {x.shape[-1]} does not match projection {w_q.shape}")
    return x.matmul(w_q), x.matmul(w_k), x.matmul(w_v)


def multi_head_attention(q: Tensor, k: Tensor, v: Tensor, h: int, w_out: Tensor) -> Tensor:
    """Scaled dot-product attention over h heads, concatenated and projected."""
    d = q.shape[-1]
    if d % h != 0:
        raise ConfigurationError(f"width {d} not divisible by {h} heads")
    dh = d // h
    scale = 1.0 / math.sqrt(dh)
    heads = []
    for i in range(h):
        qs = q.narrow(-1, i * dh, dh)
        ks = k.narrow(-1, i * dh, dh)
        vs = v.narrow(-1, i * dh, dh)
        scores = qs.matmul(ks.transpose_last()) * scale
        heads.append(scores.softmax(-1).matmul(vs))
    return concat(heads, axis=-1).matmul(w_out)


def interpolate_attention(ca: Tensor, sa: Tensor, p_m: Tensor) -> Tensor:
    """Channel-wise convex blend: ca * p_m + sa * (1 - p_m)."""
    if ca.shape != sa.shape:
        raise ShapeError(f"attention outputs differ in shape: {ca.shape} vs {sa.shape}")
    if p_m.shape[-1] != ca.shape[-1]:
        raise ShapeError(f"mask width {p_m.shape[-1]} does not match {ca.shape[-1]}")
    mask = p_m
    if mask.ndim == ca.ndim - 1:
        # broadcast one mask row across the token axis
        mask = mask.reshape(*mask.shape[:-1], 1, mask.shape[-1])
    return ca * mask + sa * (1.0 - mask)


def coarse_block(
    text: ModalityFeatures,
    image: ModalityFeatures,
    p_m: Tensor,
    params: AttentionParams,
) -> tuple[Tensor, Tensor]:
    """Interpolation attention per modality, with residual and layer norm.

    The image branch cross-attends with the text query against image keys and
    values; the text branch mirrors it. The residual adds the branch's own
    input, which requires equal token counts in the two modalities.
    """
    if text.num_tokens != image.num_tokens:
        raise ShapeError(
            f"coarse block needs equal token counts, got L_t={text.num_tokens}, "
            f"L_i={image.num_tokens}"
        )
    q_t, k_t, v_t = project_qkv(text.tokens, params, "text")
    q_i, k_i, v_i = project_qkv(image.tokens, params, "image")

    sa_t = multi_head_attention(q_t, k_t, v_t, params.heads, params.w_self)
    ca_t = multi_head_attention(q_i, k_t, v_t, params.heads, params.w_cross)
    x_t = interpolate_attention(ca_t, sa_t, p_m)
    out_t = layer_norm(x_t + text.tokens, params.ln_gain["text"], params.ln_bias["text"])

    sa_i = multi_head_attention(q_i, k_i, v_i, params.heads, params.w_self)
    ca_i = multi_head_attention(q_t, k_i, v_i, params.heads, params.w_cross)
    x_i = interpolate_attention(ca_i, sa_i, p_m)
    out_i = layer_norm(x_i + image.tokens, params.ln_gain["image"], params.ln_bias["image"])
    return out_t, out_i


def similarity_ffn_text(
    x_guided: Tensor, x_other: Tensor, p_e: Tensor, params: SimFfnParams
) -> Tensor:
    """Guided FFN on the guided modality (text by default; roles can swap).

    x_inter mixes the other modality's tokens by the row-stochastic similarity
    mask, enters the hidden layer alongside the guided tokens, and the result
    is residual-added and layer-normalized.
    """
    if p_e.shape[-1] != x_other.shape[-2]:
        raise ShapeError(
            f"similarity mask columns {p_e.shape[-1]} do not match "
            f"other-modality tokens {x_other.shape[-2]}"
        )
    x_inter = p_e.matmul(x_other)
    hidden = (x_guided.matmul(params.w1) + x_inter.matmul(params.w3) + params.b1).relu()
    ffn = hidden.matmul(params.w2) + params.b2
    return layer_norm(ffn + x_guided, params.ln_gain, params.ln_bias)


def plain_ffn_image(x: Tensor, params: PlainFfnParams) -> Tensor:
    """Conventional FFN with residual and layer norm (the non-guided branch)."""
    hidden = (x.matmul(params.w1) + params.b1).relu()
    ffn = hidden.matmul(params.w2) + params.b2
    return layer_norm(ffn + x, params.ln_gain, params.ln_bias)
