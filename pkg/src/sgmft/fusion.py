"""Fusion heads mapping the two token streams to one classifier input.

`sfm` is the similarity-aware head: two cross-attention branches (queries from
one modality, keys/values from the other), each mean-pooled, then added.
The remaining heads are controlled comparators: merge-attention, symmetric
co-attention, asymmetric co-attention, and a pooled-concatenation baseline.
"""

from __future__ import annotations

from dataclasses import dataclass

from .interaction import PlainFfnParams, multi_head_attention, plain_ffn_image
from .tensor import ShapeError, Tensor, concat, layer_norm, mean_pool

__all__ = [
    "FUSION_KINDS",
    "SfmParams",
    "MergeAttentionParams",
    "CoStreamParams",
    "sfm_fuse",
    "merge_attention_fuse",
    "co_attention_fuse",
    "asym_co_attention_fuse",
    "concat_fuse",
    "fusion_output_width",
]

FUSION_KINDS = ("sfm", "merge_attention", "co_attention", "asym_co_attention", "concat")


def fusion_output_width(kind: str, d: int) -> int:
    if kind not in FUSION_KINDS:
        raise ValueError(f"unknown fusion kind {kind!r}")
    return 2 * d if kind == "concat" else d


@dataclass
class SfmParams:
    w_q: dict[str, Tensor]
    w_k: dict[str, Tensor]
    w_v: dict[str, Tensor]
    w_out_text: Tensor   # projection for the text-query branch
    w_out_image: Tensor  # projection for the image-query branch
    heads: int


@dataclass
class MergeAttentionParams:
    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_out: Tensor
    heads: int


@dataclass
class CoStreamParams:
    """One co-attention stream: self-attention, cross-attention, FFN."""

    sa_q: Tensor
    sa_k: Tensor
    sa_v: Tensor
    sa_out: Tensor
    ca_q: Tensor
    ca_k: Tensor
    ca_v: Tensor
    ca_out: Tensor
    ln1_gain: Tensor
    ln1_bias: Tensor
    ln2_gain: Tensor
    ln2_bias: Tensor
    ffn: PlainFfnParams
    heads: int


def _check_widths(text: Tensor, image: Tensor) -> None:
    if text.shape[-1] != image.shape[-1]:
        raise ShapeError(
            f"stream widths differ: text d={text.shape[-1]}, image d={image.shape[-1]}"
        )


def sfm_fuse(text: Tensor, image: Tensor, params: SfmParams) -> Tensor:
    """Bidirectional cross-attention, each branch pooled, summed."""
    _check_widths(text, image)
    ca_text = multi_head_attention(
        text.matmul(params.w_q["text"]),
        image.matmul(params.w_k["image"]),
        image.matmul(params.w_v["image"]),
        params.heads,
        params.w_out_text,
    )
    ca_image = multi_head_attention(
        image.matmul(params.w_q["image"]),
        text.matmul(params.w_k["text"]),
        text.matmul(params.w_v["text"]),
        params.heads,
        params.w_out_image,
    )
    return mean_pool(ca_text) + mean_pool(ca_image)


def merge_attention_fuse(text: Tensor, image: Tensor, params: MergeAttentionParams) -> Tensor:
    """Concatenate token sequences, self-attend, mean-pool."""
    _check_widths(text, image)
    tokens = concat([text, image], axis=-2)
    attended = multi_head_attention(
        tokens.matmul(params.w_q),
        tokens.matmul(params.w_k),
        tokens.matmul(params.w_v),
        params.heads,
        params.w_out,
    )
    return mean_pool(attended)


def _co_stream(x: Tensor, other: Tensor, p: CoStreamParams) -> Tensor:
    """Self-attention, cross-attention to the other modality's tokens, FFN.

    Each attention has a residual and layer norm; the FFN block carries its
    own residual/norm.
    """
    sa = multi_head_attention(
        x.matmul(p.sa_q), x.matmul(p.sa_k), x.matmul(p.sa_v), p.heads, p.sa_out
    )
    s = layer_norm(sa + x, p.ln1_gain, p.ln1_bias)
    ca = multi_head_attention(
        s.matmul(p.ca_q), other.matmul(p.ca_k), other.matmul(p.ca_v), p.heads, p.ca_out
    )
    c = layer_norm(ca + s, p.ln2_gain, p.ln2_bias)
    return plain_ffn_image(c, p.ffn)


def co_attention_fuse(
    text: Tensor, image: Tensor, params: dict[str, CoStreamParams]
) -> Tensor:
    """Two symmetric streams, pooled and added."""
    _check_widths(text, image)
    out_text = mean_pool(_co_stream(text, image, params["text"]))
    out_image = mean_pool(_co_stream(image, text, params["image"]))
    return out_text + out_image


def asym_co_attention_fuse(text: Tensor, image: Tensor, params: CoStreamParams) -> Tensor:
    """Full text stream plus a skip connection of pooled raw image tokens."""
    _check_widths(text, image)
    return mean_pool(_co_stream(text, image, params)) + mean_pool(image)


def concat_fuse(text: Tensor, image: Tensor) -> Tensor:
    """Pooled text concatenated with pooled image (width 2d baseline)."""
    return concat([mean_pool(text), mean_pool(image)], axis=-1)
