"""Similarity guidance between the text and image streams.

Computes a coarse, modality-wise channel similarity (softmax of the pooled
elementwise product) and a fine, element-wise token similarity (row-stochastic
softmax of the token dot-product matrix). Both feed the interaction module as
guidance masks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import ShapeError, Tensor, mean_pool, softmax

__all__ = [
    "ModalityFeatures",
    "SimilarityGuidance",
    "modality_wise_similarity",
    "element_wise_similarity",
    "compute_guidance",
]


@dataclass
class ModalityFeatures:
    """Token matrix [..., L, d] plus its mean-pooled vector [..., d].

    Supports an optional leading batch axis; `pooled` is always the mean of
    `tokens` over the token axis.
    """

    tokens: Tensor
    pooled: Tensor
    modality: str

    @classmethod
    def from_tokens(cls, tokens: Tensor, modality: str) -> "ModalityFeatures":
        if tokens.ndim < 2 or tokens.shape[-2] < 1:
            raise ShapeError(f"need at least one token row, got shape {tokens.shape}")
        if modality not in ("text", "image"):
            raise ValueError(f"unknown modality {modality!r}")
        return cls(tokens=tokens, pooled=mean_pool(tokens), modality=modality)

    @property
    def width(self) -> int:
        return self.tokens.shape[-1]

    @property
    def num_tokens(self) -> int:
        return self.tokens.shape[-2]


@dataclass
class SimilarityGuidance:
    """Raw and normalized similarity masks for one text/image pair."""

    s_m: Tensor  # [..., d] raw channel similarity
    p_m: Tensor  # [..., d] softmax-normalized channel mask
    s_e: Tensor  # [..., L_t, L_i] raw token similarity
    p_e: Tensor  # [..., L_t, L_i] row-stochastic token mask
    temperature: float = field(default=1.0)


def _check_widths(text: ModalityFeatures, image: ModalityFeatures) -> None:
    if text.width != image.width:
        raise ShapeError(
            f"channel widths differ: text d={text.width}, image d={image.width}"
        )


def modality_wise_similarity(
    text: ModalityFeatures, image: ModalityFeatures, temperature: float = 1.0
) -> tuple[Tensor, Tensor]:
    """Channel-wise similarity of the pooled vectors and its softmax mask."""
    _check_widths(text, image)
    s_m = text.pooled * image.pooled
    p_m = softmax(s_m * (1.0 / temperature), axis=-1)
    return s_m, p_m


def element_wise_similarity(
    text: ModalityFeatures, image: ModalityFeatures, temperature: float = 1.0
) -> tuple[Tensor, Tensor]:
    """Token dot-product similarity matrix and its row-wise softmax."""
    _check_widths(text, image)
    s_e = text.tokens.matmul(image.tokens.transpose_last())
    p_e = softmax(s_e * (1.0 / temperature), axis=-1)
    return s_e, p_e


def compute_guidance(
    text: ModalityFeatures, image: ModalityFeatures, temperature: float = 1.0
) -> SimilarityGuidance:
    s_m, p_m = modality_wise_similarity(text, image, temperature)
    s_e, p_e = element_wise_similarity(text, image, temperature)
    return SimilarityGuidance(s_m=s_m, p_m=p_m, s_e=s_e, p_e=p_e, temperature=temperature)
