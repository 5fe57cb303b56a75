"""Encoder variants, the 5-layer classifier, loss, and checkpoints.

A ModelVariant selects whether the similarity-guided interaction stack runs,
which modality gets the guided FFN, and which fusion head feeds the
classifier. Parameters live in a flat name -> Tensor dict so the optimizer,
gradient audit, and checkpoint code can treat them uniformly; structured
views are built on top for the forward pass.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import fusion as fusion_mod
from .interaction import (
    AttentionParams,
    ConfigurationError,
    PlainFfnParams,
    SimFfnParams,
    coarse_block,
    plain_ffn_image,
    similarity_ffn_text,
)
from .polymerizer import ModalityFeatures, compute_guidance
from .tensor import Tensor, softmax

__all__ = [
    "ModelVariant",
    "ModelParams",
    "build_variant",
    "forward",
    "cross_entropy",
    "predict",
    "save_checkpoint",
    "load_checkpoint",
    "CHECKPOINT_VERSION",
]

CHECKPOINT_VERSION = 1
PROB_FLOOR = 1e-12

FFN_ROLES = ("text_wise", "image_wise")


@dataclass(frozen=True)
class ModelVariant:
    """Configuration record for one ablation cell."""

    d: int = 64
    L: int = 8
    h: int = 8
    d_cls: int = 7
    use_sim: bool = True
    ffn_role: str = "text_wise"
    fusion_kind: str = "sfm"
    depth: int = 1
    d_h: int | None = None  # hidden FFN width, default 4*d
    classifier_widths: tuple[int, ...] = (256, 128, 64, 32)
    temperature: float = 1.0

    def __post_init__(self):
        if self.d % self.h != 0:
            raise ConfigurationError(f"d={self.d} not divisible by h={self.h}")
        if self.ffn_role not in FFN_ROLES:
            raise ConfigurationError(f"ffn_role must be one of {FFN_ROLES}")
        if self.fusion_kind not in fusion_mod.FUSION_KINDS:
            raise ConfigurationError(f"unknown fusion kind {self.fusion_kind!r}")
        if self.depth < 1 or self.d < 1 or self.L < 1 or self.d_cls < 1:
            raise ConfigurationError("extents must be positive")
        if len(self.classifier_widths) != 4:
            raise ConfigurationError("classifier has five layers: four hidden widths")

    @property
    def hidden_width(self) -> int:
        return self.d_h if self.d_h is not None else 4 * self.d

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "L": self.L,
            "h": self.h,
            "d_cls": self.d_cls,
            "use_sim": self.use_sim,
            "ffn_role": self.ffn_role,
            "fusion_kind": self.fusion_kind,
            "depth": self.depth,
            "d_h": self.d_h,
            "classifier_widths": list(self.classifier_widths),
            "temperature": self.temperature,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ModelVariant":
        data = dict(data)
        if "classifier_widths" in data:
            data["classifier_widths"] = tuple(data["classifier_widths"])
        return cls(**data)


class ModelParams:
    """Flat parameter registry plus structured views for the forward pass."""

    def __init__(self, variant: ModelVariant):
        self.variant = variant
        self.named: dict[str, Tensor] = {}
        self.sim_layers: list[tuple[AttentionParams, SimFfnParams, PlainFfnParams]] = []
        self.fusion_params = None
        self.classifier: list[tuple[Tensor, Tensor]] = []

    def register(self, name: str, data: np.ndarray) -> Tensor:
        t = Tensor(data, requires_grad=True, name=name)
        self.named[name] = t
        return t

    def total_size(self) -> int:
        return sum(t.data.size for t in self.named.values())


def _uniform(rng: np.random.Generator, fan_in: int, shape: tuple[int, ...]) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def build_variant(variant: ModelVariant, seed: int) -> ModelParams:
    """Deterministically initialize every parameter tensor for a variant.

    Weights are uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], biases zero,
    layer-norm gain 1 / bias 0.
    """
    rng = np.random.default_rng(np.random.PCG64(seed))
    d, dh = variant.d, variant.hidden_width
    p = ModelParams(variant)

    def weight(name: str, fan_in: int, shape: tuple[int, ...]) -> Tensor:
        return p.register(name, _uniform(rng, fan_in, shape))

    def zeros(name: str, shape: tuple[int, ...]) -> Tensor:
        return p.register(name, np.zeros(shape))

    def ones(name: str, shape: tuple[int, ...]) -> Tensor:
        return p.register(name, np.ones(shape))

    if variant.use_sim:
        for layer in range(variant.depth):
            pre = f"sim{layer}"
            attn = AttentionParams(
                w_q={m: weight(f"{pre}.attn.{m}.w_q", d, (d, d)) for m in ("text", "image")},
                w_k={m: weight(f"{pre}.attn.{m}.w_k", d, (d, d)) for m in ("text", "image")},
                w_v={m: weight(f"{pre}.attn.{m}.w_v", d, (d, d)) for m in ("text", "image")},
                w_self=weight(f"{pre}.attn.w_self", d, (d, d)),
                w_cross=weight(f"{pre}.attn.w_cross", d, (d, d)),
                heads=variant.h,
                ln_gain={m: ones(f"{pre}.attn.{m}.ln_gain", (d,)) for m in ("text", "image")},
                ln_bias={m: zeros(f"{pre}.attn.{m}.ln_bias", (d,)) for m in ("text", "image")},
            )
            sim_ffn = SimFfnParams(
                w1=weight(f"{pre}.sim_ffn.w1", d, (d, dh)),
                w2=weight(f"{pre}.sim_ffn.w2", dh, (dh, d)),
                w3=weight(f"{pre}.sim_ffn.w3", d, (d, dh)),
                b1=zeros(f"{pre}.sim_ffn.b1", (dh,)),
                b2=zeros(f"{pre}.sim_ffn.b2", (d,)),
                ln_gain=ones(f"{pre}.sim_ffn.ln_gain", (d,)),
                ln_bias=zeros(f"{pre}.sim_ffn.ln_bias", (d,)),
            )
            plain_ffn = PlainFfnParams(
                w1=weight(f"{pre}.plain_ffn.w1", d, (d, dh)),
                w2=weight(f"{pre}.plain_ffn.w2", dh, (dh, d)),
                b1=zeros(f"{pre}.plain_ffn.b1", (dh,)),
                b2=zeros(f"{pre}.plain_ffn.b2", (d,)),
                ln_gain=ones(f"{pre}.plain_ffn.ln_gain", (d,)),
                ln_bias=zeros(f"{pre}.plain_ffn.ln_bias", (d,)),
            )
            p.sim_layers.append((attn, sim_ffn, plain_ffn))

    p.fusion_params = _build_fusion_params(variant, p, weight, zeros, ones)

    in_width = fusion_mod.fusion_output_width(variant.fusion_kind, d)
    widths = [in_width, *variant.classifier_widths, variant.d_cls]
    for i, (w_in, w_out) in enumerate(zip(widths[:-1], widths[1:])):
        w = weight(f"clf.{i}.w", w_in, (w_in, w_out))
        b = zeros(f"clf.{i}.b", (w_out,))
        p.classifier.append((w, b))
    return p


def _build_fusion_params(variant: ModelVariant, p: ModelParams, weight, zeros, ones):
    d, h = variant.d, variant.h

    def co_stream(pre: str) -> fusion_mod.CoStreamParams:
        dh = variant.hidden_width
        return fusion_mod.CoStreamParams(
            sa_q=weight(f"{pre}.sa_q", d, (d, d)),
            sa_k=weight(f"{pre}.sa_k", d, (d, d)),
            sa_v=weight(f"{pre}.sa_v", d, (d, d)),
            sa_out=weight(f"{pre}.sa_out", d, (d, d)),
            ca_q=weight(f"{pre}.ca_q", d, (d, d)),
            ca_k=weight(f"{pre}.ca_k", d, (d, d)),
            ca_v=weight(f"{pre}.ca_v", d, (d, d)),
            ca_out=weight(f"{pre}.ca_out", d, (d, d)),
            ln1_gain=ones(f"{pre}.ln1_gain", (d,)),
            ln1_bias=zeros(f"{pre}.ln1_bias", (d,)),
            ln2_gain=ones(f"{pre}.ln2_gain", (d,)),
            ln2_bias=zeros(f"{pre}.ln2_bias", (d,)),
            ffn=PlainFfnParams(
                w1=weight(f"{pre}.ffn.w1", d, (d, dh)),
                w2=weight(f"{pre}.ffn.w2", dh, (dh, d)),
                b1=zeros(f"{pre}.ffn.b1", (dh,)),
                b2=zeros(f"{pre}.ffn.b2", (d,)),
                ln_gain=ones(f"{pre}.ffn.ln_gain", (d,)),
                ln_bias=zeros(f"{pre}.ffn.ln_bias", (d,)),
            ),
            heads=h,
        )

    kind = variant.fusion_kind
    if kind == "sfm":
        return fusion_mod.SfmParams(
            w_q={m: weight(f"fusion.{m}.w_q", d, (d, d)) for m in ("text", "image")},
            w_k={m: weight(f"fusion.{m}.w_k", d, (d, d)) for m in ("text", "image")},
            w_v={m: weight(f"fusion.{m}.w_v", d, (d, d)) for m in ("text", "image")},
            w_out_text=weight("fusion.w_out_text", d, (d, d)),
            w_out_image=weight("fusion.w_out_image", d, (d, d)),
            heads=h,
        )
    if kind == "merge_attention":
        return fusion_mod.MergeAttentionParams(
            w_q=weight("fusion.w_q", d, (d, d)),
            w_k=weight("fusion.w_k", d, (d, d)),
            w_v=weight("fusion.w_v", d, (d, d)),
            w_out=weight("fusion.w_out", d, (d, d)),
            heads=h,
        )
    if kind == "co_attention":
        return {"text": co_stream("fusion.text"), "image": co_stream("fusion.image")}
    if kind == "asym_co_attention":
        return co_stream("fusion.text")
    return None  # concat has no parameters


def _apply_fusion(variant: ModelVariant, params: ModelParams, text: Tensor, image: Tensor) -> Tensor:
    kind = variant.fusion_kind
    if kind == "sfm":
        return fusion_mod.sfm_fuse(text, image, params.fusion_params)
    if kind == "merge_attention":
        return fusion_mod.merge_attention_fuse(text, image, params.fusion_params)
    if kind == "co_attention":
        return fusion_mod.co_attention_fuse(text, image, params.fusion_params)
    if kind == "asym_co_attention":
        return fusion_mod.asym_co_attention_fuse(text, image, params.fusion_params)
    return fusion_mod.concat_fuse(text, image)


def forward(
    text_tokens: Tensor,
    image_tokens: Tensor,
    variant: ModelVariant,
    params: ModelParams,
    zero_coarse_guidance: bool = False,
    return_fused: bool = False,
):
    """Full forward pass: [B, L, d] token pairs -> [B, d_cls] probabilities.

    `zero_coarse_guidance` forces p_m to zero, an ablation hook that reduces
    the interpolation attention to pure self-attention.
    """
    if text_tokens.shape != image_tokens.shape:
        raise ConfigurationError(
            f"token shapes differ: {text_tokens.shape} vs {image_tokens.shape}"
        )
    if text_tokens.shape[-1] != variant.d:
        raise ConfigurationError(
            f"token width {text_tokens.shape[-1]} does not match variant d={variant.d}"
        )
    text = ModalityFeatures.from_tokens(text_tokens, "text")
    image = ModalityFeatures.from_tokens(image_tokens, "image")

    if variant.use_sim:
        for attn, sim_ffn, plain_ffn in params.sim_layers:
            guidance = compute_guidance(text, image, variant.temperature)
            p_m = guidance.p_m
            if zero_coarse_guidance:
                p_m = Tensor(np.zeros_like(p_m.data))
            x_text, x_image = coarse_block(text, image, p_m, attn)
            if variant.ffn_role == "text_wise":
                f_text = similarity_ffn_text(x_text, x_image, guidance.p_e, sim_ffn)
                f_image = plain_ffn_image(x_image, plain_ffn)
            else:
                # role swap: the image stream gets the guided FFN, with the
                # similarity mask recomputed image-major
                p_e_image = (
                    image.tokens.matmul(text.tokens.transpose_last())
                    * (1.0 / variant.temperature)
                ).softmax(-1)
                f_image = similarity_ffn_text(x_image, x_text, p_e_image, sim_ffn)
                f_text = plain_ffn_image(x_text, plain_ffn)
            text = ModalityFeatures.from_tokens(f_text, "text")
            image = ModalityFeatures.from_tokens(f_image, "image")

    fused = _apply_fusion(variant, params, text.tokens, image.tokens)

    x = fused
    for w, b in params.classifier[:-1]:
        x = (x.matmul(w) + b).relu()
    w, b = params.classifier[-1]
    probs = softmax(x.matmul(w) + b, axis=-1)
    if return_fused:
        return probs, fused
    return probs


def cross_entropy(probabilities: Tensor, labels: np.ndarray) -> Tensor:
    """Mean over the batch of -log p(true class), floored at 1e-12."""
    labels = np.asarray(labels)
    n_classes = probabilities.shape[-1]
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes})")
    picked = probabilities.gather_rows(labels)
    return -(picked.clamp_min(PROB_FLOOR).log().mean())


def predict(probabilities: Tensor) -> np.ndarray:
    """Argmax class per row; ties broken by lowest class index."""
    return np.argmax(probabilities.data, axis=-1)


def save_checkpoint(params: ModelParams, path) -> None:
    """Write all named tensors plus a version/variant manifest (npz)."""
    meta = {
        "format": "sgmft-checkpoint",
        "version": CHECKPOINT_VERSION,
        "variant": params.variant.to_dict(),
        "tensors": {name: list(t.shape) for name, t in params.named.items()},
    }
    arrays = {name: t.data for name, t in params.named.items()}
    arrays["__meta__"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    np.savez(path, **arrays)


def load_checkpoint(path) -> ModelParams:
    """Rebuild a ModelParams whose tensor values round-trip bitwise."""
    with np.load(path) as archive:
        meta = json.loads(bytes(archive["__meta__"]).decode())
        if meta.get("format") != "sgmft-checkpoint":
            raise ValueError(f"{path}: not a model checkpoint")
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {meta.get('version')}")
        variant = ModelVariant.from_dict(meta["variant"])
        params = build_variant(variant, seed=0)
        for name, t in params.named.items():
            stored = archive[name]
            if stored.shape != t.data.shape:
                raise ValueError(f"{path}: tensor {name} has shape {stored.shape}, "
                                 f"expected {t.data.shape}")
            t.data = stored.astype(np.float64)
    return params
