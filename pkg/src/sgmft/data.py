"""Synthetic paired-embedding corpus and the embedding-file interface.

The generator produces class-conditioned token matrices for two modalities
from a shared latent, with two corruption knobs: `sigma_noise` replaces
individual tokens with pure noise, and `rho_hetero` makes one modality of a
sample carry a distractor class's latent instead of the true one.

Binary embedding file layout (little-endian):

    magic    8 bytes  b"SGMFTEMB"
    version  u32      currently 1
    d        u32      channel width
    L_text   u32      text tokens per sample
    L_image  u32      image tokens per sample
    classes  u32      class count
    samples  u32      sample count
    prng_id  16 bytes ascii, zero-padded (e.g. "pcg64")
    records  per sample: label u32, text tokens L_text*d f64,
             image tokens L_image*d f64

A JSON sidecar at `<path>.json` carries provenance (generator config or
source annotation).
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "SynthConfig",
    "Dataset",
    "EmbeddingFormatError",
    "generate",
    "save_embeddings",
    "load_embeddings",
    "split",
    "FORMAT_MAGIC",
    "FORMAT_VERSION",
    "PRNG_ID",
]

FORMAT_MAGIC = b"SGMFTEMB"
FORMAT_VERSION = 1
PRNG_ID = "pcg64"
_HEADER = struct.Struct("<8sIIIIII16s")


class EmbeddingFormatError(ValueError):
    """Embedding file fails structural validation."""


@dataclass(frozen=True)
class SynthConfig:
    classes: int = 7
    per_class: int = 100
    L: int = 8
    d: int = 64
    k: int | None = None  # latent width, default d // 2
    sigma_noise: float = 0.0
    rho_hetero: float = 0.0
    seed: int = 0
    # scale knobs; defaults produce roughly unit-norm tokens
    class_sep: float = 1.0
    latent_jitter: float = 0.25
    token_noise: float = 0.5
    noise_scale: float = 1.5  # amplitude of pure-noise replacement tokens
    hetero_jitter: float = 4.0  # latent jitter multiplier for the distractor modality

    def __post_init__(self):
        if not (0.0 <= self.sigma_noise <= 1.0 and 0.0 <= self.rho_hetero <= 1.0):
            raise ValueError("sigma_noise and rho_hetero must lie in [0, 1]")
        if min(self.classes, self.per_class, self.L, self.d) < 1:
            raise ValueError("extents must be positive")
        if self.k is not None and self.k < 1:
            raise ValueError("latent width must be positive")

    @property
    def latent_width(self) -> int:
        return self.k if self.k is not None else max(1, self.d // 2)


@dataclass
class Dataset:
    """Paired token matrices with class labels.

    text:  [N, L_text, d], image: [N, L_image, d], labels: [N] int64.
    """

    text: np.ndarray
    image: np.ndarray
    labels: np.ndarray
    metadata: dict

    def __post_init__(self):
        n = len(self.labels)
        if self.text.shape[0] != n or self.image.shape[0] != n:
            raise ValueError("sample counts disagree between fields")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def d(self) -> int:
        return self.text.shape[-1]

    @property
    def num_classes(self) -> int:
        return int(self.metadata.get("classes", int(self.labels.max()) + 1 if len(self) else 0))

    def subset(self, indices: np.ndarray, tag: str | None = None) -> "Dataset":
        meta = dict(self.metadata)
        if tag:
            meta["split"] = tag
        return Dataset(
            text=self.text[indices].copy(),
            image=self.image[indices].copy(),
            labels=self.labels[indices].copy(),
            metadata=meta,
        )


def generate(config: SynthConfig) -> Dataset:
    """Deterministic synthetic corpus; all draws come from one PCG64 stream."""
    rng = np.random.default_rng(np.random.PCG64(config.seed))
    k, d, L = config.latent_width, config.d, config.L
    centers = rng.normal(size=(config.classes, k)) * config.class_sep
    map_text = rng.normal(size=(k, d)) / np.sqrt(k)
    map_image = rng.normal(size=(k, d)) / np.sqrt(k)

    n = config.classes * config.per_class
    text = np.empty((n, L, d))
    image = np.empty((n, L, d))
    labels = np.empty(n, dtype=np.int64)

    idx = 0
    for c in range(config.classes):
        for _ in range(config.per_class):
            z = centers[c] + config.latent_jitter * rng.normal(size=k)
            z_text, z_image = z[None, :], z[None, :]
            if rng.random() < config.rho_hetero:
                distractor = int(rng.integers(config.classes - 1))
                if distractor >= c:
                    distractor += 1
                # corrupted modality: every token scatters around the
                # distractor latent, so cross-modal similarity can still
                # pick out the least-misleading tokens
                z_bad = centers[distractor] + (
                    config.hetero_jitter * config.latent_jitter * rng.normal(size=(L, k))
                )
                if rng.random() < 0.5:
                    z_text = z_bad
                else:
                    z_image = z_bad
            text[idx] = z_text @ map_text + config.token_noise * rng.normal(size=(L, d))
            image[idx] = z_image @ map_image + config.token_noise * rng.normal(size=(L, d))
            for tokens in (text[idx], image[idx]):
                noise_mask = rng.random(L) < config.sigma_noise
                replaced = int(noise_mask.sum())
                if replaced:
                    tokens[noise_mask] = config.noise_scale * rng.normal(size=(replaced, d))
            labels[idx] = c
            idx += 1

    metadata = {"source": "synthetic", "prng": PRNG_ID, "config": asdict(config),
                "classes": config.classes}
    return Dataset(text=text, image=image, labels=labels, metadata=metadata)


def save_embeddings(dataset: Dataset, path) -> None:
    path = Path(path)
    n, l_text, d = dataset.text.shape
    l_image = dataset.image.shape[1]
    classes = dataset.num_classes
    header = _HEADER.pack(
        FORMAT_MAGIC, FORMAT_VERSION, d, l_text, l_image, classes, n,
        PRNG_ID.encode().ljust(16, b"\0"),
    )
    with open(path, "wb") as fh:
        fh.write(header)
        for i in range(n):
            fh.write(struct.pack("<I", int(dataset.labels[i])))
            fh.write(np.ascontiguousarray(dataset.text[i], dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(dataset.image[i], dtype="<f8").tobytes())
    sidecar = {
        "format": {"magic": FORMAT_MAGIC.decode(), "version": FORMAT_VERSION},
        "prng": PRNG_ID,
        "metadata": dataset.metadata,
    }
    path.with_name(path.name + ".json").write_text(json.dumps(sidecar, indent=2))


def load_embeddings(path) -> Dataset:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise EmbeddingFormatError(f"{path}: truncated header")
    magic, version, d, l_text, l_image, classes, n, prng_raw = _HEADER.unpack_from(raw)
    if magic != FORMAT_MAGIC:
        raise EmbeddingFormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise EmbeddingFormatError(f"{path}: unsupported version {version}")
    if min(d, l_text, l_image, classes) < 1:
        raise EmbeddingFormatError(f"{path}: non-positive extents in header")
    prng = prng_raw.rstrip(b"\0").decode(errors="replace")

    record_size = 4 + 8 * d * (l_text + l_image)
    body = raw[_HEADER.size:]
    text = np.empty((n, l_text, d))
    image = np.empty((n, l_image, d))
    labels = np.empty(n, dtype=np.int64)
    offset = 0
    for i in range(n):
        if len(body) - offset < record_size:
            raise EmbeddingFormatError(
                f"{path}: record {i}: expected {record_size} bytes, "
                f"got {len(body) - offset}"
            )
        (label,) = struct.unpack_from("<I", body, offset)
        if label >= classes:
            raise EmbeddingFormatError(
                f"{path}: record {i}: label {label} out of range [0, {classes})"
            )
        labels[i] = label
        offset += 4
        text[i] = np.frombuffer(body, dtype="<f8", count=l_text * d,
                                offset=offset).reshape(l_text, d)
        offset += 8 * l_text * d
        image[i] = np.frombuffer(body, dtype="<f8", count=l_image * d,
                                 offset=offset).reshape(l_image, d)
        offset += 8 * l_image * d
    if len(body) != offset:
        raise EmbeddingFormatError(f"{path}: {len(body) - offset} trailing bytes")

    metadata = {"source": str(path), "prng": prng, "classes": int(classes)}
    sidecar = path.with_name(path.name + ".json")
    if sidecar.exists():
        metadata["sidecar"] = json.loads(sidecar.read_text())
    return Dataset(text=text, image=image, labels=labels, metadata=metadata)


def split(dataset: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Seeded stratified partition; test size is round(n * fraction) exactly.

    Per-class test counts are assigned by largest remainder so every class
    appears in both splits whenever sizes allow.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie strictly between 0 and 1")
    n = len(dataset)
    n_test = int(round(n * test_fraction))
    if n_test == 0 or n_test == n:
        raise ValueError(f"degenerate split: {n} samples at fraction {test_fraction}")

    rng = np.random.default_rng(np.random.PCG64(seed))
    class_ids = np.unique(dataset.labels)
    ideal = {c: (dataset.labels == c).sum() * test_fraction for c in class_ids}
    counts = {c: int(np.floor(ideal[c])) for c in class_ids}
    shortfall = n_test - sum(counts.values())
    by_remainder = sorted(class_ids, key=lambda c: (counts[c] - ideal[c], c))
    for c in by_remainder[:shortfall]:
        counts[c] += 1

    test_idx, train_idx = [], []
    for c in class_ids:
        members = np.flatnonzero(dataset.labels == c)
        perm = rng.permutation(members)
        test_idx.extend(perm[: counts[c]])
        train_idx.extend(perm[counts[c]:])
    test_idx = np.sort(np.array(test_idx, dtype=np.int64))
    train_idx = np.sort(np.array(train_idx, dtype=np.int64))
    return dataset.subset(train_idx, "train"), dataset.subset(test_idx, "test")
