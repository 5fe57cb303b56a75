"""2-D principal-component projection of fused representations.

Deterministic: the covariance eigendecomposition is symmetric (eigh), the
components are sorted by descending eigenvalue, and each component's sign is
fixed by making its largest-magnitude coordinate positive.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .model import ModelParams, ModelVariant, forward
from .tensor import Tensor

__all__ = ["ProjectionResult", "fused_representations", "project_representations", "pca_2d"]


@dataclass
class ProjectionResult:
    coords: np.ndarray            # [N, 2]
    labels: np.ndarray            # [N]
    variance_explained: np.ndarray  # [2] fraction of total variance
    eigenvalues: np.ndarray       # full spectrum, descending


def fused_representations(
    params: ModelParams, variant: ModelVariant, dataset: Dataset, batch_size: int = 64
) -> np.ndarray:
    """Fusion-head outputs (classifier inputs) for every sample."""
    chunks = []
    for lo in range(0, len(dataset), batch_size):
        hi = min(lo + batch_size, len(dataset))
        _, fused = forward(
            Tensor(dataset.text[lo:hi]), Tensor(dataset.image[lo:hi]),
            variant, params, return_fused=True,
        )
        chunks.append(fused.data)
    return np.concatenate(chunks, axis=0)


def pca_2d(features: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Center and project onto the top-2 principal components.

    Returns (coords, variance_explained, eigenvalues-descending).
    """
    if features.shape[0] < 2:
        raise ValueError("projection needs at least 2 samples")
    centered = features - features.mean(axis=0, keepdims=True)
    cov = centered.T @ centered / (features.shape[0] - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = eigvals[order]
    eigvecs = eigvecs[:, order]
    components = eigvecs[:, :2]
    for j in range(2):
        pivot = np.argmax(np.abs(components[:, j]))
        if components[pivot, j] < 0:
            components[:, j] = -components[:, j]
    coords = centered @ components
    total = eigvals.sum()
    explained = eigvals[:2] / total if total > 0 else np.zeros(2)
    return coords, explained, eigvals


def project_representations(
    params: ModelParams, variant: ModelVariant, dataset: Dataset
) -> ProjectionResult:
    features = fused_representations(params, variant, dataset)
    coords, explained, eigvals = pca_2d(features)
    return ProjectionResult(
        coords=coords,
        labels=dataset.labels.copy(),
        variance_explained=explained,
        eigenvalues=eigvals,
    )
