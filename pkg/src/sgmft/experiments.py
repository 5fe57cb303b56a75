"""Ablation grids, gradient audits, and run manifests.

A grid trains every (variant, seed) cell on a fresh synthetic corpus seeded
by the cell seed, records per-cell metrics, and reduces to mean/stdev test
accuracy per variant. Cell divergence is recorded and the grid continues.
"""

from __future__ import annotations

import csv
import json
import statistics
import subprocess
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .data import SynthConfig, generate, split
from .model import ModelVariant, build_variant, cross_entropy, forward
from .tensor import Tensor, gradient_check_detailed
from .train import TrainConfig, TrainingError, evaluate, train, write_metrics_csv

__all__ = [
    "ExperimentSpec",
    "AblationResult",
    "preset_spec",
    "run_ablation",
    "audit_gradients",
    "build_manifest",
    "git_describe",
    "PRESET_NAMES",
]

PRESET_NAMES = ("table2", "table4", "table5")
AUDIT_TOLERANCE = 1e-4


@dataclass
class ExperimentSpec:
    name: str
    synth: SynthConfig
    variants: list[tuple[str, ModelVariant]]
    train: TrainConfig
    seeds: list[int]
    test_fraction: float = 0.2
    deterministic: bool = True

    def __post_init__(self):
        if not self.variants or not self.seeds:
            raise ValueError("need at least one variant and one seed")


@dataclass
class CellResult:
    variant: str
    seed: int
    test_acc: float | None
    final_loss: float | None
    error: str | None = None


@dataclass
class AblationResult:
    cells: list[CellResult]
    summary: list[dict] = field(default_factory=list)

    @property
    def failed(self) -> bool:
        return any(c.error is not None for c in self.cells)


def _grid_variants(preset: str, base: ModelVariant) -> list[tuple[str, ModelVariant]]:
    from dataclasses import replace

    if preset == "table2":
        return [
            ("baseline_concat", replace(base, use_sim=False, fusion_kind="concat")),
            ("sfm_only", replace(base, use_sim=False, fusion_kind="sfm")),
            ("sim_concat", replace(base, use_sim=True, fusion_kind="concat")),
            ("sim_sfm", replace(base, use_sim=True, fusion_kind="sfm")),
        ]
    if preset == "table4":
        return [
            ("asym_co_attention", replace(base, use_sim=True, fusion_kind="asym_co_attention")),
            ("merge_attention", replace(base, use_sim=True, fusion_kind="merge_attention")),
            ("co_attention", replace(base, use_sim=True, fusion_kind="co_attention")),
            ("sfm", replace(base, use_sim=True, fusion_kind="sfm")),
        ]
    if preset == "table5":
        return [
            ("text_wise", replace(base, use_sim=True, fusion_kind="sfm", ffn_role="text_wise")),
            ("image_wise", replace(base, use_sim=True, fusion_kind="sfm", ffn_role="image_wise")),
        ]
    raise ValueError(f"unknown preset {preset!r}; choose from {PRESET_NAMES}")


def preset_spec(
    preset: str,
    seeds: list[int] | None = None,
    synth: SynthConfig | None = None,
    train_config: TrainConfig | None = None,
) -> ExperimentSpec:
    """Standard ablation grid on the desk-scale synthetic corpus."""
    synth = synth or SynthConfig(
        classes=7, per_class=357, L=8, d=64, sigma_noise=0.3, rho_hetero=0.5
    )
    # preset training rate is the desk-scale 1e-3, not the fine-tuning default
    train_config = train_config or TrainConfig(learning_rate=1e-3, epochs=8)
    base = ModelVariant(d=synth.d, L=synth.L, h=8)
    return ExperimentSpec(
        name=preset,
        synth=synth,
        variants=_grid_variants(preset, base),
        train=train_config,
        seeds=list(seeds) if seeds else [0, 1, 2, 3, 4],
    )


def run_ablation(spec: ExperimentSpec, out_dir) -> AblationResult:
    """Train every (variant, seed) cell and write CSV reports plus figures."""
    from dataclasses import replace

    from .report import render_ablation_summary

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cells: list[CellResult] = []
    for label, variant in spec.variants:
        for seed in spec.seeds:
            cell_dir = out / "cells" / f"{label}__seed{seed}"
            cell_dir.mkdir(parents=True, exist_ok=True)
            synth = replace(spec.synth, seed=seed)
            dataset = generate(synth)
            train_set, test_set = split(dataset, spec.test_fraction, seed)
            params = build_variant(variant, seed)
            cfg = replace(spec.train, seed=seed)
            try:
                history = train(params, variant, train_set, cfg, test_set=test_set)
                acc = evaluate(params, variant, test_set)
                cells.append(CellResult(label, seed, acc, history[-1].loss if history else None))
                write_metrics_csv(history, cell_dir / "metrics.csv")
            except TrainingError as exc:
                cells.append(CellResult(label, seed, None, None, error=str(exc)))
                (cell_dir / "error.txt").write_text(str(exc) + "\n")

    with open(out / "cells.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "seed", "test_acc", "final_loss", "error"])
        for c in cells:
            writer.writerow([
                c.variant, c.seed,
                "" if c.test_acc is None else repr(c.test_acc),
                "" if c.final_loss is None else repr(c.final_loss),
                c.error or "",
            ])

    summary = []
    for label, _ in spec.variants:
        accs = [c.test_acc for c in cells if c.variant == label and c.test_acc is not None]
        summary.append({
            "variant": label,
            "n_seeds": len(accs),
            "mean_test_acc": statistics.mean(accs) if accs else float("nan"),
            "std_test_acc": statistics.stdev(accs) if len(accs) > 1 else 0.0,
        })
    with open(out / "summary.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "n_seeds", "mean_test_acc", "std_test_acc"])
        for row in summary:
            writer.writerow([row["variant"], row["n_seeds"],
                             repr(row["mean_test_acc"]), repr(row["std_test_acc"])])
    render_ablation_summary(summary, out / "summary.png", title=spec.name)

    manifest = build_manifest(
        command="ablate",
        spec={
            "name": spec.name,
            "synth": asdict(spec.synth),
            "variants": [(label, v.to_dict()) for label, v in spec.variants],
            "train": asdict(spec.train),
            "seeds": spec.seeds,
            "test_fraction": spec.test_fraction,
            "deterministic": spec.deterministic,
        },
    )
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return AblationResult(cells=cells, summary=summary)


def audit_gradients(
    variant: ModelVariant | None = None,
    seed: int = 0,
    batch_size: int = 2,
    sabotage: str | None = None,
) -> dict[str, float]:
    """Central-difference check of every parameter through forward + loss.

    Extents are capped (d <= 8, L <= 2, B <= 2) to keep the full sweep fast.
    `sabotage` doubles one parameter's analytic gradient so the audit's own
    failure path can be exercised.
    """
    if variant is None:
        variant = ModelVariant(d=8, L=2, h=2, d_h=16, classifier_widths=(16, 12, 10, 8))
    if variant.d > 8 or variant.L > 2 or batch_size > 2:
        raise ValueError("audit extents capped at d<=8, L<=2, B<=2")
    params = build_variant(variant, seed)
    rng = np.random.default_rng(np.random.PCG64(seed + 1))
    text = rng.uniform(-1, 1, size=(batch_size, variant.L, variant.d))
    image = rng.uniform(-1, 1, size=(batch_size, variant.L, variant.d))
    labels = rng.integers(0, variant.d_cls, size=batch_size)

    def loss():
        probs = forward(Tensor(text), Tensor(image), variant, params)
        return cross_entropy(probs, labels)

    grad_scale = None
    if sabotage is not None:
        if sabotage not in params.named:
            raise ValueError(f"unknown parameter {sabotage!r}")
        grad_scale = {sabotage: 2.0}
    return gradient_check_detailed(loss, params.named, grad_scale=grad_scale)


def git_describe() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True, text=True, timeout=5,
        )
        if out.returncode == 0:
            return out.stdout.strip()
    except OSError:
        pass
    return "unknown"


def build_manifest(command: str, spec: dict) -> dict:
    return {
        "format": "sgmft-run-manifest",
        "version": 1,
        "package_version": __version__,
        "build": git_describe(),
        "command": command,
        "spec": spec,
    }
