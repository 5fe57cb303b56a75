"""Experiment front-end.

Subcommands: gen-data, train, eval, ablate, project, grad-audit. Options may
come from a JSON or TOML config file (--config); explicit flags win over the
file. Exit codes: 0 success, 2 config error, 3 grid-cell failure, 4 gradient
audit failure.
"""

from __future__ import annotations

import json
import sys

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import asdict, replace
from pathlib import Path

import click
import numpy as np

from . import __version__
from .data import (
    EmbeddingFormatError,
    SynthConfig,
    generate,
    load_embeddings,
    save_embeddings,
    split,
)
from .experiments import (
    AUDIT_TOLERANCE,
    PRESET_NAMES,
    audit_gradients,
    build_manifest,
    preset_spec,
    run_ablation,
)
from .interaction import ConfigurationError
from .model import ModelVariant, build_variant, load_checkpoint, save_checkpoint
from .projection import project_representations
from .train import TrainConfig, TrainingError, evaluate, train, write_metrics_csv

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CELL_FAILURE = 3
EXIT_AUDIT_FAILURE = 4


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    try:
        if p.suffix == ".toml":
            return tomllib.loads(p.read_text())
        return json.loads(p.read_text())
    except (OSError, ValueError) as exc:
        raise click.UsageError(f"cannot read config {path}: {exc}")


def _merge_config(ctx: click.Context, config: dict) -> None:
    """Fill options left at their defaults from the config file."""
    for name in ctx.params:
        if name in ("config",):
            continue
        source = ctx.get_parameter_source(name)
        if source == click.core.ParameterSource.DEFAULT and name in config:
            ctx.params[name] = config[name]


def _variant_from_params(p: dict) -> ModelVariant:
    return ModelVariant(
        d=p["width"], L=p["tokens"], h=p["heads"], use_sim=p["use_sim"],
        ffn_role=p["ffn_role"], fusion_kind=p["fusion"], depth=p["depth"],
    )


@click.group()
@click.version_option(__version__)
def main() -> None:
    """Similarity-guided multimodal fusion experiments."""


@main.command("gen-data")
@click.option("--config", type=click.Path(exists=True), default=None,
              help="JSON or TOML file with option defaults.")
@click.option("--classes", default=7, show_default=True)
@click.option("--per-class", default=100, show_default=True)
@click.option("--tokens", default=8, show_default=True, help="Tokens per modality (L).")
@click.option("--width", default=64, show_default=True, help="Channel width (d).")
@click.option("--latent", default=None, type=int, help="Latent width (default d//2).")
@click.option("--sigma-noise", default=0.0, show_default=True)
@click.option("--rho-hetero", default=0.0, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", required=True, type=click.Path(), help="Output embedding file.")
@click.pass_context
def gen_data(ctx, config, classes, per_class, tokens, width, latent,
             sigma_noise, rho_hetero, seed, out):
    """Generate a synthetic embedding corpus and write it to a binary file."""
    _merge_config(ctx, _load_config_file(config))
    p = ctx.params
    try:
        synth = SynthConfig(
            classes=p["classes"], per_class=p["per_class"], L=p["tokens"],
            d=p["width"], k=p["latent"], sigma_noise=p["sigma_noise"],
            rho_hetero=p["rho_hetero"], seed=p["seed"],
        )
    except ValueError as exc:
        raise click.UsageError(str(exc))
    dataset = generate(synth)
    save_embeddings(dataset, p["out"])
    click.echo(f"wrote {len(dataset)} samples to {p['out']}")


def _train_options(fn):
    opts = [
        click.option("--width", default=64, show_default=True),
        click.option("--tokens", default=8, show_default=True),
        click.option("--heads", default=8, show_default=True),
        click.option("--depth", default=1, show_default=True),
        click.option("--use-sim/--no-sim", "use_sim", default=True, show_default=True),
        click.option("--ffn-role", type=click.Choice(["text_wise", "image_wise"]),
                     default="text_wise", show_default=True),
        click.option("--fusion", type=click.Choice(
            ["sfm", "merge_attention", "co_attention", "asym_co_attention", "concat"]),
            default="sfm", show_default=True),
        click.option("--lr", default=1e-5, show_default=True),
        click.option("--epochs", default=30, show_default=True),
        click.option("--batch-size", default=20, show_default=True),
        click.option("--test-fraction", default=0.2, show_default=True),
        click.option("--seed", default=0, show_default=True),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


@main.command("train")
@click.option("--config", type=click.Path(exists=True), default=None)
@click.option("--data", type=click.Path(exists=True), default=None,
              help="Embedding file (see gen-data).")
@click.option("--from-manifest", type=click.Path(exists=True), default=None,
              help="Replay a previous run manifest.")
@_train_options
@click.option("--deterministic/--no-deterministic", default=True, show_default=True)
@click.option("--out", required=True, type=click.Path())
@click.pass_context
def train_cmd(ctx, config, data, from_manifest, deterministic, out, **_):
    """Train one model variant on an embedding file and write reports."""
    from .report import render_training_curves

    _merge_config(ctx, _load_config_file(config))
    p = ctx.params
    if from_manifest:
        saved = json.loads(Path(from_manifest).read_text())
        if saved.get("format") != "sgmft-run-manifest" or saved.get("command") != "train":
            raise click.UsageError(f"{from_manifest} is not a train run manifest")
        spec = saved["spec"]
        data = spec["data"]
        variant = ModelVariant.from_dict(spec["variant"])
        cfg = TrainConfig(**spec["train"])
        test_fraction = spec["test_fraction"]
        deterministic = spec.get("deterministic", True)
    else:
        if data is None:
            raise click.UsageError("either --data or --from-manifest is required")
        variant = _variant_from_params(p)
        cfg = TrainConfig(
            learning_rate=p["lr"], epochs=p["epochs"],
            batch_size=p["batch_size"], seed=p["seed"],
        )
        test_fraction = p["test_fraction"]

    try:
        dataset = load_embeddings(data)
    except EmbeddingFormatError as exc:
        raise click.UsageError(str(exc))
    if dataset.d != variant.d:
        raise click.UsageError(
            f"data width d={dataset.d} does not match variant width d={variant.d}"
        )
    train_set, test_set = split(dataset, test_fraction, cfg.seed)
    try:
        params = build_variant(variant, cfg.seed)
        history = train(params, variant, train_set, cfg, test_set=test_set)
    except (ConfigurationError, ValueError) as exc:
        raise click.UsageError(str(exc))
    except TrainingError as exc:
        click.echo(f"training failed: {exc}", err=True)
        sys.exit(EXIT_CELL_FAILURE)

    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(history, out_dir / "metrics.csv")
    save_checkpoint(params, out_dir / "checkpoint.npz")
    render_training_curves(history, out_dir / "curves.png")
    manifest = build_manifest("train", {
        "data": str(data),
        "variant": variant.to_dict(),
        "train": asdict(cfg),
        "test_fraction": test_fraction,
        "deterministic": deterministic,
    })
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2))
    final = history[-1] if history else None
    if final is not None:
        click.echo(f"final epoch {final.epoch}: loss={final.loss:.4f} "
                   f"train_acc={final.train_acc:.4f} test_acc={final.test_acc:.4f}")
    click.echo(f"reports written to {out_dir}")


@main.command("eval")
@click.option("--data", required=True, type=click.Path(exists=True))
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--out", type=click.Path(), default=None, help="Optional JSON report path.")
def eval_cmd(data, checkpoint, out):
    """Evaluate a checkpoint on every sample of an embedding file."""
    try:
        dataset = load_embeddings(data)
        params = load_checkpoint(checkpoint)
    except (EmbeddingFormatError, ValueError) as exc:
        raise click.UsageError(str(exc))
    acc = evaluate(params, params.variant, dataset)
    click.echo(f"accuracy: {acc:.4f} on {len(dataset)} samples")
    if out:
        Path(out).write_text(json.dumps(
            {"accuracy": acc, "samples": len(dataset), "data": str(data)}, indent=2))


@main.command("ablate")
@click.option("--config", type=click.Path(exists=True), default=None)
@click.option("--preset", type=click.Choice(list(PRESET_NAMES)), required=True)
@click.option("--seed", "seeds", multiple=True, type=int,
              help="Repeatable; defaults to 0..4.")
@click.option("--per-class", default=357, show_default=True)
@click.option("--sigma-noise", default=0.3, show_default=True)
@click.option("--rho-hetero", default=0.5, show_default=True)
@click.option("--lr", default=1e-3, show_default=True)
@click.option("--epochs", default=8, show_default=True)
@click.option("--batch-size", default=20, show_default=True)
@click.option("--deterministic/--no-deterministic", default=True, show_default=True)
@click.option("--out", required=True, type=click.Path())
@click.pass_context
def ablate_cmd(ctx, config, preset, seeds, per_class, sigma_noise, rho_hetero,
               lr, epochs, batch_size, deterministic, out):
    """Run an ablation grid and write per-cell CSVs, a summary, and a figure."""
    _merge_config(ctx, _load_config_file(config))
    p = ctx.params
    try:
        spec = preset_spec(
            p["preset"],
            seeds=list(p["seeds"]) or None,
            synth=SynthConfig(classes=7, per_class=p["per_class"], L=8, d=64,
                              sigma_noise=p["sigma_noise"], rho_hetero=p["rho_hetero"]),
            train_config=TrainConfig(learning_rate=p["lr"], epochs=p["epochs"],
                                     batch_size=p["batch_size"]),
        )
        spec.deterministic = p["deterministic"]
    except ValueError as exc:
        raise click.UsageError(str(exc))
    result = run_ablation(spec, p["out"])
    for row in result.summary:
        click.echo(f"{row['variant']}: mean={row['mean_test_acc']:.4f} "
                   f"std={row['std_test_acc']:.4f} (n={row['n_seeds']})")
    if result.failed:
        for c in result.cells:
            if c.error:
                click.echo(f"cell {c.variant} seed {c.seed} failed: {c.error}", err=True)
        sys.exit(EXIT_CELL_FAILURE)


@main.command("project")
@click.option("--data", required=True, type=click.Path(exists=True))
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
def project_cmd(data, checkpoint, out):
    """Project fused representations onto 2 principal components."""
    from sklearn.metrics import silhouette_score

    from .report import render_projection

    try:
        dataset = load_embeddings(data)
        params = load_checkpoint(checkpoint)
        result = project_representations(params, params.variant, dataset)
    except (EmbeddingFormatError, ValueError) as exc:
        raise click.UsageError(str(exc))
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "coords.csv", "w", newline="") as fh:
        fh.write("x,y,label\n")
        for (x, y), label in zip(result.coords, result.labels):
            fh.write(f"{x!r},{y!r},{label}\n")
    silhouette = float("nan")
    if len(np.unique(result.labels)) > 1:
        silhouette = float(silhouette_score(result.coords, result.labels))
    (out_dir / "projection.json").write_text(json.dumps({
        "variance_explained": [float(v) for v in result.variance_explained],
        "silhouette": silhouette,
        "samples": int(len(result.labels)),
    }, indent=2))
    render_projection(result.coords, result.labels, out_dir / "projection.png")
    click.echo(f"explained variance (2 PCs): {result.variance_explained.sum():.3f}, "
               f"silhouette: {silhouette:.3f}")


@main.command("grad-audit")
@click.option("--seed", default=0, show_default=True)
@click.option("--sabotage", default=None,
              help="Parameter name whose analytic gradient is doubled (self-test).")
@click.option("--out", type=click.Path(), default=None, help="Optional JSON report path.")
def grad_audit_cmd(seed, sabotage, out):
    """Check every parameter's gradient against central differences."""
    try:
        errors = audit_gradients(seed=seed, sabotage=sabotage)
    except ValueError as exc:
        raise click.UsageError(str(exc))
    worst = max(errors.values())
    for name in sorted(errors):
        flag = "" if errors[name] <= AUDIT_TOLERANCE else "  <-- FAIL"
        click.echo(f"{name:40s} {errors[name]:.3e}{flag}")
    click.echo(f"max relative error: {worst:.3e} (tolerance {AUDIT_TOLERANCE:.0e})")
    if out:
        Path(out).write_text(json.dumps(
            {"errors": errors, "max": worst, "tolerance": AUDIT_TOLERANCE}, indent=2))
    if worst > AUDIT_TOLERANCE:
        sys.exit(EXIT_AUDIT_FAILURE)


if __name__ == "__main__":
    main()
