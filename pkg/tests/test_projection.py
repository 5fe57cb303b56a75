import numpy as np
import pytest

from sgmft.data import SynthConfig, generate
from sgmft.model import ModelVariant, build_variant
from sgmft.projection import fused_representations, pca_2d, project_representations

VARIANT = ModelVariant(d=8, L=3, h=2, d_cls=4, d_h=16,
                       classifier_widths=(12, 10, 8, 6))


class TestPca:
    def test_rank_one_data_has_flat_second_axis(self):
        t = np.linspace(-2.0, 2.0, 20)
        direction = np.array([3.0, 1.0, -2.0])
        features = t[:, None] * direction[None, :]
        coords, explained, _ = pca_2d(features)
        assert np.all(np.abs(coords[:, 1]) <= 1e-8)
        assert explained[0] == pytest.approx(1.0, abs=1e-12)

    def test_duplicated_rows_project_identically(self):
        rng = np.random.default_rng(0)
        features = rng.normal(size=(10, 6))
        doubled = np.concatenate([features, features], axis=0)
        coords, _, _ = pca_2d(doubled)
        assert np.array_equal(coords[:10], coords[10:])

    def test_variance_explained_matches_full_spectrum(self):
        rng = np.random.default_rng(1)
        features = rng.normal(size=(40, 8)) * np.arange(1, 9)
        _, explained, eigvals = pca_2d(features)
        centered = features - features.mean(axis=0)
        oracle = np.linalg.eigvalsh(centered.T @ centered / 39)[::-1]
        assert np.allclose(eigvals, oracle, atol=1e-9)
        assert np.allclose(explained, oracle[:2] / oracle.sum(), atol=1e-12)

    def test_deterministic_sign_convention(self):
        rng = np.random.default_rng(2)
        features = rng.normal(size=(30, 5))
        a, _, _ = pca_2d(features)
        b, _, _ = pca_2d(features.copy())
        assert np.array_equal(a, b)

    def test_too_few_samples_rejected(self):
        with pytest.raises(ValueError, match="2 samples"):
            pca_2d(np.ones((1, 4)))

    def test_coords_are_centered(self):
        rng = np.random.default_rng(3)
        coords, _, _ = pca_2d(rng.normal(size=(25, 6)))
        assert np.all(np.abs(coords.mean(axis=0)) <= 1e-9)


class TestProjectRepresentations:
    def _dataset(self):
        return generate(SynthConfig(classes=4, per_class=8, L=3, d=8, seed=0))

    def test_shapes_and_labels(self):
        dataset = self._dataset()
        params = build_variant(VARIANT, 0)
        result = project_representations(params, VARIANT, dataset)
        assert result.coords.shape == (32, 2)
        assert np.array_equal(result.labels, dataset.labels)
        assert result.eigenvalues.shape == (VARIANT.d,)

    def test_batch_size_does_not_change_features(self):
        dataset = self._dataset()
        params = build_variant(VARIANT, 0)
        a = fused_representations(params, VARIANT, dataset, batch_size=5)
        b = fused_representations(params, VARIANT, dataset, batch_size=64)
        assert np.allclose(a, b, atol=1e-12)

    def test_concat_head_widens_features(self):
        variant = ModelVariant(d=8, L=3, h=2, d_cls=4, d_h=16, use_sim=False,
                               fusion_kind="concat", classifier_widths=(12, 10, 8, 6))
        dataset = self._dataset()
        params = build_variant(variant, 0)
        features = fused_representations(params, variant, dataset)
        assert features.shape == (32, 16)


class TestReportFigures:
    def test_projection_figure_written(self, tmp_path):
        from sgmft.report import render_projection

        rng = np.random.default_rng(4)
        path = tmp_path / "projection.png"
        render_projection(rng.normal(size=(30, 2)),
                          rng.integers(0, 4, size=30), path, title="demo")
        assert path.stat().st_size > 0

    def test_summary_figure_written(self, tmp_path):
        from sgmft.report import render_ablation_summary

        rows = [
            {"variant": "baseline", "mean_test_acc": 0.7, "std_test_acc": 0.02},
            {"variant": "full", "mean_test_acc": 0.9, "std_test_acc": 0.01},
        ]
        path = tmp_path / "summary.png"
        render_ablation_summary(rows, path, title="grid")
        assert path.stat().st_size > 0

    def test_curves_figure_written(self, tmp_path):
        from sgmft.report import render_training_curves
        from sgmft.train import EpochMetrics

        history = [EpochMetrics(e, 2.0 - 0.3 * e, 0.3 + 0.1 * e, 0.25 + 0.1 * e, 1.0)
                   for e in range(4)]
        path = tmp_path / "curves.png"
        render_training_curves(history, path)
        assert path.stat().st_size > 0
