from unittest.mock import patch

import numpy as np
import pytest
from pydantic import ValidationError

from react_sg.config import AugmentConfig, TrainConfig
from react_sg.embedding import (
    EmbeddingModel,
    ModelFile,
    embed,
    embed_batch,
    embed_views,
    evaluate_loss,
    train,
    triplet_loss,
    triplet_loss_grad,
)
from react_sg.errors import (
    DatasetTooSmallError,
    DegenerateEmbeddingError,
    DimensionMismatchError,
    DivergenceError,
)
from react_sg.models import LabeledView, TripletDataset


def _two_category_dataset(dim=16, per_label=20, seed=3):
    rng = np.random.default_rng(seed)
    items = []
    for label in ("chair:1", "table:1"):
        prototype = rng.standard_normal(dim)
        items.extend(
            LabeledView(
                data=tuple(prototype + 0.05 * rng.standard_normal(dim)),
                label=label,
            )
            for _ in range(per_label)
        )
    return TripletDataset(items=tuple(items))


def _loss(model, triplet, alpha):
    a, p, n = (embed(model, x) for x in triplet)
    return triplet_loss(a, p, n, alpha)


def _train_config(**overrides):
    settings = {
        "epochs": 30,
        "learning_rate": 0.005,
        "batch_size": 16,
        "seed": 11,
        "layer_dims": (16, 12, 8),
        "augmentation": AugmentConfig(enabled=False),
    }
    settings.update(overrides)
    return TrainConfig(**settings)


class TestEmbed:
    def test_identity_model_normalizes(self, identity_model):
        model = identity_model(2, normalize=True)

        out = embed(model, [3.0, 4.0])

        np.testing.assert_allclose(out, [0.6, 0.8])

    def test_zero_model_without_normalization(self):
        model = EmbeddingModel(
            layer_dims=(3, 2),
            weights=(np.zeros((3, 2)),),
            biases=(np.zeros(2),),
            normalize_output=False,
        )

        np.testing.assert_array_equal(embed(model, [1.0, 2.0, 3.0]), [0, 0])

    def test_zero_output_cannot_be_normalized(self):
        model = EmbeddingModel(
            layer_dims=(3, 2),
            weights=(np.zeros((3, 2)),),
            biases=(np.zeros(2),),
        )

        with pytest.raises(DegenerateEmbeddingError, match="all-zero"):
            embed(model, [1.0, 2.0, 3.0])

    def test_matches_straight_line_forward_pass(self):
        model = EmbeddingModel.initialize((5, 4, 3, 2), seed=9)
        x = np.array([0.3, -1.2, 0.8, 0.05, 2.0])

        h = x
        for i, (w, b) in enumerate(zip(model.weights, model.biases)):
            h = sum(h[k] * w[k] for k in range(len(h))) + b
            if i < 2:
                h = np.array([max(v, 0.0) for v in h])
        expected = h / np.sqrt(sum(v * v for v in h))

        np.testing.assert_allclose(embed(model, x), expected, atol=1e-12)

    def test_normalized_outputs_have_unit_norm(self):
        model = EmbeddingModel.initialize((6, 5, 4), seed=1)
        batch = np.random.default_rng(0).standard_normal((10, 6))

        norms = np.linalg.norm(embed_batch(model, batch), axis=1)

        np.testing.assert_allclose(norms, 1.0, atol=1e-6)

    def test_views_match_batch(self):
        model = EmbeddingModel.initialize((6, 5, 4), seed=1)
        batch = np.random.default_rng(0).standard_normal((7, 6))

        np.testing.assert_allclose(
            embed_views(model, batch), embed_batch(model, batch), atol=1e-12
        )

    def test_wrong_length_is_rejected(self):
        model = EmbeddingModel.initialize((6, 4), seed=1)

        with pytest.raises(DimensionMismatchError, match="model input 6"):
            embed(model, [1.0, 2.0])

    def test_non_finite_input_is_rejected(self):
        model = EmbeddingModel.initialize((2, 2), seed=1)

        with pytest.raises(DimensionMismatchError, match="finite"):
            embed(model, [np.inf, 1.0])


class TestTripletLoss:
    def test_coincident_embeddings_cost_the_margin(self):
        assert triplet_loss([1.0, 2.0], [1.0, 2.0], [1.0, 2.0], 0.7) == 0.7

    def test_hinge_boundary(self):
        assert triplet_loss([0.0, 0.0], [0.0, 0.0], [1.0, 0.0], 1.0) == 0.0

    def test_worked_example(self):
        a, p, n = [0.0, 0.0], [1.0, 0.0], [0.0, 2.0]

        assert triplet_loss(a, p, n, 1.0) == 0.0
        assert triplet_loss(a, p, n, 4.0) == 1.0

    def test_shape_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            triplet_loss([0.0], [0.0, 1.0], [1.0], 1.0)


class TestTripletLossGrad:
    def test_inactive_hinge_gives_zero_gradients(self, identity_model):
        model = identity_model(2)

        grads = triplet_loss_grad(
            model, [0.0, 0.0], [0.1, 0.0], [5.0, 0.0], 1.0
        )

        for w, b in grads:
            assert not w.any()
            assert not b.any()

    def test_single_linear_layer_closed_form(self, identity_model):
        model = identity_model(2)
        a = np.array([1.0, 0.0])
        p = np.array([0.0, 1.0])
        n = np.array([1.0, 0.5])

        [(grad_w, grad_b)] = triplet_loss_grad(model, a, p, n, 1.0)

        d_fa = 2 * (n - p)
        d_fp = -2 * (a - p)
        d_fn = 2 * (a - n)
        expected_w = (
            np.outer(a, d_fa) + np.outer(p, d_fp) + np.outer(n, d_fn)
        )
        np.testing.assert_allclose(grad_w, expected_w)
        np.testing.assert_allclose(grad_b, d_fa + d_fp + d_fn)

    def test_agrees_with_central_differences(self):
        rng = np.random.default_rng(5)
        step = 1e-5
        alpha = 5.0
        for draw in range(50):
            model = EmbeddingModel.initialize((8, 6, 4), seed=draw)
            a, p, n = rng.standard_normal((3, 8))

            analytic = triplet_loss_grad(model, a, p, n, alpha)

            params = model.parameters()
            for layer, (w, b) in enumerate(params):
                for which, array in ((0, w), (1, b)):
                    numeric = np.zeros_like(array)
                    for idx in np.ndindex(array.shape):
                        shifted = []
                        for sign in (1.0, -1.0):
                            changed = [(x.copy(), y.copy()) for x, y in params]
                            changed[layer][which][idx] += sign * step
                            shifted.append(
                                _loss(
                                    model.with_parameters(changed),
                                    (a, p, n),
                                    alpha,
                                )
                            )
                        numeric[idx] = (shifted[0] - shifted[1]) / (2 * step)
                    np.testing.assert_allclose(
                        analytic[layer][which], numeric, rtol=1e-4, atol=1e-7
                    )


class TestEvaluateLoss:
    def test_empty_dataset(self, identity_model):
        assert evaluate_loss(identity_model(2), TripletDataset(), 1.0) == 0.0

    def test_batch_all_mean(self, identity_model):
        dataset = TripletDataset(
            items=(
                LabeledView(data=(0.0,), label="a"),
                LabeledView(data=(0.0,), label="a"),
                LabeledView(data=(0.5,), label="b"),
            )
        )

        # both a-anchors: max(0, 0 - 0.25 + 1) = 0.75
        assert evaluate_loss(identity_model(1), dataset, 1.0) == 0.75


class TestTrain:
    def test_epochs_must_be_positive(self):
        with pytest.raises(ValidationError):
            TrainConfig(epochs=0)

    def test_single_label_is_too_small(self):
        dataset = TripletDataset(
            items=tuple(
                LabeledView(data=(float(k),) * 16, label="chair:1")
                for k in range(4)
            )
        )
        model = EmbeddingModel.initialize((16, 8), seed=0)

        with pytest.raises(DatasetTooSmallError, match="at least 2 labels"):
            train(model, dataset, _train_config(layer_dims=(16, 8)))

    def test_separates_two_categories(self):
        dataset = _two_category_dataset()
        config = _train_config()
        model = EmbeddingModel.initialize(
            config.layer_dims, seed=config.seed, margin_alpha=4.0
        )
        before = evaluate_loss(model, dataset, 4.0)

        trained, history = train(model, dataset, config)

        assert len(history) == 30
        assert evaluate_loss(trained, dataset, 4.0) <= before
        out = embed_batch(trained, [item.data for item in dataset.items])
        labels = np.array(dataset.labels())
        dist = ((out[:, None] - out[None]) ** 2).sum(axis=-1)
        same = labels[:, None] == labels[None]
        off_diagonal = ~np.eye(len(labels), dtype=bool)
        assert dist[same & off_diagonal].max() < dist[~same].min()

    def test_seeded_runs_are_identical(self):
        dataset = _two_category_dataset()
        config = _train_config(
            epochs=3, augmentation=AugmentConfig(enabled=True)
        )
        model = EmbeddingModel.initialize(
            config.layer_dims, seed=config.seed, margin_alpha=4.0
        )

        first, first_history = train(model, dataset, config)
        second, second_history = train(model, dataset, config)

        assert first_history == second_history
        for w1, w2 in zip(first.weights, second.weights):
            np.testing.assert_array_equal(w1, w2)

    def test_validation_loss_is_reported(self):
        dataset = _two_category_dataset()
        validation = _two_category_dataset(per_label=3, seed=3)
        config = _train_config(epochs=2)
        model = EmbeddingModel.initialize(config.layer_dims, seed=0)

        _, history = train(model, dataset, config, validation)

        assert all(s.validation_loss is not None for s in history)

    def test_all_zero_output_is_divergence(self):
        model = EmbeddingModel(
            layer_dims=(16, 8),
            weights=(np.zeros((16, 8)),),
            biases=(np.zeros(8),),
        )
        config = _train_config(epochs=1, layer_dims=(16, 8))

        with pytest.raises(DivergenceError, match="diverged at epoch 1"):
            train(model, _two_category_dataset(), config)

    @patch("react_sg.embedding._triplet_output_grads")
    def test_non_finite_loss_raises(self, mock_grads):
        mock_grads.side_effect = lambda out, triplets, _alpha: (
            np.full(len(triplets), np.nan),
            np.zeros_like(out),
        )
        dataset = _two_category_dataset()
        config = _train_config(epochs=1)
        model = EmbeddingModel.initialize(
            config.layer_dims, seed=0, margin_alpha=4.0
        )

        with pytest.raises(DivergenceError, match="diverged at epoch 1"):
            train(model, dataset, config)


class TestModelFile:
    def test_file_restores_parameters(self):
        model = EmbeddingModel.initialize((4, 3, 2), seed=2)

        restored = EmbeddingModel.from_file(
            ModelFile.model_validate_json(model.to_file().model_dump_json())
        )

        for w1, w2 in zip(model.weights, restored.weights):
            np.testing.assert_array_equal(w1, w2)
        assert restored.layer_dims == (4, 3, 2)

    def test_rejects_wrong_shapes(self):
        with pytest.raises(ValidationError, match="do not match"):
            ModelFile(
                layer_dims=[2, 2],
                normalize_output=True,
                margin_alpha=1.0,
                weights=[[1.0, 0.0, 0.0]],
                biases=[[0.0, 0.0]],
            )
