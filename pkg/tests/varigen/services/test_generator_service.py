"""Unit tests for generator_service.py."""
import numpy as np
import pytest
import torch

import varigen.services.generator_service as under_test
from varigen.errors import EmptyInput, NonFiniteLoss, ShapeMismatch
from varigen.models.latent import Codebook, LatentGrid, SamplingMode, VarianceGrid
from varigen.services.config_service import GeneratorConfig, VarianceConfig


def small_config(**kwargs):
    values = dict(K=8, latent_dim=4, grid=4, resolution=16, hidden_channels=8)
    values.update(kwargs)
    return GeneratorConfig(**values)


def toy_images(count, size=16, seed=0):
    rng = np.random.default_rng(seed)
    rows, cols = np.mgrid[0:size, 0:size] / size
    images = []
    for _ in range(count):
        cy, cx = rng.uniform(0.4, 0.6, size=2)
        blob = ((rows - cy) ** 2 + (cols - cx) ** 2 < 0.08).astype(np.float64)
        color = rng.uniform(0.5, 0.8, size=3)
        images.append(0.1 + blob[:, :, None] * color[None, None, :] * 0.8)
    return images


@pytest.fixture()
def generator():
    return under_test.GeneratorService(small_config())


class TestQuantize:
    def test_indices_should_match_exhaustive_search(self):
        generator = torch.Generator().manual_seed(0)
        codebook = Codebook(vectors=torch.randn(16, 4, generator=generator, dtype=torch.float64))
        latents = LatentGrid(values=torch.randn(200, 4, generator=generator, dtype=torch.float64))

        quantized = under_test.quantize(latents, codebook)

        expected = []
        for row in latents.values:
            distances = [float(((row - code) ** 2).sum()) for code in codebook.vectors]
            expected.append(int(np.argmin(distances)))
        assert quantized.indices.tolist() == expected
        assert torch.equal(quantized.values, codebook.vectors[quantized.indices])

    def test_ties_should_go_to_smallest_index(self):
        codebook = Codebook(vectors=torch.tensor([[1.0, 0.0], [-1.0, 0.0], [1.0, 0.0]]))
        latents = LatentGrid(values=torch.tensor([[0.0, 0.0], [2.0, 0.0]]))

        assert under_test.quantize(latents, codebook).indices.tolist() == [0, 0]

    def test_quantize_should_be_idempotent(self):
        generator = torch.Generator().manual_seed(1)
        codebook = Codebook(vectors=torch.randn(8, 3, generator=generator))
        latents = LatentGrid(values=torch.randn(10, 3, generator=generator))

        once = under_test.quantize(latents, codebook)
        twice = under_test.quantize(once, codebook)

        assert torch.equal(once.values, twice.values)
        assert torch.equal(once.indices, twice.indices)


class TestEstimateStatistics:
    def test_statistics_should_match_two_pass_oracle(self):
        generator = torch.Generator().manual_seed(2)
        grids = [
            LatentGrid(values=torch.randn(16, 4, generator=generator, dtype=torch.float64))
            for _ in range(10)
        ]

        mean, variance = under_test.estimate_statistics(grids)

        stacked = np.stack([g.values.numpy() for g in grids])
        expected_mean = stacked.sum(axis=0) / 10
        expected_variance = ((stacked - expected_mean) ** 2).sum(axis=0) / 10
        np.testing.assert_allclose(mean.values.numpy(), expected_mean, rtol=1e-9)
        np.testing.assert_allclose(variance.values.numpy(), expected_variance, rtol=1e-9)

    def test_single_grid_should_have_zero_variance(self):
        grid = LatentGrid(values=torch.randn(16, 4))

        mean, variance = under_test.estimate_statistics([grid])

        assert torch.equal(mean.values, grid.values)
        assert bool((variance.values == 0).all())

    def test_scalar_per_patch_should_average_over_channels(self):
        generator = torch.Generator().manual_seed(3)
        grids = [LatentGrid(values=torch.randn(4, 3, generator=generator)) for _ in range(5)]

        _, per_entry = under_test.estimate_statistics(grids)
        _, per_patch = under_test.estimate_statistics(grids, scalar_per_patch=True)

        expected = per_entry.values.mean(dim=1, keepdim=True).expand(4, 3)
        assert torch.allclose(per_patch.values, expected)

    def test_no_grids_should_raise(self):
        with pytest.raises(EmptyInput):
            under_test.estimate_statistics([])

    def test_mixed_shapes_should_raise(self):
        with pytest.raises(ShapeMismatch):
            under_test.estimate_statistics(
                [LatentGrid(values=torch.zeros(4, 2)), LatentGrid(values=torch.zeros(9, 2))]
            )


class TestSampling:
    @pytest.mark.parametrize(
        "mode",
        [SamplingMode.MEAN, SamplingMode.MEAN_PLUS_SIGMA, SamplingMode.MEAN_PLUS_SIGMA_EPS],
    )
    def test_zero_variance_should_reproduce_decoded_mean(self, generator, mode):
        mean = generator.encode(toy_images(1)[0])
        variance = VarianceGrid.zeros_like(mean)

        images = generator.generate_set(mean, variance, 3, torch.Generator().manual_seed(0), mode)

        expected = generator.decode(mean)
        for image in images:
            np.testing.assert_array_equal(image, expected)

    def test_unit_variance_should_ignore_variance_grid(self):
        mean = torch.zeros(4, 2)

        drawn = under_test.draw_latents(
            mean, torch.zeros(4, 2), SamplingMode.UNIT_VARIANCE, torch.Generator().manual_seed(0), 2
        )

        assert drawn.shape == (2, 4, 2)
        assert float(drawn.abs().sum()) > 0.0

    def test_mean_plus_sigma_should_add_standard_deviation(self):
        mean = LatentGrid(values=torch.ones(2, 2))
        variance = VarianceGrid(values=torch.tensor([[4.0, 0.0], [1.0, 9.0]]))

        sampled = under_test.sample_latents(
            mean, variance, torch.Generator(), SamplingMode.MEAN_PLUS_SIGMA
        )

        assert torch.equal(sampled.values, torch.tensor([[3.0, 1.0], [2.0, 4.0]]))

    def test_sampling_should_be_reproducible_with_same_seed(self):
        mean = LatentGrid(values=torch.zeros(4, 2))
        variance = VarianceGrid(values=torch.ones(4, 2))

        first = under_test.sample_latents(mean, variance, torch.Generator().manual_seed(5))
        second = under_test.sample_latents(mean, variance, torch.Generator().manual_seed(5))

        assert torch.equal(first.values, second.values)

    def test_many_draws_should_match_mean_and_variance(self):
        mean = torch.full((1, 1), 1.5, dtype=torch.float64)
        variance = torch.full((1, 1), 4.0, dtype=torch.float64)
        mode = SamplingMode.MEAN_PLUS_SIGMA_EPS
        rng = torch.Generator().manual_seed(0)

        drawn = under_test.draw_latents(mean, variance, mode, rng, 10_000)

        assert float(drawn.mean()) == pytest.approx(1.5, abs=0.1)
        assert float(drawn.var()) == pytest.approx(4.0, rel=0.08)

    def test_mismatched_statistics_should_raise(self):
        with pytest.raises(ShapeMismatch):
            under_test.draw_latents(
                torch.zeros(4, 2), torch.zeros(4, 3), SamplingMode.MEAN, torch.Generator(), 1
            )

    def test_safe_sqrt_should_have_zero_gradient_at_zero(self):
        variance = torch.tensor([0.0, 4.0], requires_grad=True)

        under_test.safe_sqrt(variance).sum().backward()

        assert variance.grad.tolist() == [0.0, 0.25]


class TestLosses:
    def test_pixel_mse_should_match_double_loop_oracle(self):
        rng = np.random.default_rng(4)
        originals = [rng.uniform(size=(8, 8, 3)) for _ in range(3)]
        generated = [rng.uniform(size=(8, 8, 3)) for _ in range(4)]

        loss = under_test.mse_loss(originals, generated)

        expected = np.mean(
            [min(np.mean((g - o) ** 2) for o in originals) for g in generated]
        )
        assert loss == pytest.approx(expected, abs=1e-9)

    def test_mse_of_originals_with_themselves_should_be_zero(self):
        originals = toy_images(2)

        assert under_test.mse_loss(originals, originals) == 0.0

    def test_mse_of_mismatched_shapes_should_raise(self):
        with pytest.raises(ShapeMismatch):
            under_test.mse_loss([np.zeros((8, 8, 3))], [np.zeros((4, 4, 3))])

    def test_vq_objective_without_commitment_should_sum_remaining_terms(self):
        model = under_test.build_model(small_config(beta=0.0), dtype=torch.float64)
        batch = torch.from_numpy(np.stack(toy_images(2))).permute(0, 3, 1, 2).contiguous()

        with torch.no_grad():
            objective = float(model.vq_objective(batch))
            latents = model.encode_batch(batch)
            anchors = model.anchors(latents)
            reconstruction = model.decode_batch(anchors.codes)
            expected = float(
                (
                    ((reconstruction - batch) ** 2).mean(dim=(1, 2, 3))
                    + ((latents - anchors.codes) ** 2).sum(dim=(1, 2))
                ).mean()
            )

        assert objective == pytest.approx(expected, rel=1e-12)


class TestGradientCheck:
    @pytest.mark.parametrize("draw", range(20))
    def test_analytic_gradients_should_match_central_differences(self, draw):
        config = GeneratorConfig(
            K=4, latent_dim=2, grid=2, resolution=4, hidden_channels=4, channels=1, seed=draw
        )
        model = under_test.build_model(config, dtype=torch.float64)
        rng = torch.Generator().manual_seed(draw)
        images = torch.rand(2, 1, 4, 4, generator=rng, dtype=torch.float64)
        anchors = model.anchors(model.encode_batch(images))

        model.zero_grad()
        model.vq_objective(images, anchors).backward()
        h = 1e-4

        for name, parameter in model.named_parameters():
            flat = parameter.data.view(-1)
            coordinates = torch.randperm(flat.numel(), generator=rng)[:8]
            for i in coordinates.tolist():
                original = float(flat[i])
                with torch.no_grad():
                    flat[i] = original + h
                    plus = float(model.vq_objective(images, anchors))
                    flat[i] = original - h
                    minus = float(model.vq_objective(images, anchors))
                    flat[i] = original
                numeric = (plus - minus) / (2 * h)
                analytic = float(parameter.grad.view(-1)[i])
                assert analytic == pytest.approx(numeric, rel=1e-3, abs=1e-7), (name, i)


class TestGeneratorService:
    def test_encode_should_give_one_latent_per_grid_position(self, generator):
        grid = generator.encode(toy_images(1)[0])

        assert grid.positions == 16
        assert grid.channels == 4
        assert not grid.is_quantized

    def test_wrong_image_size_should_raise(self, generator):
        with pytest.raises(ShapeMismatch):
            generator.encode(np.zeros((8, 8, 3)))

    def test_decode_wrong_latent_shape_should_raise(self, generator):
        with pytest.raises(ShapeMismatch):
            generator.decode(LatentGrid(values=torch.zeros(9, 4)))

    def test_grayscale_images_should_be_replicated(self, generator):
        gray = toy_images(1)[0].mean(axis=2, keepdims=True)

        batch = generator.to_batch([gray])

        assert batch.shape == (1, 3, 16, 16)

    def test_statistics_of_one_view_should_have_zero_variance(self, generator):
        mean, variance = generator.statistics(toy_images(1))

        assert mean.positions == 16
        assert float(variance.values.abs().sum()) == 0.0

    def test_pre_quantization_statistics_should_use_encoder_output(self):
        generator = under_test.GeneratorService(
            small_config(), VarianceConfig(source="pre_quantization")
        )
        image = toy_images(1)[0]

        mean, _ = generator.statistics([image])

        assert torch.equal(mean.values, generator.encode(image).values)

    def test_generated_images_should_be_in_unit_range(self, generator):
        mean, variance = generator.statistics(toy_images(3))

        images = generator.generate_set(mean, variance, 4, torch.Generator().manual_seed(0))

        assert len(images) == 4
        for image in images:
            assert image.shape == (16, 16, 3)
            assert image.min() >= 0.0 and image.max() <= 1.0

    def test_training_should_reduce_loss(self):
        generator = under_test.GeneratorService(small_config(K=16, hidden_channels=16, lr=0.01))
        originals = toy_images(4)
        rng = torch.Generator().manual_seed(0)

        losses = [generator.train_step(originals, originals, 4, rng).total for _ in range(50)]

        assert losses[-1] <= 0.8 * losses[0]
        assert generator.steps == 50

    def test_train_step_should_not_warn(self, generator, recwarn):
        originals = toy_images(2)

        result = generator.train_step(originals, originals, 2, torch.Generator().manual_seed(0))

        assert isinstance(result.total, float)
        assert not [w for w in recwarn if "requires_grad" in str(w.message)]

    def test_non_finite_loss_should_raise(self, generator):
        originals = toy_images(2)
        broken = [np.full_like(originals[0], np.nan)]

        with pytest.raises(NonFiniteLoss):
            generator.train_step(broken, originals, 2, torch.Generator().manual_seed(0))

    def test_checkpoint_should_restore_generator(self, generator, tmp_path):
        originals = toy_images(2)
        generator.train_step(originals, originals, 2, torch.Generator().manual_seed(0))
        path = tmp_path / "generator.pt"

        generator.save_checkpoint(path, seed=3)
        restored = under_test.GeneratorService.load_checkpoint(path)

        assert restored.steps == 1
        assert restored.config == generator.config
        assert torch.equal(restored.codebook.vectors, generator.codebook.vectors)
        np.testing.assert_array_equal(
            restored.reconstruct(originals[0]), generator.reconstruct(originals[0])
        )

    def test_same_seed_should_build_identical_models(self):
        first = under_test.GeneratorService(small_config(seed=4))
        second = under_test.GeneratorService(small_config(seed=4))

        assert torch.equal(first.codebook.vectors, second.codebook.vectors)

    def test_unset_seed_should_build_same_model_as_seed_zero(self):
        unset = under_test.GeneratorService(small_config())
        zero = under_test.GeneratorService(small_config(seed=0))
        other = under_test.GeneratorService(small_config(seed=1))

        assert torch.equal(unset.codebook.vectors, zero.codebook.vectors)
        assert not torch.equal(unset.codebook.vectors, other.codebook.vectors)
