"""Unit tests for integrator_service.py."""
from unittest.mock import MagicMock

import numpy as np
import pytest
import torch

import varigen.services.integrator_service as under_test
from varigen.errors import EmptyImageSet, NonFiniteLoss
from varigen.models.latent import LatentGrid, VarianceGrid
from varigen.models.prompt import PromptCandidate, PromptSelection
from varigen.services.config_service import PipelineConfig, PromptMode
from varigen.services.embedding_backends import ToyEmbeddingBackend
from varigen.services.embedding_service import EmbeddingService, cosine_similarity
from varigen.services.file_service import FileService
from varigen.services.generator_service import GeneratorService, TrainStepResult


def build_config(**integrator):
    settings = dict(rounds=5, copies=2, augment=2, strategy="identity", steps_per_round=1)
    settings.update(integrator)
    return PipelineConfig.parse_obj(
        {
            "integrator": settings,
            "generator": {"K": 8, "latent_dim": 4, "grid": 4, "resolution": 16},
            "seed": 11,
        }
    )


def build_prompt():
    candidate = PromptCandidate.render("hazelnut", "cobnut", 0)
    return PromptSelection(
        candidates=[candidate],
        positive_set=[0],
        best=candidate,
        best_score=0.3,
        worst=candidate,
        worst_score=0.3,
    )


def originals(count=1):
    rng = np.random.default_rng(0)
    return [rng.uniform(size=(16, 16, 3)) for _ in range(count)]


@pytest.fixture()
def embedding_service():
    return EmbeddingService(ToyEmbeddingBackend(embed_dim=64))


@pytest.fixture()
def file_service():
    file_service = MagicMock(spec_set=FileService)
    return file_service


@pytest.fixture()
def integrator_service(embedding_service, file_service):
    return under_test.IntegratorService(embedding_service, file_service)


@pytest.fixture()
def generator():
    generator = MagicMock(spec_set=GeneratorService)
    generator.train_step.return_value = TrainStepResult(total=0.5, mse=0.2, vq=0.3)
    generator.statistics.return_value = (
        LatentGrid(values=torch.zeros(16, 4)),
        VarianceGrid(values=torch.zeros(16, 4)),
    )
    rng = np.random.default_rng(1)
    generator.generate_set.side_effect = lambda mean, variance, copies, generator: [
        rng.uniform(size=(16, 16, 3)) for _ in range(copies)
    ]
    return generator


def stub_scorer(scores):
    remaining = iter(scores)
    return lambda text_embedding, visual_feature: next(remaining)


class TestRoundSeeds:
    def test_seeds_should_be_deterministic_and_distinct(self):
        assert under_test.round_seeds(11, 1) == under_test.round_seeds(11, 1)
        assert under_test.round_seeds(11, 1) != under_test.round_seeds(11, 2)
        assert under_test.round_seeds(11, 1) != under_test.round_seeds(12, 1)
        assert len(set(under_test.round_seeds(11, 1))) == 2


class TestVisualFeature:
    def test_empty_image_set_should_raise(self, embedding_service):
        with pytest.raises(EmptyImageSet):
            under_test.visual_feature([], embedding_service)

    def test_feature_should_be_normalized_mean_embedding(self, embedding_service):
        images = originals(3)

        feature = under_test.visual_feature(images, embedding_service)

        expected = np.mean([embedding_service.embed_image(i).values for i in images], axis=0)
        np.testing.assert_allclose(feature.values, expected / np.linalg.norm(expected), atol=1e-9)


class TestRun:
    def test_alpha_should_be_earliest_best_round(self, integrator_service, generator):
        result = integrator_service.run(
            originals(),
            build_prompt(),
            build_config(),
            generator,
            stub_scorer([0.2, 0.9, 0.9, 0.1, 0.5]),
        )

        assert result.alpha == 2
        assert [r.score for r in result.rounds] == [0.2, 0.9, 0.9, 0.1, 0.5]
        assert result.best_images == result.rounds[1].images
        assert generator.train_step.call_count == 5

    def test_increasing_score_transform_should_keep_alpha(self, integrator_service, generator):
        scores = [0.2, 0.9, 0.9, 0.1, 0.5]

        result = integrator_service.run(
            originals(),
            build_prompt(),
            build_config(),
            generator,
            stub_scorer([2 * s + 1 for s in scores]),
        )

        assert result.alpha == 2

    def test_scores_should_be_cosine_of_prompt_and_visual_feature(
        self, integrator_service, embedding_service, generator
    ):
        result = integrator_service.run(
            originals(), build_prompt(), build_config(rounds=2), generator
        )

        text = embedding_service.embed_text("a hazelnut with cobnut")
        for r in result.rounds:
            assert r.score == pytest.approx(cosine_similarity(text, r.visual_feature), abs=1e-9)
            assert r.generator_loss == 0.5

    def test_manifest_should_be_written_after_every_round(
        self, integrator_service, file_service, generator, tmp_path
    ):
        integrator_service.run(
            originals(), build_prompt(), build_config(rounds=3), generator, out_dir=tmp_path
        )

        calls = file_service.write_yaml_file.call_args_list
        assert len(calls) == 3
        path, manifest = calls[-1][0]
        assert path == tmp_path / "manifest.yaml"
        assert manifest["status"] == "running"
        assert len(manifest["rounds"]) == 3

    def test_diverged_generator_should_leave_failed_manifest(
        self, integrator_service, file_service, generator, tmp_path
    ):
        generator.train_step.side_effect = [
            TrainStepResult(total=0.5, mse=0.2, vq=0.3),
            NonFiniteLoss("nan"),
        ]

        with pytest.raises(NonFiniteLoss):
            integrator_service.run(
                originals(), build_prompt(), build_config(), generator, out_dir=tmp_path
            )

        _, manifest = file_service.write_yaml_file.call_args[0]
        assert manifest["status"] == "failed"
        assert len(manifest["rounds"]) == 1

    def test_memory_lean_should_keep_only_best_images(self, integrator_service, generator):
        result = integrator_service.run(
            originals(),
            build_prompt(),
            build_config(memory_lean=True),
            generator,
            stub_scorer([0.2, 0.9, 0.9, 0.1, 0.5]),
        )

        assert [len(r.images) for r in result.rounds] == [0, 2, 0, 0, 0]
        assert len(result.best_images) == 2

    def test_round_seeds_should_be_recorded(self, integrator_service, generator):
        result = integrator_service.run(originals(), build_prompt(), build_config(), generator)

        assert [r.seed_used for r in result.rounds] == [
            under_test.round_seeds(11, i)[0] for i in range(1, 6)
        ]

    def test_frozen_generator_with_zero_variance_should_pick_first_round(
        self, integrator_service
    ):
        config = build_config(steps_per_round=0, rounds=4)
        generator = GeneratorService(config.generator, config.variance)

        result = integrator_service.run(originals(1), build_prompt(), config, generator)

        assert result.alpha == 1
        assert len({r.score for r in result.rounds}) == 1
        for r in result.rounds[1:]:
            np.testing.assert_array_equal(r.images[0], result.rounds[0].images[0])

    def test_naive_mode_should_score_against_naive_prompt(self, integrator_service):
        assert (
            integrator_service.prompt_text(build_prompt(), PromptMode.NAIVE)
            == "a photo of a hazelnut"
        )
        assert (
            integrator_service.prompt_text(build_prompt(), PromptMode.GENERATED)
            == "a hazelnut with cobnut"
        )


class TestExportBestSet:
    def test_export_should_write_images_originals_and_manifest(
        self, embedding_service, generator, tmp_path
    ):
        integrator_service = under_test.IntegratorService(embedding_service, FileService())
        images = originals(2)
        result = integrator_service.run(images, build_prompt(), build_config(rounds=2), generator)

        manifest_path = integrator_service.export_best_set(result, tmp_path, images)

        manifest = FileService.read_yaml_file(manifest_path)
        assert manifest["status"] == "complete"
        assert manifest["images"] == ["images/best_000.png", "images/best_001.png"]
        assert (tmp_path / "images" / "best_001.png").exists()
        assert (tmp_path / "originals" / "original_001.png").exists()

    def test_export_twice_should_write_identical_files(
        self, embedding_service, generator, tmp_path
    ):
        integrator_service = under_test.IntegratorService(embedding_service, FileService())
        images = originals(2)
        result = integrator_service.run(images, build_prompt(), build_config(rounds=2), generator)

        integrator_service.export_best_set(result, tmp_path / "first", images)
        integrator_service.export_best_set(result, tmp_path / "second", images)

        first = sorted(p.relative_to(tmp_path / "first") for p in (tmp_path / "first").rglob("*"))
        second = sorted(
            p.relative_to(tmp_path / "second") for p in (tmp_path / "second").rglob("*")
        )
        assert first == second
        for path in first:
            if (tmp_path / "first" / path).is_file():
                assert (tmp_path / "first" / path).read_bytes() == (
                    tmp_path / "second" / path
                ).read_bytes(), path
