"""Unit tests for varigen_cli.py."""
from pathlib import Path
from unittest.mock import MagicMock

import numpy as np
import pytest
import yaml
from click.testing import CliRunner
from rich.console import Console

import varigen.varigen_cli as under_test
from varigen.errors import (
    EmptyImageSet,
    InvalidConfiguration,
    LayoutViolation,
    NonFiniteLoss,
    ShapeMismatch,
)
from varigen.models.dataset import Scenario, ScenarioKind, SyntheticCategorySpec
from varigen.models.evaluation import EvalSample
from varigen.models.generation import run_identifier
from varigen.services.config_service import (
    Comparator,
    ConfigurationService,
    DataConfig,
    IntegratorConfig,
    PipelineConfig,
)
from varigen.services.dataset_service import DatasetService
from varigen.services.file_service import FileService
from varigen.services.integrator_service import IntegratorService
from varigen.services.prompt_service import PromptService
from varigen.services.report_service import CompletedRun, ReportService

SMALL_RUN = [
    "integrator.rounds=2",
    "integrator.copies=2",
    "integrator.augment=2",
    "generator.K=8",
    "generator.latent_dim=4",
    "generator.hidden_channels=8",
    "prompt.t_max=50",
]


def textured(seed, size=64):
    rng = np.random.default_rng(seed)
    return np.clip(0.4 + 0.05 * rng.normal(size=(size, size, 3)), 0.0, 1.0)


@pytest.fixture(autouse=True)
def cache_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("VARIGEN_CACHE_DIR", str(tmp_path / "cache"))


@pytest.fixture()
def config(tmp_path):
    return PipelineConfig(
        output_root=str(tmp_path / "runs"),
        seed=3,
        data=DataConfig(root=str(tmp_path / "data"), category="bottle"),
        integrator=IntegratorConfig(copies=2),
    )


@pytest.fixture()
def orchestrator(config):
    return under_test.VarigenOrchestrator(
        config=config,
        config_service=MagicMock(spec_set=ConfigurationService),
        dataset_service=MagicMock(spec_set=DatasetService),
        prompt_service=MagicMock(spec_set=PromptService),
        integrator_service=MagicMock(spec_set=IntegratorService),
        report_service=MagicMock(spec_set=ReportService),
        file_service=MagicMock(spec_set=FileService),
        console=MagicMock(spec_set=Console),
    )


class TestBuildConfig:
    def test_no_input_should_give_defaults(self):
        assert under_test.build_config(None, [], None) == PipelineConfig()

    def test_flags_should_win_over_overrides(self):
        config = under_test.build_config(
            None,
            ["data.category=bottle", "generator.K=8"],
            5,
            {"data.category": "hazelnut", "data.root": None},
        )

        assert config.data.category == "hazelnut"
        assert config.data.root is None
        assert config.generator.codebook_size == 8
        assert config.seed == 5

    def test_config_file_should_be_read(self, tmp_path):
        config_file = tmp_path / "config.yaml"
        config_file.write_text(yaml.safe_dump({"integrator": {"rounds": 4}, "seed": 2}))

        config = under_test.build_config(str(config_file), ["seed=9"], None)

        assert config.integrator.rounds == 4
        assert config.seed == 9

    @pytest.mark.parametrize(
        "override", ["generator.K=1", "generator.bogus=3", "seed", "=4", "prompt.threshold=3"]
    )
    def test_invalid_overrides_should_raise(self, override):
        with pytest.raises(InvalidConfiguration):
            under_test.build_config(None, [override], None)


class TestReportedErrors:
    @pytest.mark.parametrize(
        "error,exit_code",
        [(NonFiniteLoss("nan"), 1), (ShapeMismatch("bad"), 2), (InvalidConfiguration("x"), 2)],
    )
    def test_varigen_errors_should_exit_with_their_code(self, error, exit_code):
        with pytest.raises(SystemExit) as exc_info:
            with under_test.reported_errors():
                raise error

        assert exc_info.value.code == exit_code

    def test_other_errors_should_propagate(self):
        with pytest.raises(KeyError):
            with under_test.reported_errors():
                raise KeyError("x")


class TestDatasetFlags:
    def test_flags_should_map_to_dotted_keys(self):
        flags = under_test.dataset_flags("/data", "bottle", None, "few_shot")

        assert flags == {
            "data.root": "/data",
            "data.category": "bottle",
            "data.object_word": None,
            "data.scenario": "few_shot",
        }


class TestVarigenOrchestrator:
    def test_run_dir_should_combine_digest_and_seed(self, orchestrator, config):
        expected = Path(config.output_root) / run_identifier(config.digest(), 3)

        assert orchestrator.run_dir == expected

    def test_dataset_index_without_root_should_raise(self, orchestrator):
        orchestrator.config = PipelineConfig()

        with pytest.raises(LayoutViolation):
            orchestrator.dataset_index()

    def test_dataset_index_should_load_configured_category(self, orchestrator, tmp_path):
        orchestrator.dataset_index()

        orchestrator.dataset_service.load_dataset.assert_called_once_with(
            tmp_path / "data", "bottle"
        )

    def test_select_originals_from_empty_directory_should_raise(self, orchestrator, tmp_path):
        orchestrator.file_service.list_images.return_value = []

        with pytest.raises(EmptyImageSet):
            orchestrator.select_originals(tmp_path)

    def test_select_originals_should_use_configured_scenario(self, orchestrator):
        index = MagicMock()
        orchestrator.dataset_service.select_scenario.return_value = [Path("a.png")]

        paths = orchestrator.select_originals(index=index)

        assert paths == [Path("a.png")]
        orchestrator.dataset_service.select_scenario.assert_called_once_with(
            index, Scenario(kind=ScenarioKind.ONE_SHOT, seed=3)
        )

    def test_synthesize_without_spec_should_use_configured_category(self, orchestrator, tmp_path):
        orchestrator.synthesize(tmp_path, None)

        orchestrator.dataset_service.make_synthetic_category.assert_called_once_with(
            SyntheticCategorySpec(category="bottle", seed=3), tmp_path
        )

    def test_report_should_default_to_first_run_directory(self, orchestrator, tmp_path):
        run = CompletedRun(directory=tmp_path / "r1", manifest={"run_id": "r1"}, reports={})
        orchestrator.report_service.resolve_run.return_value = run.directory
        orchestrator.report_service.load_run.return_value = run

        orchestrator.report(["r1"], None, plots=False)

        orchestrator.report_service.write_report.assert_called_once_with(
            [run], tmp_path / "r1" / "report", plots=False
        )

    @pytest.mark.parametrize(
        "generated,augment_arm,arms",
        [
            (None, False, ["baseline"]),
            ([textured(5, size=32)], False, ["baseline", "generated"]),
            (None, True, ["baseline", "augment"]),
        ],
    )
    def test_evaluate_should_report_every_enabled_arm(
        self, orchestrator, generated, augment_arm, arms
    ):
        samples = [
            EvalSample(name="good/000.png", image=textured(0), label=0),
            EvalSample(name="blob/000.png", image=textured(1), label=1, mask=np.ones((64, 64))),
        ]
        orchestrator.dataset_service.load_test_samples.return_value = samples
        orchestrator.dataset_service.load_images.return_value = [textured(0)]

        reports = orchestrator.evaluate(MagicMock(), [Path("a.png")], generated, augment_arm)

        assert [report.arm for report in reports] == arms
        assert reports[-1].counts["originals"] == 1

    def test_save_evaluation_should_write_flat_scores(self, orchestrator, tmp_path):
        report = MagicMock()
        report.score_rows.return_value = [["baseline", "good/000.png", 0, 0.1]]

        orchestrator.save_evaluation(tmp_path, [report])

        orchestrator.report_service.write_evaluation.assert_called_once_with(tmp_path, [report])
        orchestrator.file_service.write_csv_file.assert_called_once_with(
            tmp_path / "scores.csv",
            ["arm", "name", "label", "score"],
            [["baseline", "good/000.png", 0, 0.1]],
        )


class TestCli:
    def test_dry_run_should_validate_configuration(self, tmp_path):
        result = CliRunner().invoke(
            under_test.cli,
            ["pipeline", "--dry-run", "--set", f"output_root={tmp_path / 'runs'}"],
        )

        assert result.exit_code == 0
        assert "Configuration is valid" in result.output

    def test_invalid_override_should_exit_with_precondition_code(self):
        result = CliRunner().invoke(under_test.cli, ["pipeline", "--dry-run", "--set", "seed"])

        assert result.exit_code == 2

    def test_missing_images_directory_should_fail(self, tmp_path):
        result = CliRunner().invoke(under_test.cli, ["train", "--images", str(tmp_path / "no")])

        assert result.exit_code != 0

    def test_pipeline_without_dataset_root_should_fail(self, tmp_path):
        result = CliRunner().invoke(
            under_test.cli, ["pipeline", "--set", f"output_root={tmp_path}"]
        )

        assert result.exit_code == 2
        assert "LayoutViolation" in result.output

    def test_synth_should_write_category(self, tmp_path):
        spec_file = tmp_path / "spec.yaml"
        spec_file.write_text(
            yaml.safe_dump({"category": "toy", "counts": {"good": 2, "defect": 1, "test_good": 1}})
        )

        result = CliRunner().invoke(
            under_test.cli, ["synth", "--out", str(tmp_path / "data"), "--spec", str(spec_file)]
        )

        assert result.exit_code == 0
        assert len(list((tmp_path / "data" / "toy" / "train" / "good").iterdir())) == 2
        assert (tmp_path / "data" / "toy" / "ground_truth").is_dir()


class TestCommandFlags:
    @pytest.fixture()
    def setup(self, monkeypatch):
        setup = MagicMock(return_value=MagicMock(spec=under_test.VarigenOrchestrator))
        monkeypatch.setattr(under_test, "setup", setup)
        return setup

    def flags(self, setup):
        return setup.call_args[0][4]

    def test_prompt_flags_should_map_to_prompt_keys(self, setup, tmp_path):
        result = CliRunner().invoke(
            under_test.cli,
            ["prompt", "--object", "hazelnut", "--images", str(tmp_path), "--t-max", "1000"]
            + ["--threshold", "0.5", "--comparator", "less"],
        )

        assert result.exit_code == 0, result.output
        flags = self.flags(setup)
        assert flags["data.object_word"] == "hazelnut"
        assert flags["prompt.t_max"] == 1000
        assert flags["prompt.threshold"] == 0.5
        assert flags["prompt.comparator"] == "less"

    def test_prompt_flags_should_build_prompt_config(self):
        flags = {"prompt.t_max": 10, "prompt.threshold": 0.3, "prompt.comparator": "less"}

        config = under_test.build_config(None, [], None, flags)

        assert config.prompt.t_max == 10
        assert config.prompt.threshold == 0.3
        assert config.prompt.comparator == Comparator.LESS

    def test_generate_should_run_rounds_into_out(self, setup, tmp_path):
        orchestrator = setup.return_value
        orchestrator.select_originals.return_value = [tmp_path / "a.png"]
        out = tmp_path / "run"

        result = CliRunner().invoke(
            under_test.cli,
            ["generate", "--object", "hazelnut", "--images", str(tmp_path), "--rounds", "20"]
            + ["--copies", "30", "--out", str(out)],
        )

        assert result.exit_code == 0, result.output
        flags = self.flags(setup)
        assert flags["integrator.rounds"] == 20
        assert flags["integrator.copies"] == 30
        assert flags["data.object_word"] == "hazelnut"
        orchestrator.train.assert_called_once_with(
            [tmp_path / "a.png"], orchestrator.select_prompt.return_value, out
        )
        orchestrator.generate_from_checkpoint.assert_not_called()

    def test_generate_with_checkpoint_should_sample_saved_generator(self, setup, tmp_path):
        orchestrator = setup.return_value
        orchestrator.select_originals.return_value = [tmp_path / "a.png"]
        orchestrator.generate_from_checkpoint.return_value = []
        checkpoint = tmp_path / "generator.pt"
        checkpoint.touch()

        result = CliRunner().invoke(
            under_test.cli,
            ["generate", "--checkpoint", str(checkpoint), "--images", str(tmp_path)]
            + ["--out", str(tmp_path / "out"), "--copies", "4"],
        )

        assert result.exit_code == 0, result.output
        orchestrator.generate_from_checkpoint.assert_called_once_with(
            checkpoint, [tmp_path / "a.png"], tmp_path / "out", 4
        )
        orchestrator.train.assert_not_called()

    def test_checkpoint_without_out_should_be_usage_error(self, setup, tmp_path):
        checkpoint = tmp_path / "generator.pt"
        checkpoint.touch()

        result = CliRunner().invoke(
            under_test.cli, ["generate", "--checkpoint", str(checkpoint)]
        )

        assert result.exit_code == 2
        setup.assert_not_called()


def invoke(*args):
    result = CliRunner().invoke(under_test.cli, [str(arg) for arg in args])
    assert result.exit_code == 0, result.output
    return result


def run_pipeline(data_root, runs, scenario):
    overrides = [arg for item in SMALL_RUN for arg in ("--set", item)]
    invoke(
        "pipeline",
        "--data-root",
        data_root,
        "--category",
        "hazelnut",
        "--scenario",
        scenario,
        "--with-augment-arm",
        "--seed",
        0,
        "--set",
        f"output_root={runs}",
        "--set",
        "embedding.use_cache=false",
        *overrides,
    )
    (run_dir,) = list(runs.iterdir())
    return run_dir


def detection_by_arm(run_dir):
    evaluation = yaml.safe_load((run_dir / "evaluation.yaml").read_text())
    return {report["arm"]: report["detection_auroc"] for report in evaluation["reports"]}


@pytest.mark.slow
class TestPipelineEndToEnd:
    @pytest.fixture(scope="class")
    def data_root(self, tmp_path_factory):
        data_root = tmp_path_factory.mktemp("data")
        invoke("synth", "--out", data_root, "--category", "hazelnut")
        return data_root

    @pytest.fixture(scope="class")
    def one_shot(self, data_root, tmp_path_factory):
        return run_pipeline(data_root, tmp_path_factory.mktemp("runs"), "one_shot")

    def test_pipeline_should_write_complete_run(self, one_shot):
        for name in ("manifest.yaml", "evaluation.yaml", "scores.csv", "generator.pt"):
            assert (one_shot / name).exists()
        manifest = yaml.safe_load((one_shot / "manifest.yaml").read_text())
        assert manifest["status"] == "complete"
        assert len(manifest["rounds"]) == 2
        assert set(detection_by_arm(one_shot)) == {"baseline", "augment", "generated"}

    def test_seeded_rerun_should_be_byte_identical(self, data_root, one_shot, tmp_path):
        rerun = run_pipeline(data_root, tmp_path / "runs", "one_shot")

        assert rerun.name == one_shot.name
        for name in ("manifest.yaml", "prompt.yaml", "evaluation.yaml", "scores.csv"):
            assert (rerun / name).read_bytes() == (one_shot / name).read_bytes(), name
        images = sorted(p.name for p in (one_shot / "images").iterdir())
        assert images == sorted(p.name for p in (rerun / "images").iterdir())
        for name in images:
            assert (rerun / "images" / name).read_bytes() == (
                one_shot / "images" / name
            ).read_bytes()

    def test_generated_images_should_not_lower_detection(self, one_shot):
        auroc = detection_by_arm(one_shot)

        assert auroc["generated"] >= auroc["baseline"]

    def test_few_shot_should_not_lower_augmented_detection(self, data_root, one_shot, tmp_path):
        few_shot = run_pipeline(data_root, tmp_path / "runs", "few_shot")

        assert detection_by_arm(few_shot)["augment"] >= detection_by_arm(one_shot)["augment"]

    def test_report_should_write_quality_table(self, one_shot):
        overrides = [arg for item in SMALL_RUN for arg in ("--set", item)]

        invoke("report", one_shot, *overrides)

        assert (one_shot / "report" / "quality.csv").exists()
