"""Command line entry point to application."""
import logging
import sys
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence

import click
import inject
import numpy as np
import structlog
import torch
from pydantic import ValidationError
from rich.console import Console
from rich.table import Table
from structlog.stdlib import LoggerFactory

from varigen.errors import EmptyImageSet, InvalidConfiguration, LayoutViolation, VarigenError
from varigen.models.dataset import DatasetIndex, Scenario, ScenarioKind, SyntheticCategorySpec
from varigen.models.evaluation import EvalReport
from varigen.models.generation import (
    CONFIG_FILE_NAME,
    SCORES_FILE_NAME,
    RunResult,
    run_identifier,
)
from varigen.models.prompt import PromptSelection
from varigen.services.augmentation_service import augment
from varigen.services.config_service import (
    Comparator,
    ConfigurationService,
    FallbackMode,
    PipelineConfig,
    merge_overrides,
    parse_override,
)
from varigen.services.dataset_service import DatasetService
from varigen.services.detector_service import DetectorService
from varigen.services.embedding_service import EmbeddingService, create_embedding_service
from varigen.services.file_service import FileService, resize_image
from varigen.services.generator_service import GeneratorService
from varigen.services.integrator_service import IntegratorService
from varigen.services.lexicon_service import (
    Lexicon,
    NltkLexicon,
    SnapshotLexicon,
    format_snapshot,
    snapshot_rows,
)
from varigen.services.prompt_service import PromptService
from varigen.services.report_service import REPORT_DIR, Report, ReportService, arm_delta

LOGGER = structlog.get_logger(__name__)

EXTERNAL_LOGGERS = [
    "PIL",
    "matplotlib",
    "inject",
    "urllib3",
]
CHECKPOINT_FILE_NAME = "generator.pt"
PROMPT_FILE_NAME = "prompt.yaml"
SCORES_HEADER = ["arm", "name", "label", "score"]
BASELINE_ARM = "baseline"
AUGMENT_ARM = "augment"
GENERATED_ARM = "generated"


class VarigenOrchestrator:
    """Orchestrator for the prompt, generation, detection and report stages."""

    @inject.autoparams()
    def __init__(
        self,
        config: PipelineConfig,
        config_service: ConfigurationService,
        dataset_service: DatasetService,
        prompt_service: PromptService,
        integrator_service: IntegratorService,
        report_service: ReportService,
        file_service: FileService,
        console: Console,
    ) -> None:
        """
        Initialize the orchestrator.

        :param config: Configuration of the run.
        :param config_service: Configuration service.
        :param dataset_service: Dataset service.
        :param prompt_service: Prompt service.
        :param integrator_service: Integrator service.
        :param report_service: Report service.
        :param file_service: File service.
        :param console: Rich console to print to.
        """
        self.config = config
        self.config_service = config_service
        self.dataset_service = dataset_service
        self.prompt_service = prompt_service
        self.integrator_service = integrator_service
        self.report_service = report_service
        self.file_service = file_service
        self.console = console

    @property
    def run_dir(self) -> Path:
        """Directory the artifacts of this configuration are written to."""
        run_id = run_identifier(self.config.digest(), self.config.seed)
        return Path(self.config.output_root) / run_id

    def dataset_index(self) -> DatasetIndex:
        """Index the configured dataset category."""
        if self.config.data.root is None:
            raise LayoutViolation("No dataset root configured, set data.root or --data-root")
        data = self.config.data
        return self.dataset_service.load_dataset(Path(data.root), data.category)

    def select_originals(
        self, images: Optional[Path] = None, index: Optional[DatasetIndex] = None
    ) -> List[Path]:
        """
        Choose the original good images.

        :param images: Directory whose images are all used, if given.
        :param index: Dataset to select the configured scenario from otherwise.
        :return: Paths of the originals.
        """
        if images is not None:
            paths = self.file_service.list_images(images)
            if not paths:
                raise EmptyImageSet(f"No images found in '{images}'")
            return paths
        index = index or self.dataset_index()
        scenario = Scenario(kind=self.config.data.scenario, seed=self.config.seed)
        paths = self.dataset_service.select_scenario(index, scenario)
        LOGGER.info("Selected originals", scenario=scenario.kind.value, originals=len(paths))
        return paths

    def select_prompt(self, paths: Sequence[Path]) -> PromptSelection:
        """
        Select the best prompt for the originals.

        :param paths: Paths of the originals.
        :return: Prompt selection.
        """
        originals = self.dataset_service.load_images(paths, self.config.data.resolution)
        return self.prompt_service.generate(
            self.config.data.object_name, originals, self.config.prompt
        )

    def save_prompt(self, selection: PromptSelection, destination: Path) -> None:
        """
        Save a prompt selection with the score of every surviving candidate.

        :param selection: Selection to save.
        :param destination: File to write.
        """
        contents = selection.summary()
        contents["scores"] = {
            selection.candidates[i].text: float(s) for i, s in sorted(selection.scores.items())
        }
        contents["config_digest"] = self.config.digest()
        self.file_service.write_yaml_file(destination, contents)

    def train(
        self, paths: Sequence[Path], selection: PromptSelection, run_dir: Optional[Path] = None
    ) -> RunResult:
        """
        Run the generation rounds, then keep the checkpoint and the best image set.

        :param paths: Paths of the originals.
        :param selection: Prompt to guide generation with.
        :param run_dir: Directory to write the run to, the configured run directory if not given.
        :return: Run result.
        """
        run_dir = run_dir or self.run_dir
        originals = self.dataset_service.load_images(paths, self.config.generator.resolution)
        self.config_service.save_config(self.config, run_dir / CONFIG_FILE_NAME)
        self.save_prompt(selection, run_dir / PROMPT_FILE_NAME)

        generator = GeneratorService(self.config.generator, self.config.variance)
        result = self.integrator_service.run(
            originals,
            selection,
            self.config,
            generator,
            out_dir=run_dir,
            original_paths=[str(p) for p in paths],
        )
        generator.save_checkpoint(run_dir / CHECKPOINT_FILE_NAME, seed=self.config.seed)
        self.integrator_service.export_best_set(result, run_dir, originals)
        return result

    def generate_from_checkpoint(
        self, checkpoint: Path, paths: Sequence[Path], out_dir: Path, copies: Optional[int]
    ) -> List[Path]:
        """
        Draw an image set from a saved generator around augmented views of the originals.

        :param checkpoint: Generator checkpoint.
        :param paths: Paths of the originals.
        :param out_dir: Directory to write the images to.
        :param copies: Number of images, the configured M if not given.
        :return: Written image files.
        """
        generator = GeneratorService.load_checkpoint(checkpoint)
        originals = self.dataset_service.load_images(paths, generator.config.resolution)
        settings = self.config.integrator
        views = augment(
            originals, settings.strategy, settings.augment, np.random.default_rng(self.config.seed)
        )
        mean, variance = generator.statistics(views.images)
        rng = torch.Generator().manual_seed(self.config.seed)
        images = generator.generate_set(mean, variance, copies or settings.copies, rng)
        written = []
        for i, image in enumerate(images):
            path = out_dir / f"generated_{i:03d}.png"
            self.file_service.write_image(path, image)
            written.append(path)
        return written

    def load_run_images(self, run_dir: Path) -> List[np.ndarray]:
        """Read the exported best image set of a run."""
        manifest = self.report_service.load_run(run_dir).manifest
        return [self.file_service.read_image(run_dir / name) for name in manifest["images"]]

    def evaluate(
        self,
        index: DatasetIndex,
        paths: Sequence[Path],
        generated: Optional[Sequence[np.ndarray]] = None,
        augment_arm: bool = False,
    ) -> List[EvalReport]:
        """
        Evaluate a memory bank of the originals and of each enabled extension of it.

        :param index: Dataset holding the test set.
        :param paths: Paths of the originals.
        :param generated: Generated images to add to the bank of the "generated" arm.
        :param augment_arm: Also evaluate a bank extended with plain augmented copies.
        :return: Reports of the baseline and every extended arm.
        """
        size = self.config.detector.resolution
        detector = DetectorService(self.config.detector)
        samples = self.dataset_service.load_test_samples(index, size)
        originals = self.dataset_service.load_images(paths, size)
        scenario = self.config.data.scenario

        def bank_rng() -> np.random.Generator:
            return np.random.default_rng(self.config.seed)

        bank = detector.build_bank(originals, bank_rng())
        reports = [detector.evaluate(bank, samples, scenario, BASELINE_ARM)]
        if augment_arm:
            views = augment(
                originals,
                self.config.integrator.strategy,
                self.config.integrator.copies,
                np.random.default_rng(self.config.seed),
            )
            bank = detector.build_bank(originals, bank_rng(), generated=views.images)
            reports.append(detector.evaluate(bank, samples, scenario, AUGMENT_ARM))
        if generated:
            resized = [resize_image(image, size) for image in generated]
            bank = detector.build_bank(originals, bank_rng(), generated=resized)
            reports.append(detector.evaluate(bank, samples, scenario, GENERATED_ARM))
        return reports

    def save_evaluation(self, run_dir: Path, reports: Sequence[EvalReport]) -> None:
        """
        Write evaluation reports and the flat per-image score table.

        :param run_dir: Directory to write to.
        :param reports: Reports to write.
        """
        self.report_service.write_evaluation(run_dir, reports)
        rows = [row for report in reports for row in report.score_rows()]
        self.file_service.write_csv_file(run_dir / SCORES_FILE_NAME, SCORES_HEADER, rows)

    def pipeline(self, augment_arm: bool = False) -> List[EvalReport]:
        """
        Run prompt selection, generation and both detector evaluations on a dataset.

        :param augment_arm: Also evaluate a bank extended with plain augmented copies.
        :return: Evaluation reports.
        """
        index = self.dataset_index()
        paths = self.select_originals(index=index)
        selection = self.select_prompt(paths)
        self.train(paths, selection)
        generated = self.load_run_images(self.run_dir)
        reports = self.evaluate(index, paths, generated, augment_arm)
        self.save_evaluation(self.run_dir, reports)
        return reports

    def report(self, runs: Sequence[str], out_dir: Optional[Path], plots: bool) -> Report:
        """
        Write the report files of completed runs.

        :param runs: Run ids or run directories.
        :param out_dir: Directory to write to, the first run's report directory if not given.
        :param plots: Also draw plots.
        :return: Report.
        """
        output_root = Path(self.config.output_root)
        completed = [
            self.report_service.load_run(self.report_service.resolve_run(run, output_root))
            for run in runs
        ]
        return self.report_service.write_report(
            completed, out_dir or completed[0].directory / REPORT_DIR, plots=plots
        )

    def synthesize(self, out_dir: Path, spec_file: Optional[Path]) -> Path:
        """
        Render a synthetic dataset category.

        :param out_dir: Dataset root to write under.
        :param spec_file: Category specification, defaults plus the configured category if not
            given.
        :return: Category directory.
        """
        if spec_file is not None:
            spec = SyntheticCategorySpec.parse_obj(self.file_service.read_yaml_file(spec_file))
        else:
            spec = SyntheticCategorySpec(category=self.config.data.category, seed=self.config.seed)
        return self.dataset_service.make_synthetic_category(spec, out_dir)

    def display_prompt(self, selection: PromptSelection) -> None:
        """Display the best and worst prompts."""
        table = Table(title=f"Prompts for '{selection.object_word}'", show_lines=True)
        table.add_column("")
        table.add_column("Prompt")
        table.add_column("Similarity")
        table.add_row("Best", selection.best.text, f"{selection.best_score:.4f}")
        table.add_row("Worst", selection.worst.text, f"{selection.worst_score:.4f}")
        self.console.print(table)
        if selection.fallback:
            self.console.print("[yellow]No candidate survived filtering, using the naive prompt")
        self.console.print(
            f"{len(selection.positive_set)} of {len(selection.candidates)} candidates kept"
        )

    def display_run(self, result: RunResult) -> None:
        """Display the score of every round."""
        table = Table(title=f"Run {result.run_id}")
        table.add_column("Round")
        table.add_column("Score")
        table.add_column("Generator loss")
        for r in result.rounds:
            loss = "" if r.generator_loss is None else f"{r.generator_loss:.4f}"
            marker = " *" if r.round_index == result.alpha else ""
            table.add_row(f"{r.round_index}{marker}", f"{r.score:.4f}", loss)
        self.console.print(table)

    def display_reports(self, reports: Sequence[EvalReport]) -> None:
        """Display the AUROC of every arm and its change against the baseline."""
        by_arm = {report.arm: report for report in reports}
        table = Table(title="AUROC")
        table.add_column("Arm")
        table.add_column("Detection")
        table.add_column("Segmentation")
        table.add_column("Detection delta")
        for report in reports:
            delta = ""
            if report.arm != BASELINE_ARM and BASELINE_ARM in by_arm:
                change = arm_delta(by_arm, BASELINE_ARM, report.arm)["detection_auroc"]
                delta = f"{change:+.4f}"
            segmentation = report.segmentation_auroc
            table.add_row(
                report.arm,
                f"{report.detection_auroc:.4f}",
                "" if segmentation is None else f"{segmentation:.4f}",
                delta,
            )
        self.console.print(table)

    def display_report(self, report: Report) -> None:
        """Display the quality table and the written files."""
        table = Table(title="Quality")
        table.add_column("Image set")
        table.add_column("SSIM")
        table.add_column("PSNR (dB)")
        for row in report.quality:
            psnr = "inf" if row.identical else f"{row.psnr_db:.2f}"
            table.add_row(row.label, f"{row.ssim:.4f}", psnr)
        self.console.print(table)
        for path in report.files:
            self.console.print(str(path))


def configure_logging(verbose: bool) -> None:
    """
    Configure logging.

    :param verbose: Enable verbose logging.
    """
    structlog.configure(logger_factory=LoggerFactory())
    level = logging.DEBUG if verbose else logging.INFO
    logging.basicConfig(
        format="[%(asctime)s - %(name)s - %(levelname)s] %(message)s",
        level=level,
        stream=sys.stderr,
    )
    for log_name in EXTERNAL_LOGGERS:
        logging.getLogger(log_name).setLevel(logging.WARNING)


def build_config(
    config_file: Optional[str],
    overrides: Sequence[str],
    seed: Optional[int],
    flags: Optional[Dict[str, Any]] = None,
) -> PipelineConfig:
    """
    Build the configuration from a file, `--set` overrides and command flags.

    :param config_file: YAML configuration file.
    :param overrides: `key=value` overrides.
    :param seed: Seed flag.
    :param flags: Dotted keys set by command flags, unset flags as None.
    :return: Validated configuration.
    """
    flag_items = [(key, value) for key, value in (flags or {}).items() if value is not None]
    if seed is not None:
        flag_items.append(("seed", seed))
    try:
        parsed = [parse_override(override) for override in overrides]
        merged = merge_overrides(parsed, flag_items)
        config_service = ConfigurationService(FileService())
        return config_service.get_config(Path(config_file) if config_file else None, merged)
    except (ValidationError, ValueError) as err:
        raise InvalidConfiguration(f"Invalid configuration: {err}") from err


def configure_dependencies(config: PipelineConfig) -> None:
    """
    Bind the configuration and the services built from it.

    :param config: Configuration of the run.
    """

    def dependencies(binder: inject.Binder) -> None:
        binder.bind(PipelineConfig, config)
        binder.bind(Console, Console())
        binder.bind_to_constructor(
            EmbeddingService, lambda: create_embedding_service(config.embedding)
        )
        binder.bind_to_constructor(Lexicon, SnapshotLexicon.shipped)

    inject.clear_and_configure(dependencies)


@contextmanager
def reported_errors() -> Iterator[None]:
    """Turn varigen errors into a red message and their exit code."""
    try:
        yield
    except VarigenError as err:
        LOGGER.debug("Command failed", exc_info=True)
        click.echo(click.style(f"{type(err).__name__}: {err}", fg="red"), err=True)
        sys.exit(err.exit_code)


def common_options(func: Callable) -> Callable:
    """Add the options every command shares."""
    options = [
        click.option(
            "--config",
            "config_file",
            type=click.Path(exists=True, dir_okay=False),
            help="YAML configuration file of dotted keys or nested sections.",
        ),
        click.option(
            "--set",
            "overrides",
            multiple=True,
            metavar="KEY=VALUE",
            help="Override a configuration key (can be specified multiple times).",
        ),
        click.option("--seed", type=int, help="Seed of every random choice in the run."),
        click.option("--verbose", is_flag=True, default=False, help="Enable debug logging."),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def setup(
    config_file: Optional[str],
    overrides: Sequence[str],
    seed: Optional[int],
    verbose: bool,
    flags: Optional[Dict[str, Any]] = None,
) -> VarigenOrchestrator:
    """Configure logging, configuration and dependencies, returning the orchestrator."""
    configure_logging(verbose)
    config = build_config(config_file, overrides, seed, flags)
    LOGGER.debug("Configuration", digest=config.digest(), **config.flat())
    configure_dependencies(config)
    return VarigenOrchestrator()


images_option = click.option(
    "--images",
    type=click.Path(exists=True, file_okay=False),
    help="Directory of original good images, instead of a scenario selection from the dataset.",
)
dataset_options = [
    click.option("--data-root", type=click.Path(file_okay=False), help="Dataset root directory."),
    click.option("--category", help="Dataset category."),
    click.option("--object", "object_word", help="Word naming the object [default=category]."),
    click.option(
        "--scenario",
        type=click.Choice([s.value for s in ScenarioKind]),
        help="Number of good images to train with [default=one_shot].",
    ),
]


def with_dataset_options(func: Callable) -> Callable:
    """Add the options selecting a dataset category and scenario."""
    for option in reversed(dataset_options):
        func = option(func)
    return func


def dataset_flags(
    data_root: Optional[str],
    category: Optional[str],
    object_word: Optional[str],
    scenario: Optional[str],
) -> Dict[str, Any]:
    """Dotted configuration keys of the dataset options."""
    return {
        "data.root": data_root,
        "data.category": category,
        "data.object_word": object_word,
        "data.scenario": scenario,
    }


@click.group(context_settings=dict(max_content_width=100))
def cli() -> None:
    """
    Generate non-defective images guided by text to train few-shot anomaly detectors.

    Each stage can be run on its own: `prompt` selects the best prompt for the original images,
    `train` and `generate` run the text-guided generation rounds, `generate --checkpoint`
    samples from a saved generator, `evaluate` compares memory-bank detectors with and without
    generated images, and `pipeline` runs all of them. `report` turns completed runs into tables
    and plots, `synth` renders a synthetic dataset category and `lexicon` rebuilds the shipped
    lexicon snapshot.

    Configuration is read from `--config` and overridden by `--set key=value` and command flags.
    Every run writes to `<output_root>/<config digest>-s<seed>`.
    """


@cli.command()
@common_options
@with_dataset_options
@images_option
@click.option("--t-max", "t_max", type=int, help="Most candidate prompts to keep [default=1000].")
@click.option("--threshold", type=float, help="Outlier distance threshold [default=0.5].")
@click.option(
    "--comparator",
    type=click.Choice([c.value for c in Comparator]),
    help="How a candidate's distance is compared to the threshold [default=greater].",
)
@click.option(
    "--fallback",
    type=click.Choice([f.value for f in FallbackMode]),
    help="Use the naive prompt when no candidate survives filtering [default=error].",
)
@click.option("--out", type=click.Path(dir_okay=False), help="File to save the selection to.")
def prompt(
    config_file: Optional[str],
    overrides: List[str],
    seed: Optional[int],
    verbose: bool,
    data_root: Optional[str],
    category: Optional[str],
    object_word: Optional[str],
    scenario: Optional[str],
    images: Optional[str],
    t_max: Optional[int],
    threshold: Optional[float],
    comparator: Optional[str],
    fallback: Optional[str],
    out: Optional[str],
) -> None:
    """Select the best prompt for the original images."""
    with reported_errors():
        flags = dataset_flags(data_root, category, object_word, scenario)
        flags.update(
            {
                "prompt.t_max": t_max,
                "prompt.threshold": threshold,
                "prompt.comparator": comparator,
                "prompt.fallback": fallback,
            }
        )
        orchestrator = setup(config_file, overrides, seed, verbose, flags)
        paths = orchestrator.select_originals(Path(images) if images else None)
        selection = orchestrator.select_prompt(paths)
        orchestrator.display_prompt(selection)
        if out:
            orchestrator.save_prompt(selection, Path(out))


@cli.command()
@common_options
@with_dataset_options
@images_option
def train(
    config_file: Optional[str],
    overrides: List[str],
    seed: Optional[int],
    verbose: bool,
    data_root: Optional[str],
    category: Optional[str],
    object_word: Optional[str],
    scenario: Optional[str],
    images: Optional[str],
) -> None:
    """Run the text-guided generation rounds and keep the best image set."""
    with reported_errors():
        flags = dataset_flags(data_root, category, object_word, scenario)
        orchestrator = setup(config_file, overrides, seed, verbose, flags)
        paths = orchestrator.select_originals(Path(images) if images else None)
        result = orchestrator.train(paths, orchestrator.select_prompt(paths))
        orchestrator.display_run(result)
        click.echo(click.style(f"Wrote {orchestrator.run_dir}", fg="green"))


@cli.command()
@common_options
@with_dataset_options
@images_option
@click.option("--rounds", type=int, help="Number of generation rounds [default=20].")
@click.option("--copies", type=int, help="Images generated per round [default=30].")
@click.option(
    "--checkpoint",
    type=click.Path(exists=True, dir_okay=False),
    help="Sample one image set from a generator saved by `train` instead of running rounds.",
)
@click.option(
    "--out",
    type=click.Path(file_okay=False),
    help="Directory to write to [default=the run directory under the output root].",
)
def generate(
    config_file: Optional[str],
    overrides: List[str],
    seed: Optional[int],
    verbose: bool,
    data_root: Optional[str],
    category: Optional[str],
    object_word: Optional[str],
    scenario: Optional[str],
    images: Optional[str],
    rounds: Optional[int],
    copies: Optional[int],
    checkpoint: Optional[str],
    out: Optional[str],
) -> None:
    """
    Generate images of the object guided by the best prompt.

    Without `--checkpoint` the generation rounds run and the best image set is written with its
    manifest. With it, a saved generator draws one image set around the originals given by
    `--images`.
    """
    if checkpoint and not (images and out):
        raise click.UsageError("--checkpoint needs --images and --out")
    with reported_errors():
        flags = dataset_flags(data_root, category, object_word, scenario)
        flags.update({"integrator.rounds": rounds, "integrator.copies": copies})
        orchestrator = setup(config_file, overrides, seed, verbose, flags)
        if checkpoint:
            paths = orchestrator.select_originals(Path(images))
            written = orchestrator.generate_from_checkpoint(
                Path(checkpoint), paths, Path(out), copies
            )
            click.echo(click.style(f"Wrote {len(written)} images to {out}", fg="green"))
            return
        run_dir = Path(out) if out else orchestrator.run_dir
        paths = orchestrator.select_originals(Path(images) if images else None)
        result = orchestrator.train(paths, orchestrator.select_prompt(paths), run_dir)
        orchestrator.display_run(result)
        click.echo(click.style(f"Wrote {run_dir}", fg="green"))


@cli.command()
@common_options
@with_dataset_options
@click.option("--run", "run", help="Run id or directory whose generated images join the bank.")
@click.option("--with-augment-arm", is_flag=True, help="Also evaluate plain augmented copies.")
def evaluate(
    config_file: Optional[str],
    overrides: List[str],
    seed: Optional[int],
    verbose: bool,
    data_root: Optional[str],
    category: Optional[str],
    object_word: Optional[str],
    scenario: Optional[str],
    run: Optional[str],
    with_augment_arm: bool,
) -> None:
    """Evaluate memory-bank detectors with and without generated images."""
    with reported_errors():
        flags = dataset_flags(data_root, category, object_word, scenario)
        orchestrator = setup(config_file, overrides, seed, verbose, flags)
        index = orchestrator.dataset_index()
        run_dir = orchestrator.run_dir
        generated = None
        if run:
            run_dir = orchestrator.report_service.resolve_run(
                run, Path(orchestrator.config.output_root)
            )
            completed = orchestrator.report_service.load_run(run_dir)
            paths = [Path(p) for p in completed.manifest["originals"]]
            generated = orchestrator.load_run_images(run_dir)
        else:
            paths = orchestrator.select_originals(index=index)
        reports = orchestrator.evaluate(index, paths, generated, with_augment_arm)
        orchestrator.save_evaluation(run_dir, reports)
        orchestrator.display_reports(reports)


@cli.command()
@common_options
@with_dataset_options
@click.option(
    "--fallback",
    type=click.Choice([f.value for f in FallbackMode]),
    default=FallbackMode.NAIVE.value,
    help="What to do when no prompt candidate survives filtering [default=naive].",
)
@click.option("--with-augment-arm", is_flag=True, help="Also evaluate plain augmented copies.")
@click.option("--dry-run", is_flag=True, help="Validate the configuration and run nothing.")
def pipeline(
    config_file: Optional[str],
    overrides: List[str],
    seed: Optional[int],
    verbose: bool,
    data_root: Optional[str],
    category: Optional[str],
    object_word: Optional[str],
    scenario: Optional[str],
    fallback: str,
    with_augment_arm: bool,
    dry_run: bool,
) -> None:
    """Select a prompt, generate images and compare detectors without and with them."""
    with reported_errors():
        flags = dataset_flags(data_root, category, object_word, scenario)
        flags["prompt.fallback"] = fallback
        orchestrator = setup(config_file, overrides, seed, verbose, flags)
        if dry_run:
            click.echo(click.style(f"Configuration is valid: {orchestrator.run_dir}", fg="green"))
            return
        reports = orchestrator.pipeline(with_augment_arm)
        orchestrator.display_reports(reports)
        click.echo(click.style(f"Wrote {orchestrator.run_dir}", fg="green"))


@cli.command()
@common_options
@click.argument("runs", nargs=-1, required=True)
@click.option("--out", type=click.Path(file_okay=False), help="Directory to write the report to.")
@click.option("--plots", is_flag=True, help="Also draw plots (needs matplotlib).")
def report(
    config_file: Optional[str],
    overrides: List[str],
    seed: Optional[int],
    verbose: bool,
    runs: List[str],
    out: Optional[str],
    plots: bool,
) -> None:
    """
    Write score curves, quality and AUROC tables for completed runs.

    RUNS are run ids under the output root or run directories. Given two runs, a table of their
    AUROC differences is written too.
    """
    with reported_errors():
        orchestrator = setup(config_file, overrides, seed, verbose)
        result = orchestrator.report(runs, Path(out) if out else None, plots)
        orchestrator.display_report(result)


@cli.command()
@common_options
@click.option("--out", type=click.Path(file_okay=False), required=True, help="Dataset root.")
@click.option(
    "--spec",
    "spec_file",
    type=click.Path(exists=True, dir_okay=False),
    help="Synthetic category specification (YAML).",
)
@click.option("--category", help="Category name when no specification is given.")
def synth(
    config_file: Optional[str],
    overrides: List[str],
    seed: Optional[int],
    verbose: bool,
    out: str,
    spec_file: Optional[str],
    category: Optional[str],
) -> None:
    """Render a synthetic dataset category with planted defects."""
    with reported_errors():
        orchestrator = setup(config_file, overrides, seed, verbose, {"data.category": category})
        category_dir = orchestrator.synthesize(Path(out), Path(spec_file) if spec_file else None)
        click.echo(click.style(f"Wrote {category_dir}", fg="green"))


@cli.command()
@click.option("--word", "words", multiple=True, required=True, help="Headword to include.")
@click.option("--out", type=click.Path(dir_okay=False), help="File to write the snapshot to.")
@click.option("--verbose", is_flag=True, default=False, help="Enable debug logging.")
def lexicon(words: List[str], out: Optional[str], verbose: bool) -> None:
    """Rebuild lexicon snapshot rows from WordNet (needs nltk)."""
    with reported_errors():
        configure_logging(verbose)
        contents = format_snapshot(snapshot_rows(NltkLexicon(), words))
        if out:
            FileService.write_text_file(Path(out), contents)
        else:
            click.echo(contents, nl=False)


def main() -> None:
    """Run the command line interface."""
    cli()


if __name__ == "__main__":
    main()
