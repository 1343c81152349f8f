"""Service for turning completed run directories into report files."""
from __future__ import annotations

from pathlib import Path
from typing import Any, Dict, List, NamedTuple, Optional, Sequence

import inject
import numpy as np
import structlog

from varigen.errors import BackendUnavailable, RunNotFound
from varigen.models.evaluation import EvalReport
from varigen.models.generation import (
    EVALUATION_FILE_NAME,
    MANIFEST_FILE_NAME,
    ORIGINALS_DIR,
)
from varigen.models.quality import QualityRow
from varigen.services.file_service import FileService
from varigen.services.quality_service import QualityPlugin, quality_table

LOGGER = structlog.get_logger(__name__)

REPORT_DIR = "report"
CURVE_FILE_NAME = "curve.csv"
QUALITY_FILE_NAME = "quality.csv"
AUROC_FILE_NAME = "auroc.csv"
DELTA_FILE_NAME = "delta.csv"
CURVE_PLOT_NAME = "curve.png"
HISTOGRAM_PLOT_NAME = "scores.png"

CURVE_HEADER = ["run_id", "round", "score", "generator_loss", "best"]
QUALITY_HEADER = ["label", "ssim", "psnr_db"]
AUROC_HEADER = ["run_id", "arm", "detection_auroc", "segmentation_auroc"]
DELTA_HEADER = ["arm", "metric", "first", "second", "delta"]
METRICS = ["detection_auroc", "segmentation_auroc"]


class CompletedRun(NamedTuple):
    """
    A run directory with its manifest and evaluation reports.

    directory: Run directory.
    manifest: Run manifest.
    reports: Evaluation reports by arm, empty if the run was not evaluated.
    """

    directory: Path
    manifest: Dict[str, Any]
    reports: Dict[str, EvalReport]

    @property
    def run_id(self) -> str:
        """Run identifier."""
        return str(self.manifest["run_id"])


class Report(NamedTuple):
    """Rows of every report table and the files they were written to."""

    curve: List[List[Any]]
    quality: List[QualityRow]
    auroc: List[List[Any]]
    delta: List[List[Any]]
    files: List[Path]


def auroc_delta(first: Dict[str, EvalReport], second: Dict[str, EvalReport]) -> List[List[Any]]:
    """
    Compare the AUROC of the arms two evaluations share.

    :param first: Reports of the first evaluation by arm.
    :param second: Reports of the second evaluation by arm.
    :return: Rows of arm, metric, first value, second value and their difference.
    """
    rows = []
    for arm in [a for a in first if a in second]:
        for metric in METRICS:
            a = getattr(first[arm], metric)
            b = getattr(second[arm], metric)
            delta = None if a is None or b is None else b - a
            rows.append([arm, metric, a, b, delta])
    return rows


def arm_delta(reports: Dict[str, EvalReport], base: str, other: str) -> Dict[str, float]:
    """
    How much one arm of an evaluation improves on another.

    :param reports: Reports by arm.
    :param base: Arm to compare against.
    :param other: Arm to compare.
    :return: Difference of each metric.
    """
    delta = {}
    for metric in METRICS:
        a = getattr(reports[base], metric)
        b = getattr(reports[other], metric)
        if a is not None and b is not None:
            delta[metric] = b - a
    return delta


class ReportService:
    """A service for reading completed runs and writing their reports."""

    @inject.autoparams()
    def __init__(self, file_service: FileService) -> None:
        """
        Initialize the service.

        :param file_service: Service for working with files.
        """
        self.file_service = file_service

    def resolve_run(self, run: str, output_root: Path) -> Path:
        """
        Find the directory of a run given its id or path.

        :param run: Run id under the output root, or a run directory.
        :param output_root: Directory runs are written under.
        :return: Run directory.
        """
        for candidate in (Path(run), output_root / run):
            if self.file_service.path_exists(candidate / MANIFEST_FILE_NAME):
                return candidate
        raise RunNotFound(f"No completed run '{run}' under '{output_root}'")

    def load_run(self, directory: Path) -> CompletedRun:
        """
        Read a run's manifest and evaluation reports.

        :param directory: Run directory.
        :return: Completed run.
        """
        manifest_path = directory / MANIFEST_FILE_NAME
        if not self.file_service.path_exists(manifest_path):
            raise RunNotFound(f"'{directory}' has no run manifest")
        manifest = self.file_service.read_yaml_file(manifest_path)
        if manifest.get("status") != "complete":
            raise RunNotFound(f"Run '{directory}' is {manifest.get('status')}, not complete")

        reports: Dict[str, EvalReport] = {}
        evaluation_path = directory / EVALUATION_FILE_NAME
        if self.file_service.path_exists(evaluation_path):
            for entry in self.file_service.read_yaml_file(evaluation_path).get("reports", []):
                report = EvalReport.parse_obj(entry)
                reports[report.arm] = report
        return CompletedRun(directory=directory, manifest=manifest, reports=reports)

    def write_evaluation(self, directory: Path, reports: Sequence[EvalReport]) -> Path:
        """
        Write evaluation reports into a run directory.

        :param directory: Run directory.
        :param reports: Reports to write.
        :return: Path of the evaluation file.
        """
        path = directory / EVALUATION_FILE_NAME
        contents = {"reports": [report.summary() for report in reports]}
        for entry, report in zip(contents["reports"], reports):
            entry["image_scores"] = [s.dict() for s in report.image_scores]
        self.file_service.write_yaml_file(path, contents)
        return path

    @staticmethod
    def curve_rows(run: CompletedRun) -> List[List[Any]]:
        """Score-versus-round rows of a run."""
        alpha = run.manifest.get("alpha")
        return [
            [
                run.run_id,
                entry["round"],
                entry["score"],
                entry.get("generator_loss"),
                entry["round"] == alpha,
            ]
            for entry in run.manifest.get("rounds", [])
        ]

    @staticmethod
    def auroc_rows(run: CompletedRun) -> List[List[Any]]:
        """AUROC summary rows of a run."""
        return [
            [run.run_id, arm, report.detection_auroc, report.segmentation_auroc]
            for arm, report in run.reports.items()
        ]

    def quality_rows(
        self, runs: Sequence[CompletedRun], plugins: Optional[Sequence[QualityPlugin]] = None
    ) -> List[QualityRow]:
        """
        Quality of each run's generated set against the first run's originals.

        :param runs: Completed runs.
        :param plugins: Optional extra metrics.
        :return: One row per run.
        """
        originals = [
            self.file_service.read_image(path)
            for path in self.file_service.list_images(runs[0].directory / ORIGINALS_DIR)
        ]
        image_sets = []
        for run in runs:
            images = [
                self.file_service.read_image(run.directory / name)
                for name in run.manifest.get("images", [])
            ]
            label = f"{run.run_id} ({run.manifest['prompt']['text']})"
            image_sets.append((label, images))
        return quality_table(originals, image_sets, plugins)

    def write_report(
        self,
        runs: Sequence[CompletedRun],
        out_dir: Path,
        plots: bool = False,
        plugins: Optional[Sequence[QualityPlugin]] = None,
    ) -> Report:
        """
        Write curve, quality and AUROC tables, plus a comparison of the first two runs.

        :param runs: Completed runs, at least one.
        :param out_dir: Directory to write the report files to.
        :param plots: Also draw the score curve and score histogram.
        :param plugins: Optional extra quality metrics.
        :return: Report rows and files.
        """
        curve = [row for run in runs for row in self.curve_rows(run)]
        auroc = [row for run in runs for row in self.auroc_rows(run)]
        quality = self.quality_rows(runs, plugins)
        plugin_names = sorted({name for row in quality for name in row.plugins})

        files = [out_dir / CURVE_FILE_NAME, out_dir / QUALITY_FILE_NAME, out_dir / AUROC_FILE_NAME]
        self.file_service.write_csv_file(files[0], CURVE_HEADER, curve)
        self.file_service.write_csv_file(
            files[1], QUALITY_HEADER + plugin_names, [r.cells(plugin_names) for r in quality]
        )
        self.file_service.write_csv_file(files[2], AUROC_HEADER, auroc)

        delta: List[List[Any]] = []
        if len(runs) > 1:
            delta = auroc_delta(runs[0].reports, runs[1].reports)
            files.append(out_dir / DELTA_FILE_NAME)
            self.file_service.write_csv_file(files[-1], DELTA_HEADER, delta)

        if plots:
            files.extend(self.write_plots(runs, out_dir))

        LOGGER.info("Wrote report", out_dir=str(out_dir), runs=len(runs), files=len(files))
        return Report(curve=curve, quality=quality, auroc=auroc, delta=delta, files=files)

    @staticmethod
    def write_plots(runs: Sequence[CompletedRun], out_dir: Path) -> List[Path]:
        """
        Draw the score-versus-round curve and histograms of the test image scores.

        :param runs: Completed runs.
        :param out_dir: Directory to write the images to.
        :return: Written image files.
        """
        try:
            import matplotlib

            matplotlib.use("Agg")
            import matplotlib.pyplot as plt
        except ImportError as err:
            raise BackendUnavailable("Plots need the 'plots' extra (matplotlib)") from err

        out_dir.mkdir(parents=True, exist_ok=True)
        figure, axes = plt.subplots()
        for run in runs:
            rounds = run.manifest.get("rounds", [])
            axes.plot([r["round"] for r in rounds], [r["score"] for r in rounds], label=run.run_id)
        axes.set_xlabel("round")
        axes.set_ylabel("prompt similarity")
        axes.legend()
        figure.savefig(out_dir / CURVE_PLOT_NAME)
        plt.close(figure)

        figure, axes = plt.subplots()
        for run in runs:
            for arm, report in run.reports.items():
                scores = np.array([s.score for s in report.image_scores])
                labels = np.array([s.label for s in report.image_scores])
                for label, name in ((0, "normal"), (1, "anomalous")):
                    axes.hist(
                        scores[labels == label], alpha=0.5, label=f"{run.run_id} {arm} {name}"
                    )
        axes.set_xlabel("image score")
        axes.legend()
        figure.savefig(out_dir / HISTOGRAM_PLOT_NAME)
        plt.close(figure)
        return [out_dir / CURVE_PLOT_NAME, out_dir / HISTOGRAM_PLOT_NAME]
