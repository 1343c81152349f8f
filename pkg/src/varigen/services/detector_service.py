"""A memory-bank patch-feature anomaly detector and its AUROC evaluation."""
from __future__ import annotations

import abc
from concurrent.futures import ThreadPoolExecutor as Executor
from typing import Any, List, Optional, Sequence

import numpy as np
import structlog
from scipy import ndimage
from scipy.spatial.distance import cdist
from scipy.stats import rankdata

from varigen.errors import (
    BackendUnavailable,
    DimensionMismatch,
    EmptyTrainingSet,
    MissingMask,
    ShapeMismatch,
    SingleClassInput,
    UnsupportedImageShape,
)
from varigen.models.dataset import ScenarioKind
from varigen.models.evaluation import (
    AnomalyScore,
    EvalReport,
    EvalSample,
    FeatureBank,
    ImageScore,
)
from varigen.services.config_service import Backbone, DetectorConfig

LOGGER = structlog.get_logger(__name__)

N_THREADS = 8
IMAGENET_MEAN = np.array([0.485, 0.456, 0.406])
IMAGENET_STD = np.array([0.229, 0.224, 0.225])


class PatchBackbone(abc.ABC):
    """Turns an image into a grid of patch feature vectors."""

    identifier: str
    stride: int

    @abc.abstractmethod
    def extract(self, image: np.ndarray) -> np.ndarray:
        """
        Extract patch features.

        :param image: H x W x C image with values in [0, 1].
        :return: grid_h x grid_w x C_feat features.
        """


def _check_divisible(image: np.ndarray, stride: int) -> np.ndarray:
    array = np.asarray(image, dtype=np.float64)
    if array.ndim == 2:
        array = array[:, :, None]
    if array.ndim != 3 or array.shape[0] % stride or array.shape[1] % stride:
        raise UnsupportedImageShape(
            f"Image of shape {array.shape} does not tile into {stride}x{stride} patches"
        )
    return array


class ToyPatchBackbone(PatchBackbone):
    """Per-patch mean, standard deviation and mean absolute gradients of every channel."""

    def __init__(self, patch_size: int = 8) -> None:
        """
        Initialize the backbone.

        :param patch_size: Edge length of the square patches.
        """
        self.identifier = f"toy-p{patch_size}"
        self.stride = patch_size

    def extract(self, image: np.ndarray) -> np.ndarray:
        """
        Extract patch statistics.

        :param image: H x W x C image.
        :return: (H / p) x (W / p) x 4C features.
        """
        array = _check_divisible(image, self.stride)
        height, width, channels = array.shape
        p = self.stride
        blocks = array.reshape(height // p, p, width // p, p, channels).transpose(0, 2, 1, 3, 4)

        mean = blocks.mean(axis=(2, 3))
        std = blocks.std(axis=(2, 3))
        if p > 1:
            grad_x = np.abs(np.diff(blocks, axis=3)).mean(axis=(2, 3))
            grad_y = np.abs(np.diff(blocks, axis=2)).mean(axis=(2, 3))
        else:
            grad_x = grad_y = np.zeros_like(mean)
        return np.concatenate([mean, std, grad_x, grad_y], axis=-1)


class ResNetPatchBackbone(PatchBackbone):
    """Locally averaged ResNet-18 layer2 and layer3 activations on an ImageNet-pretrained net."""

    def __init__(self) -> None:
        """Load the pretrained network."""
        try:
            import torch
            from torchvision.models import ResNet18_Weights, resnet18
        except ImportError as err:
            raise BackendUnavailable("The resnet18 backbone needs torchvision") from err

        try:
            model = resnet18(weights=ResNet18_Weights.IMAGENET1K_V1)
        except Exception as err:
            raise BackendUnavailable(f"Could not load ResNet-18 weights: {err}") from err

        self.identifier = "resnet18-l2l3"
        self.stride = 8
        self._torch = torch
        self._model: Any = model.eval()

    def extract(self, image: np.ndarray) -> np.ndarray:
        """
        Extract pretrained patch features.

        :param image: H x W x C image, grayscale images are replicated to RGB.
        :return: (H / 8) x (W / 8) x 384 features.
        """
        import torch.nn.functional as F

        array = _check_divisible(image, self.stride)
        if array.shape[2] == 1:
            array = np.repeat(array, 3, axis=2)
        array = (array[:, :, :3] - IMAGENET_MEAN) / IMAGENET_STD
        batch = self._torch.from_numpy(array.astype(np.float32)).permute(2, 0, 1).unsqueeze(0)

        model = self._model
        with self._torch.no_grad():
            x = model.maxpool(model.relu(model.bn1(model.conv1(batch))))
            layer2 = model.layer2(model.layer1(x))
            layer3 = model.layer3(layer2)
            layer3 = F.interpolate(
                layer3, size=layer2.shape[-2:], mode="bilinear", align_corners=False
            )
            features = self._torch.cat([layer2, layer3], dim=1)
            features = F.avg_pool2d(features, kernel_size=3, stride=1, padding=1)
        return features[0].permute(1, 2, 0).double().numpy()


def create_backbone(config: DetectorConfig) -> PatchBackbone:
    """
    Create the backbone named by the `detector.backbone` config value.

    :param config: Detector configuration.
    :return: Patch backbone.
    """
    if config.backbone == Backbone.RESNET18:
        LOGGER.info("Loading pretrained detector backbone", backbone=config.backbone.value)
        return ResNetPatchBackbone()
    return ToyPatchBackbone(config.patch_size)


def extract_patch_features(image: np.ndarray, backbone: PatchBackbone) -> np.ndarray:
    """
    Extract a grid of patch features.

    :param image: Image at detector resolution.
    :param backbone: Feature extractor.
    :return: grid_h x grid_w x C_feat features.
    """
    features = backbone.extract(image)
    if not np.all(np.isfinite(features)):
        raise ValueError(f"Backbone {backbone.identifier} produced non-finite features")
    return features


def greedy_coreset(features: np.ndarray, n_keep: int, rng: np.random.Generator) -> np.ndarray:
    """
    Greedy farthest-point (k-center) subsampling.

    Starts at a random feature, then repeatedly adds the feature farthest from everything
    selected so far. Ties go to the lowest index.

    :param features: N x C features.
    :param n_keep: Number of features to select.
    :param rng: Source of the starting feature.
    :return: Indices of the selected features, in selection order.
    """
    count = features.shape[0]
    n_keep = min(n_keep, count)
    selected = [int(rng.integers(0, count))]
    nearest = cdist(features, features[selected]).ravel()
    nearest[selected[0]] = -np.inf
    while len(selected) < n_keep:
        chosen = int(np.argmax(nearest))
        selected.append(chosen)
        nearest = np.minimum(nearest, cdist(features, features[[chosen]]).ravel())
        nearest[chosen] = -np.inf
    return np.asarray(selected, dtype=np.int64)


def coreset_size(count: int, coreset_fraction: float) -> int:
    """Number of features a coreset of the given fraction keeps."""
    return max(1, int(round(coreset_fraction * count)))


def build_bank(
    train_images: Sequence[np.ndarray],
    coreset_fraction: float,
    rng: np.random.Generator,
    backbone: PatchBackbone,
    n_generated: int = 0,
) -> FeatureBank:
    """
    Pool the patch features of the training images into a memory bank.

    :param train_images: Originals followed by generated images.
    :param coreset_fraction: Fraction of pooled features to keep, 1 keeps all.
    :param rng: Source of the coreset start.
    :param backbone: Feature extractor.
    :param n_generated: How many of the training images are generated.
    :return: Feature bank.
    """
    if not train_images:
        raise EmptyTrainingSet("Cannot build a memory bank from no images")
    if not 0.0 < coreset_fraction <= 1.0:
        raise ValueError(f"Coreset fraction must be in (0, 1], got {coreset_fraction}")

    with Executor(max_workers=N_THREADS) as exe:
        grids = list(exe.map(lambda image: extract_patch_features(image, backbone), train_images))
    features = np.concatenate([g.reshape(-1, g.shape[-1]) for g in grids], axis=0)

    if coreset_fraction < 1.0:
        keep = coreset_size(features.shape[0], coreset_fraction)
        features = features[greedy_coreset(features, keep, rng)]

    LOGGER.debug(
        "Built memory bank",
        images=len(train_images),
        generated=n_generated,
        pooled=sum(g.shape[0] * g.shape[1] for g in grids),
        kept=features.shape[0],
    )
    return FeatureBank(
        features=features,
        backbone=backbone.identifier,
        n_originals=len(train_images) - n_generated,
        n_generated=n_generated,
        coreset_fraction=coreset_fraction,
    )


def score_image(
    image: np.ndarray, bank: FeatureBank, backbone: PatchBackbone, sigma: float
) -> AnomalyScore:
    """
    Score an image by the distance of its patches to the nearest bank features.

    :param image: Image at detector resolution.
    :param bank: Memory bank built with the same backbone.
    :param backbone: Feature extractor.
    :param sigma: Gaussian smoothing width of the upsampled map in pixels.
    :return: Anomaly score and H x W map.
    """
    grid = extract_patch_features(image, backbone)
    grid_h, grid_w, dim = grid.shape
    if dim != bank.dim:
        raise DimensionMismatch(f"Patch features have dimension {dim}, bank has {bank.dim}")

    distances = cdist(grid.reshape(-1, dim), bank.features).min(axis=1).reshape(grid_h, grid_w)
    height, width = np.asarray(image).shape[:2]
    score_map = np.repeat(np.repeat(distances, height // grid_h, axis=0), width // grid_w, axis=1)
    if sigma > 0.0:
        score_map = ndimage.gaussian_filter(score_map, sigma=sigma, mode="nearest")
    return AnomalyScore.from_map(np.maximum(score_map, 0.0))


def auroc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """
    Area under the ROC curve as the normalized Mann-Whitney U statistic.

    :param scores: Higher means more anomalous.
    :param labels: 1 for anomalous, 0 for normal.
    :return: AUROC in [0, 1], ties counted half.
    """
    score_array = np.asarray(scores, dtype=np.float64).ravel()
    label_array = np.asarray(labels).ravel()
    if score_array.shape != label_array.shape:
        raise ShapeMismatch(f"{score_array.size} scores for {label_array.size} labels")
    positive = label_array == 1
    if not np.all(positive | (label_array == 0)):
        raise ValueError("Labels must be 0 or 1")
    n_pos = int(positive.sum())
    n_neg = positive.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClassInput("AUROC needs both normal and anomalous samples")

    ranks = rankdata(score_array)
    u_statistic = ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u_statistic / (n_pos * n_neg))


class DetectorService:
    """Builds memory banks and evaluates them on labeled test sets."""

    def __init__(self, config: DetectorConfig, backbone: Optional[PatchBackbone] = None) -> None:
        """
        Initialize the service.

        :param config: Detector configuration.
        :param backbone: Feature extractor, created from the configuration if not given.
        """
        self.config = config
        self.backbone = backbone or create_backbone(config)

    def build_bank(
        self,
        originals: Sequence[np.ndarray],
        rng: np.random.Generator,
        generated: Sequence[np.ndarray] = (),
    ) -> FeatureBank:
        """
        Build a memory bank from originals and optional generated images.

        :param originals: Original good images at detector resolution.
        :param rng: Source of the coreset start.
        :param generated: Additional training images.
        :return: Feature bank.
        """
        return build_bank(
            list(originals) + list(generated),
            self.config.coreset_fraction,
            rng,
            self.backbone,
            n_generated=len(generated),
        )

    def score(self, image: np.ndarray, bank: FeatureBank) -> AnomalyScore:
        """
        Score one image.

        :param image: Image at detector resolution.
        :param bank: Memory bank.
        :return: Anomaly score.
        """
        return score_image(image, bank, self.backbone, self.config.scaled_sigma)

    def evaluate(
        self,
        bank: FeatureBank,
        samples: Sequence[EvalSample],
        scenario: ScenarioKind,
        arm: str = "baseline",
    ) -> EvalReport:
        """
        Measure detection and pooled-pixel segmentation AUROC.

        :param bank: Memory bank.
        :param samples: Test images with labels and masks.
        :param scenario: Scenario the bank was built in.
        :param arm: Name to report the bank under.
        :return: Evaluation report.
        """
        labels = [int(sample.label) for sample in samples]
        if len(set(labels)) < 2:
            raise SingleClassInput("The test set needs both normal and anomalous images")
        for sample in samples:
            if sample.label == 1 and sample.mask is None:
                raise MissingMask(f"Anomalous test image '{sample.name}' has no mask")

        with Executor(max_workers=N_THREADS) as exe:
            scores = list(exe.map(lambda sample: self.score(sample.image, bank), samples))

        pixel_scores: List[np.ndarray] = []
        pixel_labels: List[np.ndarray] = []
        for sample, score in zip(samples, scores):
            mask = sample.mask if sample.mask is not None else np.zeros(score.score_map.shape)
            if mask.shape != score.score_map.shape:
                raise ShapeMismatch(
                    f"Mask of '{sample.name}' has shape {mask.shape}, "
                    f"score map has {score.score_map.shape}"
                )
            pixel_scores.append(score.score_map.ravel())
            pixel_labels.append((np.asarray(mask) > 0).astype(np.int64).ravel())

        detection = auroc([s.image_score for s in scores], labels)
        segmentation = auroc(np.concatenate(pixel_scores), np.concatenate(pixel_labels))
        report = EvalReport(
            arm=arm,
            detection_auroc=detection,
            segmentation_auroc=segmentation,
            scenario=scenario,
            counts={
                "originals": bank.n_originals,
                "generated": bank.n_generated,
                "bank": bank.size,
                "normal": labels.count(0),
                "anomalous": labels.count(1),
            },
            image_scores=[
                ImageScore(name=sample.name, label=sample.label, score=score.image_score)
                for sample, score in zip(samples, scores)
            ],
        )
        LOGGER.info(
            "Evaluated memory bank",
            arm=arm,
            detection_auroc=detection,
            segmentation_auroc=segmentation,
        )
        return report
