"""Models for image-quality tables."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Dict, List

IDENTICAL_PSNR = math.inf


@dataclass(frozen=True)
class QualityRow:
    """
    Quality of one labeled image set against the originals.

    label: Name of the image set.
    ssim: Mean SSIM of the set.
    psnr_db: Mean PSNR of the set in dB, infinite when every image matches its original.
    plugins: Values of optional plugin metrics, by metric name.
    """

    label: str
    ssim: float
    psnr_db: float
    plugins: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        """Check the metric ranges."""
        if not -1.0 <= self.ssim <= 1.0:
            raise ValueError(f"SSIM {self.ssim} outside [-1, 1]")
        if not self.psnr_db > 0.0:
            raise ValueError(f"PSNR {self.psnr_db} is not positive")

    @property
    def identical(self) -> bool:
        """Whether the set reproduces its originals exactly."""
        return self.psnr_db == IDENTICAL_PSNR

    def cells(self, plugin_names: List[str]) -> List[Any]:
        """
        Cells of the delimited table row.

        :param plugin_names: Plugin columns to fill, blank when the row has no value.
        :return: Label, SSIM, PSNR and plugin values.
        """
        psnr = "inf" if self.identical else self.psnr_db
        return [self.label, self.ssim, psnr] + [self.plugins.get(n, "") for n in plugin_names]
