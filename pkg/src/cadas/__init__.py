"""Grading pipeline for cervical epithelium image patches.

Stages: nucleus segmentation (superpixels + thresholding), overlapping-nucleus
splitting (distance transform + Gaussian mixtures), per-band morphometric
features, and weighted-kNN grading with CIN and SIL reporting.
"""

__version__ = "0.1.0"

from cadas.model import (
    EpithelialRegion,
    Grade,
    MembraneAnnotation,
    Papilla,
    SepImage,
    SilGrade,
    parse_annotation,
    region_of_point,
    in_papilla,
)

__all__ = [
    "EpithelialRegion",
    "Grade",
    "MembraneAnnotation",
    "Papilla",
    "SepImage",
    "SilGrade",
    "parse_annotation",
    "region_of_point",
    "in_papilla",
    "__version__",
]
