"""Benchmark cross-tabulations shipped as fixtures for metric verification.

These tables come from the clinical validation campaign this pipeline
targets: 957 epithelium patches graded independently by two pathologists,
adjudicated into a final reference diagnosis, and classified by the
morphometric method. They let the metric suite be checked against known
figures without the image data. Rows are the reference labels, columns the
rater/method labels.
"""

from __future__ import annotations

import numpy as np

from cadas.evaluation import CIN_LABELS, SIL_LABELS, ConfusionMatrix

# Pathologist 1 (rows) against pathologist 2 (columns), CIN grading.
RATER_VS_RATER_CIN = ConfusionMatrix(
    labels=CIN_LABELS,
    counts=np.array(
        [
            [354, 37, 0, 0],
            [88, 156, 8, 0],
            [13, 52, 71, 15],
            [4, 9, 22, 128],
        ]
    ),
)

# Final diagnosis (rows) against each rater and the method (columns).
PATHOLOGIST1_VS_REFERENCE_CIN = ConfusionMatrix(
    labels=CIN_LABELS,
    counts=np.array(
        [
            [377, 74, 18, 2],
            [13, 176, 37, 14],
            [0, 2, 87, 18],
            [1, 0, 9, 129],
        ]
    ),
)

PATHOLOGIST2_VS_REFERENCE_CIN = ConfusionMatrix(
    labels=CIN_LABELS,
    counts=np.array(
        [
            [424, 44, 3, 0],
            [26, 193, 16, 5],
            [8, 17, 79, 3],
            [1, 0, 3, 135],
        ]
    ),
)

METHOD_VS_REFERENCE_CIN = ConfusionMatrix(
    labels=CIN_LABELS,
    counts=np.array(
        [
            [386, 61, 17, 7],
            [116, 91, 19, 14],
            [13, 30, 47, 17],
            [4, 15, 18, 102],
        ]
    ),
)

PATHOLOGIST1_VS_REFERENCE_SIL = ConfusionMatrix(
    labels=SIL_LABELS,
    counts=np.array(
        [
            [377, 74, 20],
            [13, 176, 51],
            [1, 2, 243],
        ]
    ),
)

PATHOLOGIST2_VS_REFERENCE_SIL = ConfusionMatrix(
    labels=SIL_LABELS,
    counts=np.array(
        [
            [424, 44, 3],
            [26, 193, 21],
            [9, 17, 220],
        ]
    ),
)

METHOD_VS_REFERENCE_SIL = ConfusionMatrix(
    labels=SIL_LABELS,
    counts=np.array(
        [
            [381, 57, 33],
            [106, 91, 43],
            [16, 27, 203],
        ]
    ),
)

# Patch counts per reference class in the two grading systems.
PATCH_COUNTS_CIN = {"Normal": 471, "CIN1": 240, "CIN2": 107, "CIN3": 139}
PATCH_COUNTS_SIL = {"Normal": 471, "LSIL": 240, "HSIL": 246}

# The campaign circulated a rounded 73% rater-agreement figure; the exact
# diagonal fraction of RATER_VS_RATER_CIN is 709/957 ~= 0.7409. Reports print
# the exact value and footnote the rounding difference.
ROUNDED_RATER_AGREEMENT = 0.73
AGREEMENT_FOOTNOTE = (
    "note: agreement is the exact diagonal fraction of the tabulated matrix; "
    "rounded figures quoted elsewhere (e.g. 73%) may differ from it."
)
