#!/usr/bin/env python3
"""Recompute every headline figure from the shipped benchmark tables.

Feeds the cross-tabulations in cadas.reference_tables through the evaluation
module and prints accuracy, off-by-one accuracy, Cohen's kappa and per-class
recall for each, so the metric arithmetic can be eyeballed against the known
campaign figures without any image data.
"""

from cadas.evaluation import (
    accuracy,
    cohen_kappa,
    matrix_block,
    off_by_one_accuracy,
    per_class_recall,
)
from cadas.reference_tables import (
    AGREEMENT_FOOTNOTE,
    METHOD_VS_REFERENCE_CIN,
    METHOD_VS_REFERENCE_SIL,
    PATCH_COUNTS_CIN,
    PATCH_COUNTS_SIL,
    PATHOLOGIST1_VS_REFERENCE_CIN,
    PATHOLOGIST1_VS_REFERENCE_SIL,
    PATHOLOGIST2_VS_REFERENCE_CIN,
    PATHOLOGIST2_VS_REFERENCE_SIL,
    RATER_VS_RATER_CIN,
)
from cadas.grading import cin_to_sil
from cadas.model import Grade

TABLES = [
    ("rater 1 vs rater 2 (CIN)", RATER_VS_RATER_CIN),
    ("rater 1 vs reference (CIN)", PATHOLOGIST1_VS_REFERENCE_CIN),
    ("rater 2 vs reference (CIN)", PATHOLOGIST2_VS_REFERENCE_CIN),
    ("method vs reference (CIN)", METHOD_VS_REFERENCE_CIN),
    ("rater 1 vs reference (SIL)", PATHOLOGIST1_VS_REFERENCE_SIL),
    ("rater 2 vs reference (SIL)", PATHOLOGIST2_VS_REFERENCE_SIL),
    ("method vs reference (SIL)", METHOD_VS_REFERENCE_SIL),
]


def main() -> None:
    for title, matrix in TABLES:
        print()
        print("\n".join(matrix_block(matrix, title)))
        print(f"accuracy / agreement: {accuracy(matrix):.4f}")
        kappa = cohen_kappa(matrix)
        print(f"cohen kappa: {kappa.value:.4f}")
        try:
            print(f"off-by-one accuracy: {off_by_one_accuracy(matrix):.4f}")
        except Exception:
            pass
        recalls = "  ".join(f"{k}={v:.3f}" for k, v in per_class_recall(matrix).items())
        print(f"per-class recall: {recalls}")

    print()
    collapsed = {}
    for name, count in PATCH_COUNTS_CIN.items():
        sil = cin_to_sil(Grade.parse(name)).value
        collapsed[sil] = collapsed.get(sil, 0) + count
    print(f"CIN patch counts: {PATCH_COUNTS_CIN}")
    print(f"collapsed to SIL: {collapsed} (expected {PATCH_COUNTS_SIL})")
    print()
    print(AGREEMENT_FOOTNOTE)


if __name__ == "__main__":
    main()
