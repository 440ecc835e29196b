"""Confusion matrices, agreement statistics and cross-validation folds.

Matrices keep the reference on rows and predictions on columns. Class label
order is fixed: (Normal, CIN1, CIN2, CIN3) or (Normal, LSIL, HSIL).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np

CIN_LABELS = ("Normal", "CIN1", "CIN2", "CIN3")
SIL_LABELS = ("Normal", "LSIL", "HSIL")


class EvaluationError(Exception):
    pass


@dataclass(eq=False)
class ConfusionMatrix:
    labels: tuple[str, ...]
    counts: np.ndarray  # (n, n) int64; rows = reference, cols = prediction

    def __post_init__(self) -> None:
        c = np.asarray(self.counts, dtype=np.int64)
        if c.ndim != 2 or c.shape[0] != c.shape[1] or c.shape[0] != len(self.labels):
            raise EvaluationError("counts must be square and match the labels")
        if (c < 0).any():
            raise EvaluationError("counts must be nonnegative")
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def row_totals(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def col_totals(self) -> np.ndarray:
        return self.counts.sum(axis=0)

    @classmethod
    def from_pairs(
        cls,
        ref: Sequence[str],
        pred: Sequence[str],
        labels: Sequence[str],
    ) -> "ConfusionMatrix":
        if len(ref) != len(pred):
            raise EvaluationError(
                f"reference and prediction lengths differ: {len(ref)} vs {len(pred)}"
            )
        if len(ref) == 0:
            raise EvaluationError("cannot tabulate an empty sample")
        index = {lab: i for i, lab in enumerate(labels)}
        counts = np.zeros((len(labels), len(labels)), dtype=np.int64)
        for r, p in zip(ref, pred):
            counts[index[r], index[p]] += 1
        return cls(labels=tuple(labels), counts=counts)

    def collapse(
        self, mapping: Callable[[str], str], labels: Sequence[str]
    ) -> "ConfusionMatrix":
        """Merge classes through a label mapping (e.g. CIN -> SIL)."""
        index = {lab: i for i, lab in enumerate(labels)}
        counts = np.zeros((len(labels), len(labels)), dtype=np.int64)
        for i, ri in enumerate(self.labels):
            for j, pj in enumerate(self.labels):
                counts[index[mapping(ri)], index[mapping(pj)]] += self.counts[i, j]
        return ConfusionMatrix(labels=tuple(labels), counts=counts)


def accuracy(m: ConfusionMatrix) -> float:
    """Diagonal fraction: trace / total."""
    if m.total == 0:
        raise EvaluationError("empty matrix")
    return float(np.trace(m.counts)) / m.total


class KappaResult(NamedTuple):
    value: float
    degenerate: bool  # expected agreement is 1 (single populated class)


def cohen_kappa(m: ConfusionMatrix) -> KappaResult:
    """Chance-corrected agreement (p_o - p_e) / (1 - p_e).

    When the margins concentrate on one class, p_e = 1 and kappa is defined
    as 0 with the degenerate flag set.
    """
    total = m.total
    if total == 0:
        raise EvaluationError("empty matrix")
    p_o = float(np.trace(m.counts)) / total
    p_e = float((m.row_totals() * m.col_totals()).sum()) / (total * total)
    if math.isclose(p_e, 1.0, abs_tol=1e-15):
        return KappaResult(value=0.0, degenerate=True)
    return KappaResult(value=(p_o - p_e) / (1.0 - p_e), degenerate=False)


def off_by_one_accuracy(m: ConfusionMatrix) -> float:
    """Fraction of samples within one rank of the reference class.

    Requires the matrix labels to be in severity order (as CIN_LABELS and
    SIL_LABELS are).
    """
    for ordered in (CIN_LABELS, SIL_LABELS):
        if m.labels == ordered:
            break
    else:
        raise EvaluationError(f"labels {m.labels} carry no severity order")
    if m.total == 0:
        raise EvaluationError("empty matrix")
    n = len(m.labels)
    hit = sum(
        int(m.counts[i, j]) for i in range(n) for j in range(n) if abs(i - j) <= 1
    )
    return hit / m.total


def per_class_recall(m: ConfusionMatrix) -> dict[str, float]:
    rows = m.row_totals()
    return {
        lab: (float(m.counts[i, i]) / rows[i] if rows[i] else 0.0)
        for i, lab in enumerate(m.labels)
    }


class FoldAssignment(NamedTuple):
    folds: np.ndarray  # fold index per sample
    flagged: tuple[str, ...]  # classes with fewer members than folds


def stratified_folds(
    labels: Sequence[str], n_folds: int, seed: int
) -> FoldAssignment:
    """Deterministic stratified fold assignment.

    Within each class the (seeded) shuffled members are dealt round-robin, so
    per-class counts across folds differ by at most one. Classes with fewer
    members than folds are flagged.
    """
    if n_folds < 2:
        raise EvaluationError(f"n_folds must be >= 2, got {n_folds}")
    if n_folds > len(labels):
        raise EvaluationError(
            f"n_folds {n_folds} exceeds sample count {len(labels)}"
        )
    rng = np.random.default_rng(seed)
    folds = np.full(len(labels), -1, dtype=np.int64)
    flagged = []
    for cls in sorted(set(labels)):
        idx = np.flatnonzero([lab == cls for lab in labels])
        if len(idx) < n_folds:
            flagged.append(cls)
        rng.shuffle(idx)
        folds[idx] = np.arange(len(idx)) % n_folds
    return FoldAssignment(folds=folds, flagged=tuple(flagged))


def matrix_block(m: ConfusionMatrix, title: str) -> list[str]:
    """Plain-text rendering, reference classes down the rows."""
    width = max(6, *(len(lab) for lab in m.labels)) + 2
    lines = [title, "  (rows = reference, columns = prediction)"]
    header = " " * width + "".join(f"{lab:>{width}}" for lab in m.labels) + f"{'Total':>{width}}"
    lines.append(header)
    for i, lab in enumerate(m.labels):
        cells = "".join(f"{int(c):>{width}}" for c in m.counts[i])
        lines.append(f"{lab:>{width}}" + cells + f"{int(m.row_totals()[i]):>{width}}")
    cols = "".join(f"{int(c):>{width}}" for c in m.col_totals())
    lines.append(f"{'Total':>{width}}" + cols + f"{m.total:>{width}}")
    return lines
