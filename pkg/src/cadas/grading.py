"""Weighted k-nearest-neighbor grading of feature vectors.

Neighbors vote with weight 1/d^2 in z-scored feature space; an exact-match
neighbor (d = 0) decides immediately. Ties between accumulated class weights
break toward the more severe grade.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from cadas.features import FeatureVector
from cadas.model import Grade, SilGrade

_D2_FLOOR = 1e-12  # guards 1/d^2 for near-coincident neighbors


class GradingError(Exception):
    pass


@dataclass(frozen=True)
class Normalizer:
    """Per-dimension z-scoring fitted on training vectors.

    Zero-variance dimensions get std 1 (they map to 0) and are flagged.
    """

    mean: np.ndarray
    std: np.ndarray
    constant_dims: tuple[int, ...]

    def apply(self, v: np.ndarray) -> np.ndarray:
        return (np.asarray(v, dtype=np.float64) - self.mean) / self.std

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "constant_dims": list(self.constant_dims),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Normalizer":
        return cls(
            mean=np.asarray(doc["mean"], dtype=np.float64),
            std=np.asarray(doc["std"], dtype=np.float64),
            constant_dims=tuple(doc["constant_dims"]),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2), encoding="utf-8")


def fit_normalizer(matrix: np.ndarray) -> Normalizer:
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or len(m) < 2:
        raise GradingError("fitting a normalizer needs at least 2 vectors")
    mean = m.mean(axis=0)
    std = m.std(axis=0)
    constant = np.flatnonzero(std == 0.0)
    std = np.where(std == 0.0, 1.0, std)
    mean.setflags(write=False)
    std.setflags(write=False)
    return Normalizer(mean=mean, std=std, constant_dims=tuple(int(i) for i in constant))


@dataclass(eq=False)
class TrainingSet:
    """Labeled feature vectors plus the normalizer fitted on them."""

    features: np.ndarray  # (n, d) raw values
    labels: tuple[Grade, ...]
    normalizer: Normalizer

    def __post_init__(self) -> None:
        if len(self.features) != len(self.labels):
            raise GradingError("features and labels must align")
        self.features.setflags(write=False)

    def __len__(self) -> int:
        return len(self.labels)

    @classmethod
    def fit(cls, vectors: Sequence[FeatureVector]) -> "TrainingSet":
        labeled = [v for v in vectors if v.label is not None]
        if len(labeled) < 2:
            raise GradingError("training needs at least 2 labeled vectors")
        matrix = np.stack([v.as_array() for v in labeled])
        return cls(
            features=matrix,
            labels=tuple(v.label for v in labeled),
            normalizer=fit_normalizer(matrix),
        )


@dataclass(frozen=True)
class GradedResult:
    sep_id: str
    predicted: Grade
    sil: SilGrade
    neighbor_votes: dict[Grade, float]


def cin_to_sil(g: Grade) -> SilGrade:
    """Normal stays Normal, CIN1 is LSIL, CIN2 and CIN3 are HSIL."""
    return {
        Grade.NORMAL: SilGrade.NORMAL,
        Grade.CIN1: SilGrade.LSIL,
        Grade.CIN2: SilGrade.HSIL,
        Grade.CIN3: SilGrade.HSIL,
    }[g]


def wknn_classify(
    query: Union[FeatureVector, np.ndarray],
    training: TrainingSet,
    k: int = 5,
    sep_id: str = "",
) -> GradedResult:
    """Classify one query against the training set.

    Distances are Euclidean in the normalizer's z-scored space. The k nearest
    neighbors (stable index order on distance ties) vote with weight 1/d^2;
    a zero-distance neighbor returns its class outright with infinite weight.
    Equal accumulated weights resolve toward the more severe grade.
    """
    n = len(training)
    if not 1 <= k <= n:
        raise GradingError(f"k must be in [1, {n}], got {k}")
    if isinstance(query, FeatureVector):
        sep_id = sep_id or query.sep_id
        q = query.as_array()
    else:
        q = np.asarray(query, dtype=np.float64)
    qn = training.normalizer.apply(q)
    tn = training.normalizer.apply(training.features)
    d2 = ((tn - qn) ** 2).sum(axis=1)

    exact = np.flatnonzero(d2 == 0.0)
    if len(exact) > 0:
        winner = training.labels[int(exact[0])]
        return GradedResult(
            sep_id=sep_id,
            predicted=winner,
            sil=cin_to_sil(winner),
            neighbor_votes={winner: float("inf")},
        )

    order = np.argsort(d2, kind="stable")[:k]
    votes: dict[Grade, float] = {}
    for idx in order:
        label = training.labels[int(idx)]
        votes[label] = votes.get(label, 0.0) + 1.0 / max(float(d2[idx]), _D2_FLOOR)
    predicted = max(votes, key=lambda g: (votes[g], g.severity))
    return GradedResult(
        sep_id=sep_id,
        predicted=predicted,
        sil=cin_to_sil(predicted),
        neighbor_votes=votes,
    )
