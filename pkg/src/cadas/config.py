"""Pipeline configuration: dataclasses, file loading, fingerprinting.

A config file is a single TOML or JSON document with optional sections
(slic, threshold, mask, overlap, grading, evaluation). Every report carries
the fingerprint hash of the config that produced it.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib


class ConfigError(Exception):
    """Invalid configuration content."""


@dataclass(frozen=True)
class SlicConfig:
    k: int = 3000
    m: float = 10.0
    distance: str = "standard"  # "standard" | "paper-literal"
    max_iter: int = 10


@dataclass(frozen=True)
class ThresholdConfig:
    mode: str = "otsu"  # "otsu" | "fixed"
    value: Optional[float] = None


@dataclass(frozen=True)
class MaskConfig:
    min_area: int = 50
    close_radius: int = 3


@dataclass(frozen=True)
class OverlapConfig:
    r: float = 10.0
    scale: float = 2.0
    em_tol: float = 1e-4
    em_max_iter: int = 100
    alpha_cap: int = 32


@dataclass(frozen=True)
class GradingConfig:
    k: int = 5


@dataclass(frozen=True)
class EvaluationConfig:
    n_folds: int = 5
    seed: int = 7


@dataclass(frozen=True)
class PipelineConfig:
    median_window: int = 9
    slic: SlicConfig = field(default_factory=SlicConfig)
    threshold: ThresholdConfig = field(default_factory=ThresholdConfig)
    mask: MaskConfig = field(default_factory=MaskConfig)
    overlap: OverlapConfig = field(default_factory=OverlapConfig)
    grading: GradingConfig = field(default_factory=GradingConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)

    def __post_init__(self) -> None:
        if self.slic.distance not in ("standard", "paper-literal"):
            raise ConfigError(
                f"slic.distance must be 'standard' or 'paper-literal', got {self.slic.distance!r}"
            )
        if self.threshold.mode not in ("otsu", "fixed"):
            raise ConfigError(
                f"threshold.mode must be 'otsu' or 'fixed', got {self.threshold.mode!r}"
            )
        if self.threshold.mode == "fixed" and self.threshold.value is None:
            raise ConfigError("threshold.mode 'fixed' requires threshold.value")
        if self.median_window < 3 or self.median_window % 2 == 0:
            raise ConfigError("median_window must be odd and >= 3")

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def fingerprint(self) -> str:
        """Stable short hash of the full configuration."""
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:12]

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "PipelineConfig":
        sections = {
            "slic": SlicConfig,
            "threshold": ThresholdConfig,
            "mask": MaskConfig,
            "overlap": OverlapConfig,
            "grading": GradingConfig,
            "evaluation": EvaluationConfig,
        }
        kwargs: dict[str, Any] = {}
        for key, value in doc.items():
            if key in sections:
                if not isinstance(value, dict):
                    raise ConfigError(f"section {key!r} must be a table/object")
                kwargs[key] = _build_section(sections[key], key, value)
            elif key == "median_window":
                kwargs[key] = value
            else:
                raise ConfigError(f"unknown config key: {key!r}")
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path: str | Path) -> "PipelineConfig":
        path = Path(path)
        text = path.read_text(encoding="utf-8")
        if path.suffix.lower() == ".toml":
            try:
                doc = tomllib.loads(text)
            except tomllib.TOMLDecodeError as e:
                raise ConfigError(f"{path}: {e}") from None
        else:
            try:
                doc = json.loads(text)
            except json.JSONDecodeError as e:
                raise ConfigError(f"{path}: line {e.lineno}: {e.msg}") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: top-level value must be a table/object")
        return cls.from_dict(doc)


def _build_section(section_cls: type, name: str, values: dict[str, Any]) -> Any:
    known = {f.name for f in fields(section_cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown key {sorted(unknown)[0]!r} in section {name!r}")
    try:
        return section_cls(**values)
    except TypeError as e:
        raise ConfigError(f"section {name!r}: {e}") from None
