"""Pipeline configuration: JSON in, validated dataclasses out.

Every field has a default, so {} is a complete config. load -> save -> load
is stable. File paths referenced by a config are checked where they are
used, not at parse time, except model_path which must exist if set.
"""

import json
import os
from dataclasses import asdict, dataclass, field

from .errors import DataError


@dataclass
class LshSettings:
    d: int = 256
    m: int = 144
    term_bits: int = 12
    selected_bits: list = None  # None: choose by variance over select_sample rows
    select_sample: int = 10000

    def validate(self):
        if self.d <= 0 or self.d % 8:
            raise DataError(f"lsh.d must be a positive multiple of 8, got {self.d}")
        if not 1 <= self.term_bits <= 24:
            raise DataError(f"lsh.term_bits must be in [1, 24], got {self.term_bits}")
        if self.m <= 0 or self.m % self.term_bits:
            raise DataError(f"lsh.m must be a positive multiple of term_bits, got {self.m}")
        if self.selected_bits is not None:
            if len(self.selected_bits) != self.m:
                raise DataError("lsh.selected_bits length must equal lsh.m")
        if self.select_sample < 1:
            raise DataError("lsh.select_sample must be >= 1")


@dataclass
class SearchSettings:
    k: int = 20
    min_overlap: int = 2

    def validate(self):
        if self.k < 1:
            raise DataError(f"search.k must be >= 1, got {self.k}")
        if self.min_overlap < 1:
            raise DataError(f"search.min_overlap must be >= 1, got {self.min_overlap}")


@dataclass
class ClassifierSettings:
    model_path: str = None
    threshold: float = 0.9
    hidden: list = field(default_factory=lambda: [512, 256, 64])
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 256
    epochs: int = 5

    def validate(self):
        if not 0.0 < self.threshold < 1.0:
            raise DataError(f"classifier.threshold must be in (0, 1), got {self.threshold}")
        if self.model_path is not None and not os.path.exists(self.model_path):
            raise DataError(f"classifier.model_path does not exist: {self.model_path}")
        if not self.hidden or any(int(h) < 1 for h in self.hidden):
            raise DataError("classifier.hidden must be positive layer widths")
        for name in ("learning_rate", "beta1", "beta2", "eps"):
            if getattr(self, name) <= 0:
                raise DataError(f"classifier.{name} must be positive")
        if self.batch_size < 1 or self.epochs < 1:
            raise DataError("classifier.batch_size and epochs must be >= 1")


@dataclass
class KcutSettings:
    threshold: float = 0.9

    def validate(self):
        if not 0.0 < self.threshold < 1.0:
            raise DataError(f"kcut.threshold must be in (0, 1), got {self.threshold}")


@dataclass
class AugmentationSettings:
    k_aug: int = 3

    def validate(self):
        if self.k_aug < 0:
            raise DataError(f"augmentation.k_aug must be >= 0, got {self.k_aug}")


@dataclass
class PipelineConfig:
    seed: int = 42
    threads: int = None  # None: NEARDUP_THREADS env, else machine cores
    lsh: LshSettings = field(default_factory=LshSettings)
    search: SearchSettings = field(default_factory=SearchSettings)
    classifier: ClassifierSettings = field(default_factory=ClassifierSettings)
    kcut: KcutSettings = field(default_factory=KcutSettings)
    augmentation: AugmentationSettings = field(default_factory=AugmentationSettings)

    def validate(self) -> "PipelineConfig":
        for section in (self.lsh, self.search, self.classifier, self.kcut, self.augmentation):
            section.validate()
        if self.threads is not None and int(self.threads) < 1:
            raise DataError("threads must be >= 1 when set")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, payload: dict) -> "PipelineConfig":
        if not isinstance(payload, dict):
            raise DataError("config root must be a JSON object")
        known = {"seed", "threads", "lsh", "search", "classifier", "kcut", "augmentation"}
        unknown = set(payload) - known
        if unknown:
            raise DataError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(
            seed=int(payload.get("seed", 42)),
            threads=payload.get("threads"),
            lsh=_section(LshSettings, payload.get("lsh")),
            search=_section(SearchSettings, payload.get("search")),
            classifier=_section(ClassifierSettings, payload.get("classifier")),
            kcut=_section(KcutSettings, payload.get("kcut")),
            augmentation=_section(AugmentationSettings, payload.get("augmentation")),
        )
        return cfg.validate()

    def save(self, path) -> None:
        from .util import atomic_write_json

        atomic_write_json(path, self.to_dict())

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        with open(path, "r", encoding="utf-8") as fh:
            try:
                payload = json.load(fh)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}: invalid JSON: {exc}") from exc
        return cls.from_dict(payload)


def _section(cls, payload):
    if payload is None:
        return cls()
    if not isinstance(payload, dict):
        raise DataError(f"config section for {cls.__name__} must be an object")
    fields = {f for f in cls.__dataclass_fields__}
    unknown = set(payload) - fields
    if unknown:
        raise DataError(f"unknown keys in {cls.__name__}: {sorted(unknown)}")
    return cls(**payload)
