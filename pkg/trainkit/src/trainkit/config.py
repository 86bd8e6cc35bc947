"""Training configuration: model/strategy/loss flags matching the
published experiment grid (C, F, CA, CE, CAE, FAE) plus scratch baselines.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import yaml

MODELS = ("densenet121", "densenet169", "resnet18", "resnet50")
STRATEGIES = ("scratch", "FT", "LP-FT", "G-LF")
LOSSES = ("cross_entropy", "focal")

# (loss, use_augment, use_curated) -> configuration id
CONFIGURATION_ROWS = {
    ("cross_entropy", False, False): "C",
    ("focal", False, False): "F",
    ("cross_entropy", True, False): "CA",
    ("cross_entropy", False, True): "CE",
    ("cross_entropy", True, True): "CAE",
    ("focal", True, True): "FAE",
}

SCRATCH_EPOCHS = 15
TRANSFER_EPOCHS = 75


@dataclass(frozen=True)
class TrainConfig:
    model: str = "densenet121"
    strategy: str = "FT"
    loss: str = "cross_entropy"
    use_augment: bool = False
    use_curated: bool = False
    epochs: int | None = None  # default 15 for scratch, 75 for transfer
    batch_size: int = 16
    lr: float = 1e-5
    seed: int = 0
    pretrained: bool = True

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"model must be one of {MODELS}, got {self.model!r}")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        key = (self.loss, self.use_augment, self.use_curated)
        if self.strategy == "scratch":
            if key != ("cross_entropy", False, False):
                raise ValueError("scratch baseline uses cross-entropy without augment/curation")
        elif key not in CONFIGURATION_ROWS:
            raise ValueError(
                f"flags {key} do not match any experiment configuration "
                f"({', '.join(CONFIGURATION_ROWS.values())})"
            )
        if self.batch_size < 1 or self.lr <= 0:
            raise ValueError("batch_size must be >= 1 and lr > 0")

    @property
    def configuration_id(self) -> str:
        if self.strategy == "scratch":
            return "scratch"
        return CONFIGURATION_ROWS[(self.loss, self.use_augment, self.use_curated)]

    @property
    def resolved_epochs(self) -> int:
        if self.epochs is not None:
            return self.epochs
        return SCRATCH_EPOCHS if self.strategy == "scratch" else TRANSFER_EPOCHS


def load_config(path: str | Path) -> TrainConfig:
    raw = yaml.safe_load(Path(path).read_text()) or {}
    return TrainConfig(**raw)
