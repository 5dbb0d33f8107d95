"""Training hyperparameters (kept import-light; config.py and training.py share it)."""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigurationError


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 120
    iterations_per_epoch: int = 1000
    batch_size: int = 4
    lr0: float = 0.01
    lr_halving_period_epochs: int = 15
    crop_size: int = 64
    seed: int = 0
    checkpoint_every: int = 1
    detail_branch: bool = True

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigurationError("epochs must be >= 0")
        for name in ("iterations_per_epoch", "batch_size", "lr_halving_period_epochs",
                     "crop_size", "checkpoint_every"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if self.lr0 <= 0:
            raise ConfigurationError("lr0 must be positive")
