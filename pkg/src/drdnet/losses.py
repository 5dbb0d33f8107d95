"""Training objective: squared-L2 terms, mean over the batch, sum over pixels.

loss_rain supervises the predicted rain residual against the ground-truth residual;
loss_detail supervises the composed output I_p + I_r against the clean image. The
total is lambda1 * loss_rain + lambda2 * loss_detail (defaults 0.1 / 1.0). All three
are graph scalars, so gradients flow through both branches, including through the
I_p = O - R coupling.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import tensor as T
from .errors import ConfigurationError
from .tensor import Tensor


@dataclass(frozen=True)
class LossConfig:
    lambda1: float = 0.1
    lambda2: float = 1.0

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigurationError("loss weights must be non-negative")


def _mean_batch_sum_sq(diff: Tensor) -> Tensor:
    n = diff.shape[0]
    return T.scale(T.sum_all(T.multiply(diff, diff)), 1.0 / n)


def loss_rain(rain_pred: Tensor, rain_true: Tensor) -> Tensor:
    return _mean_batch_sum_sq(T.sub(rain_pred, rain_true))


def loss_detail(derained: Tensor, detail: Tensor, clean: Tensor) -> Tensor:
    return _mean_batch_sum_sq(T.sub(T.add(derained, detail), clean))


def loss_total(l_rain: Tensor, l_detail: Tensor, cfg: LossConfig = LossConfig()) -> Tensor:
    return T.add(T.scale(l_rain, cfg.lambda1), T.scale(l_detail, cfg.lambda2))
