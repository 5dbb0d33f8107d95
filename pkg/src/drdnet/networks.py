"""Two-branch deraining model.

Both branches see the rainy image O. The rain branch predicts the rain residual R
through SE-gated residual blocks; the detail branch predicts a repair image I_r
through dilated-aggregation blocks. Composition:

    I_p = O - R        (rain-removed estimate)
    I_c = I_p + I_r    (final output)

The two compositions run in float64 on the float32 branch outputs, which makes the
reconstruction identity I_p + R = O exact to well below float32 resolution for any
parameter values (a pure float32 subtract/add chain provably is not).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

from . import tensor as T
from .blocks import BatchNorm2d, Conv2d, Module, PReLU, RainResidualBlock, SDCAB
from .errors import ConfigurationError
from .rand import derive_rng
from .tensor import Tensor


@dataclass(frozen=True)
class NetworkConfig:
    feature_maps: int = 64
    blocks_per_branch: int = 16
    se_reduction: int = 16
    dilations: tuple = (1, 3, 5)
    image_channels: int = 3

    def __post_init__(self):
        if self.blocks_per_branch < 1:
            raise ConfigurationError("blocks_per_branch must be >= 1")
        if self.feature_maps < self.se_reduction:
            raise ConfigurationError(
                f"feature_maps ({self.feature_maps}) must be >= se_reduction "
                f"({self.se_reduction})")
        if self.feature_maps % self.se_reduction != 0:
            raise ConfigurationError(
                f"se_reduction {self.se_reduction} must divide feature_maps "
                f"{self.feature_maps}")
        if self.image_channels < 1:
            raise ConfigurationError("image_channels must be >= 1")
        if len(self.dilations) < 1 or any(d < 1 for d in self.dilations):
            raise ConfigurationError(f"bad dilations {self.dilations}")
        object.__setattr__(self, "dilations", tuple(int(d) for d in self.dilations))

    @property
    def depth_per_branch(self) -> int:
        # encoder conv + blocks + decoder conv + output conv
        return self.blocks_per_branch + 3


class _Branch(Module):
    """Shared skeleton of both branches.

    layer0 = PReLU(conv3(O)); N inner blocks; decoder conv3+BN; global skip add
    with layer0; bare conv3 projecting back to image channels.
    """

    def __init__(self, cfg: NetworkConfig, make_block, rng, init="he-zero-final"):
        super().__init__()
        if init not in ("he-zero-final", "he"):
            raise ConfigurationError(f"unknown branch init {init!r}")
        m = cfg.feature_maps
        self.encoder = Conv2d(cfg.image_channels, m, 3, rng)
        self.encoder_act = PReLU(m)
        self.blocks = [make_block(rng) for _ in range(cfg.blocks_per_branch)]
        self.decoder = Conv2d(m, m, 3, rng)
        self.decoder_bn = BatchNorm2d(m)
        # zero-init output conv makes a fresh model the exact identity (R = 0),
        # which keeps early high-lr training well behaved
        self.output = Conv2d(m, cfg.image_channels, 3, rng,
                             init="zero" if init == "he-zero-final" else "he")

    def forward(self, x):
        layer0 = self.encoder_act(self.encoder(x))
        y = layer0
        for block in self.blocks:
            y = block(y)
        y = self.decoder_bn(self.decoder(y))
        return self.output(T.add(layer0, y))


class RainResidualNetwork(_Branch):
    def __init__(self, cfg: NetworkConfig, rng, init="he-zero-final"):
        super().__init__(
            cfg, lambda r: RainResidualBlock(cfg.feature_maps, cfg.se_reduction, r),
            rng, init)


class DetailRepairNetwork(_Branch):
    def __init__(self, cfg: NetworkConfig, rng, init="he-zero-final"):
        super().__init__(
            cfg, lambda r: SDCAB(cfg.feature_maps, cfg.dilations, r), rng, init)


class DrdOutputs(NamedTuple):
    rain: Tensor       # R
    derained: Tensor   # I_p = O - R
    detail: Tensor     # I_r (None when the detail branch is disabled)
    final: Tensor      # I_c = I_p + I_r (I_p when disabled)


class DRDNet(Module):
    """Full model; with_detail_branch=False keeps only the rain branch (ablation)."""

    def __init__(self, cfg: NetworkConfig, seed=0, with_detail_branch=True,
                 init="he-zero-final"):
        super().__init__()
        self.cfg = cfg
        self.rrn = RainResidualNetwork(cfg, derive_rng(seed, "init/rrn"), init)
        self.drn = (DetailRepairNetwork(cfg, derive_rng(seed, "init/drn"), init)
                    if with_detail_branch else None)
        _check_unique_names(self)

    @property
    def with_detail_branch(self):
        return self.drn is not None

    def forward(self, o: Tensor) -> DrdOutputs:
        if o.shape[1] != self.cfg.image_channels:
            raise ConfigurationError(
                f"expected {self.cfg.image_channels}-channel input, got {o.shape[1]}")
        rain = self.rrn(o)
        # the subtraction runs in float64 so casting I_p (and I_c) back to the
        # input dtype reproduces O bit-exactly; see the composition tests
        derained = T.sub(T.to_float64(o), rain)
        if self.drn is None:
            return DrdOutputs(rain, derained, None, derained)
        detail = self.drn(o)
        final = T.add(derained, detail)
        return DrdOutputs(rain, derained, detail, final)


def _check_unique_names(module: Module):
    names = [n for n, _ in module.named_parameters()]
    names += [n for n, _ in module.named_buffers()]
    dupes = {n for n in names if names.count(n) > 1}
    if dupes:
        raise ConfigurationError(f"duplicate parameter names: {sorted(dupes)}")


def parameter_counts(module: Module) -> dict:
    """Per-parameter scalar counts keyed by dotted name."""
    return {name: int(p.data.size) for name, p in module.named_parameters()}


def count_parameters(module: Module) -> int:
    return sum(parameter_counts(module).values())
