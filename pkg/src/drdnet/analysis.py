"""Static architecture analysis: receptive fields, impulse probes, SE gates.

The receptive-field table intentionally carries two columns.  The "formula"
column reproduces the published per-layer recurrence (d - 1) * 14 + 17 for
the detail branch exactly as stated; the "computed" column folds the actual
convolution chain (kernel, dilation, stride) layer by layer.  The two do not
agree for the default dilation set, and the renderer says so rather than
reconciling them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigurationError, UsageError
from .networks import DRDNet, NetworkConfig
from .tensor import Tensor


@dataclass(frozen=True)
class LayerDescriptor:
    """One primitive convolution in a receptive-field chain."""

    kernel: int
    stride: int = 1
    dilation: int = 1


def receptive_field(layers) -> int:
    """Fold the standard RF recurrence over primitive conv descriptors.

    r grows by (k - 1) * dilation * jump per layer; jump multiplies by the
    stride.  Pointwise (k = 1) layers contribute nothing, which is why the
    1x1 fusion conv inside each aggregation block is listed but inert.
    """
    r = 1
    jump = 1
    for layer in layers:
        if layer.kernel < 1 or layer.stride < 1 or layer.dilation < 1:
            raise ConfigurationError("kernel, stride and dilation must be >= 1")
        r += (layer.kernel - 1) * layer.dilation * jump
        jump *= layer.stride
    return r


def sdcab_descriptors(dilations) -> tuple:
    """Primitive convs of one detail block, reduced to its widest path.

    Each of the two aggregation stages runs parallel 3x3 convs at the given
    dilations and fuses with a 1x1; the receptive field is set by the widest
    branch, so the chain collapses to two dilated 3x3 convs plus two inert
    pointwise convs.
    """
    widest = max(int(d) for d in dilations)
    stage = (LayerDescriptor(3, dilation=widest), LayerDescriptor(1))
    return stage + stage


@dataclass(frozen=True)
class RfRow:
    layer: int
    label: str
    dilations: tuple
    rf_formula: int
    rf_computed: int


def formula_rf(layer: int, blocks: int) -> int:
    """Published closed form for the detail branch, reproduced verbatim.

    Layer 0 is the input conv; layers 1..blocks are detail blocks following
    (d - 1) * 14 + 17; the two trailing convs add 2 each.
    """
    if layer == 0:
        return 3
    if 1 <= layer <= blocks:
        return (layer - 1) * 14 + 17
    if layer == blocks + 1:
        return (blocks - 1) * 14 + 17 + 2
    if layer == blocks + 2:
        return (blocks - 1) * 14 + 17 + 4
    raise UsageError(f"layer index {layer} outside the branch (0..{blocks + 2})")


def rf_table(cfg: NetworkConfig) -> list:
    """Per-layer receptive fields of the detail branch, both columns."""
    rows = []
    chain = []

    def push(layer, label, dils, descriptors):
        chain.extend(descriptors)
        rows.append(RfRow(
            layer=layer,
            label=label,
            dilations=tuple(int(d) for d in dils),
            rf_formula=formula_rf(layer, cfg.blocks_per_branch),
            rf_computed=receptive_field(chain),
        ))

    push(0, "conv 3x3", (1,), (LayerDescriptor(3),))
    for b in range(1, cfg.blocks_per_branch + 1):
        push(b, "SDCAB", cfg.dilations, sdcab_descriptors(cfg.dilations))
    push(cfg.blocks_per_branch + 1, "conv 3x3", (1,), (LayerDescriptor(3),))
    push(cfg.blocks_per_branch + 2, "conv 3x3", (1,), (LayerDescriptor(3),))
    return rows


def render_rf_table(rows) -> str:
    """Aligned text table plus an explicit note when the columns disagree."""
    header = ("layer", "op", "dilations", "rf_formula", "rf_computed")
    cells = [header]
    for r in rows:
        cells.append((
            str(r.layer),
            r.label,
            ",".join(str(d) for d in r.dilations),
            str(r.rf_formula),
            str(r.rf_computed),
        ))
    widths = [max(len(row[i]) for row in cells) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip()
             for row in cells]
    last = rows[-1]
    lines.append("# rf_formula reproduces the published recurrence "
                 "(d-1)*14+17 for the detail blocks")
    lines.append("# rf_computed folds r += (k-1)*dilation*jump over the "
                 "actual conv chain")
    if last.rf_formula != last.rf_computed:
        lines.append(f"# discrepancy: final layer rf_formula={last.rf_formula} "
                     f"but rf_computed={last.rf_computed}; the published "
                     "recurrence does not match the stated dilation set")
    else:
        lines.append("# columns agree for this configuration")
    return "\n".join(lines)


_BOX_SUFFIX_ZERO = (".bias", "_bias", ".beta")


def box_init(module) -> None:
    """Reinitialize a module so every conv averages its input window.

    Conv and FC weights become 1/fan_in, biases and BN shifts 0, BN scales 1,
    PReLU slopes keep 0.25, and BN running stats reset to (0, 1).  With the
    module in eval mode a centered impulse then spreads exactly as far as the
    geometry allows, making measured support independent of random draws.
    """
    for name, p in module.named_parameters():
        if name.endswith(".weight") or name.endswith(".fc1") or name.endswith(".fc2") \
                or name in ("weight", "fc1", "fc2"):
            fan_in = p.data[0].size
            p.data[...] = np.asarray(1.0 / fan_in, dtype=p.dtype)
        elif name.endswith(_BOX_SUFFIX_ZERO) or name in ("bias", "beta"):
            p.data[...] = 0.0
        elif name.endswith(".gamma") or name == "gamma":
            p.data[...] = 1.0
        elif name.endswith(".alpha") or name == "alpha":
            p.data[...] = np.asarray(0.25, dtype=p.dtype)
        else:
            raise ConfigurationError(f"box_init does not know parameter {name}")
    for name, b in module.named_buffers():
        if name.endswith("running_mean"):
            b[...] = 0.0
        elif name.endswith("running_var"):
            b[...] = 1.0
        else:
            raise ConfigurationError(f"box_init does not know buffer {name}")


@dataclass(frozen=True)
class ImpulseSupport:
    row_min: int
    row_max: int
    col_min: int
    col_max: int

    @property
    def height(self) -> int:
        return self.row_max - self.row_min + 1

    @property
    def width(self) -> int:
        return self.col_max - self.col_min + 1

    @property
    def side(self) -> int:
        return max(self.height, self.width)


def impulse_response_support(forward, in_channels: int, height: int,
                             width: int, threshold: float = 1e-12) -> ImpulseSupport:
    """Bounding box of the response to a centered unit impulse.

    `forward` maps a rank-4 Tensor to a rank-4 Tensor.  The impulse lights
    every input channel at the spatial center; any output magnitude above
    `threshold` counts as support.  Run the module in eval mode after
    box_init so batch statistics do not smear the response.
    """
    if height < 1 or width < 1:
        raise UsageError(f"impulse canvas {height}x{width} has no interior")
    x = np.zeros((1, in_channels, height, width), dtype=np.float32)
    x[:, :, height // 2, width // 2] = 1.0
    with T.no_grad():
        y = forward(Tensor(x, requires_grad=False))
    mag = np.abs(y.data.astype(np.float64)).max(axis=(0, 1))
    mask = mag > threshold
    if not mask.any():
        raise UsageError("impulse response is empty at this threshold")
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    return ImpulseSupport(int(rows[0]), int(rows[-1]), int(cols[0]), int(cols[-1]))


@dataclass(frozen=True)
class SEGateReport:
    block_index: int
    gates: np.ndarray
    top: tuple
    bottom: tuple
    features: np.ndarray
    clamped: bool


def se_gate_report(model: DRDNet, image: np.ndarray, block_index: int,
                   top_k: int) -> SEGateReport:
    """Channel gate values of one rain-branch block for a single image.

    Ranking uses a stable sort on the gate values, so equal gates order by
    ascending channel index in both the top and bottom lists.  `top_k` is
    clamped to the channel count; the report records whether that happened.
    """
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] != model.cfg.image_channels:
        raise UsageError(
            f"expected a ({model.cfg.image_channels}, H, W) image, "
            f"got shape {tuple(image.shape)}")
    blocks = model.rrn.blocks
    if not 0 <= block_index < len(blocks):
        raise UsageError(
            f"block index {block_index} outside 0..{len(blocks) - 1}")
    if top_k < 1:
        raise UsageError("top_k must be >= 1")

    model.set_training(False)
    x = Tensor(image[None].astype(np.float32), requires_grad=False)
    with T.no_grad():
        y = model.rrn.encoder_act(model.rrn.encoder(x))
        for i, block in enumerate(blocks):
            if i == block_index:
                feats = block.branch_features(y)
                gate = block.se.gate(feats)
                break
            y = block(y)

    g = gate.data[0, :, 0, 0].astype(np.float64)
    channels = g.size
    k = min(top_k, channels)
    strongest = np.argsort(-g, kind="stable")[:k]
    weakest = np.argsort(g, kind="stable")[:k]
    return SEGateReport(
        block_index=block_index,
        gates=g,
        top=tuple((int(c), float(g[c])) for c in strongest),
        bottom=tuple((int(c), float(g[c])) for c in weakest),
        features=feats.data[0].copy(),
        clamped=k < top_k,
    )


def normalize_map(arr: np.ndarray) -> np.ndarray:
    """Min-max normalize a 2-D map to [0, 1]; constant maps become zeros."""
    arr = arr.astype(np.float64)
    lo = float(arr.min())
    hi = float(arr.max())
    if hi <= lo:
        return np.zeros_like(arr)
    return (arr - lo) / (hi - lo)
