"""Flat `key = value` run configuration.

One dotted namespace per concern (net.*, train.*, loss.*). Files may hold blank
lines and # comments; unknown keys and malformed lines are hard errors. The same
flat map is echoed into checkpoints (plus state.* counters), so a checkpoint fully
describes the network it belongs to.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigurationError
from .losses import LossConfig
from .networks import NetworkConfig
from .training_config import TrainConfig


def _parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _parse_dilations(raw: str) -> tuple:
    return tuple(int(part.strip()) for part in raw.split(",") if part.strip())


SCHEMA = {
    "net.feature_maps": int,
    "net.blocks_per_branch": int,
    "net.se_reduction": int,
    "net.image_channels": int,
    "net.dilations": _parse_dilations,
    "train.epochs": int,
    "train.iterations_per_epoch": int,
    "train.batch_size": int,
    "train.lr0": float,
    "train.lr_halving_period_epochs": int,
    "train.crop_size": int,
    "train.seed": int,
    "train.checkpoint_every": int,
    "train.detail_branch": _parse_bool,
    "loss.lambda1": float,
    "loss.lambda2": float,
}


@dataclass(frozen=True)
class RunConfig:
    net: NetworkConfig
    train: TrainConfig
    loss: LossConfig


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Raw key -> value strings from config-file text; schema-checked."""
    entries = {}
    for lineno, raw_line in enumerate(text.splitlines(), 1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{source}:{lineno}: expected 'key = value', got {raw_line!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in SCHEMA:
            raise ConfigurationError(f"{source}:{lineno}: unknown config key {key!r}")
        if key in entries:
            raise ConfigurationError(f"{source}:{lineno}: duplicate config key {key!r}")
        entries[key] = value
    return entries


def parse_config_file(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config file {path}: {exc}") from exc
    return parse_config_text(text, source=str(path))


def build_run_config(entries: dict) -> RunConfig:
    """Typed RunConfig from raw entries; anything absent takes its default."""
    typed = {}
    for key, raw in entries.items():
        if key not in SCHEMA:
            raise ConfigurationError(f"unknown config key {key!r}")
        try:
            typed[key] = SCHEMA[key](raw) if isinstance(raw, str) else raw
        except (ValueError, TypeError) as exc:
            raise ConfigurationError(f"bad value for {key}: {raw!r} ({exc})") from exc

    def pick(prefix, cls, **extra):
        kwargs = {k.split(".", 1)[1]: v for k, v in typed.items() if k.startswith(prefix)}
        kwargs.update(extra)
        return cls(**kwargs)

    return RunConfig(net=pick("net.", NetworkConfig),
                     train=pick("train.", TrainConfig),
                     loss=pick("loss.", LossConfig))


def flatten_run_config(rc: RunConfig) -> dict:
    """Canonical str -> str form (the checkpoint echo and config-file writer)."""
    net, tr, lo = rc.net, rc.train, rc.loss
    return {
        "net.feature_maps": str(net.feature_maps),
        "net.blocks_per_branch": str(net.blocks_per_branch),
        "net.se_reduction": str(net.se_reduction),
        "net.image_channels": str(net.image_channels),
        "net.dilations": ",".join(str(d) for d in net.dilations),
        "train.epochs": str(tr.epochs),
        "train.iterations_per_epoch": str(tr.iterations_per_epoch),
        "train.batch_size": str(tr.batch_size),
        "train.lr0": repr(tr.lr0),
        "train.lr_halving_period_epochs": str(tr.lr_halving_period_epochs),
        "train.crop_size": str(tr.crop_size),
        "train.seed": str(tr.seed),
        "train.checkpoint_every": str(tr.checkpoint_every),
        "train.detail_branch": "true" if tr.detail_branch else "false",
        "loss.lambda1": repr(lo.lambda1),
        "loss.lambda2": repr(lo.lambda2),
    }


def run_config_from_checkpoint(config_echo: dict) -> RunConfig:
    entries = {k: v for k, v in config_echo.items() if k in SCHEMA}
    return build_run_config(entries)
