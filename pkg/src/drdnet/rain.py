"""Synthetic rain: streak-layer rendering and the additive/atmospheric composition.

The observation model is O = clamp(alpha * (B + S) + (1 - alpha) * A) with S the
clamped sum of per-layer streak fields replicated to 3 channels; alpha = 1 reduces
it to the plain additive model bit-identically (1*x + 0*A is exact). The returned
ground-truth residual is defined as R = O - B after clamping, computed in float64,
so a rain branch that predicts R perfectly reproduces B exactly, saturation or not.

Streaks are anti-aliased line segments: a Gaussian cross-profile around a random
center/angle/length, accumulated additively and clamped to [0, 1]. The per-layer
draw order (center x, center y, angle, length, intensity) is fixed, and every
sample of a dataset gets its own generator derived from (seed, index), so worker
count never changes outputs.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DataError, DimensionError
from .pngio import load_image, save_image
from .rand import derive_rng

_ANGLE_JITTER_DEG = 2.0
_LENGTH_JITTER = (0.75, 1.25)
_INTENSITY_JITTER = (0.6, 1.0)


@dataclass(frozen=True)
class StreakLayer:
    direction_deg: float     # degrees away from vertical fall
    length_px: float
    width_px: float
    density_per_kpx: float   # expected streak count per 1000 pixels
    intensity: float

    def __post_init__(self):
        if self.length_px <= 0 or self.width_px <= 0:
            raise ConfigurationError("streak length/width must be positive")
        if self.density_per_kpx < 0:
            raise ConfigurationError("density must be >= 0")
        if not 0.0 <= self.intensity <= 1.0:
            raise ConfigurationError("intensity must be in [0, 1]")


@dataclass(frozen=True)
class RainSpec:
    layers: tuple = ()
    alpha: float = 1.0
    atmo_light: tuple = (1.0, 1.0, 1.0)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "atmo_light", tuple(float(v) for v in self.atmo_light))
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigurationError(f"alpha must be in [0, 1], got {self.alpha}")
        if len(self.atmo_light) != 3 or any(not 0.0 <= v <= 1.0 for v in self.atmo_light):
            raise ConfigurationError(f"atmospheric light must be 3 values in [0,1]")
        directions = [layer.direction_deg for layer in self.layers]
        if len(set(directions)) != len(directions):
            raise ConfigurationError("per-layer directions must be distinct")


def synth_streak_layer(h: int, w: int, layer: StreakLayer,
                       rng: np.random.Generator) -> np.ndarray:
    """Render one streak layer as an (h, w) float64 field in [0, 1]."""
    if h < 1 or w < 1:
        raise ConfigurationError(f"canvas must be at least 1x1, got {h}x{w}")
    canvas = np.zeros((h, w), dtype=np.float64)
    count = int(round(layer.density_per_kpx * h * w / 1000.0))
    sigma = max(layer.width_px, 0.5) / 2.0
    reach = 3.0 * sigma
    for _ in range(count):
        cx = rng.uniform(0.0, w - 1.0)
        cy = rng.uniform(0.0, h - 1.0)
        ang = math.radians(layer.direction_deg + rng.normal(0.0, _ANGLE_JITTER_DEG))
        length = layer.length_px * rng.uniform(*_LENGTH_JITTER)
        inten = layer.intensity * rng.uniform(*_INTENSITY_JITTER)
        ux, uy = math.sin(ang), math.cos(ang)
        x0, y0 = cx - ux * length / 2.0, cy - uy * length / 2.0
        x1, y1 = cx + ux * length / 2.0, cy + uy * length / 2.0
        xmin = max(int(math.floor(min(x0, x1) - reach)), 0)
        xmax = min(int(math.ceil(max(x0, x1) + reach)), w - 1)
        ymin = max(int(math.floor(min(y0, y1) - reach)), 0)
        ymax = min(int(math.ceil(max(y0, y1) + reach)), h - 1)
        if xmin > xmax or ymin > ymax:
            continue
        xx = np.arange(xmin, xmax + 1, dtype=np.float64)[None, :]
        yy = np.arange(ymin, ymax + 1, dtype=np.float64)[:, None]
        vx, vy = x1 - x0, y1 - y0
        seg2 = max(vx * vx + vy * vy, 1e-12)
        t = np.clip(((xx - x0) * vx + (yy - y0) * vy) / seg2, 0.0, 1.0)
        dx = xx - (x0 + t * vx)
        dy = yy - (y0 + t * vy)
        d2 = dx * dx + dy * dy
        canvas[ymin:ymax + 1, xmin:xmax + 1] += inten * np.exp(-d2 / (2.0 * sigma * sigma))
    return np.clip(canvas, 0.0, 1.0)


def apply_rain_model(background: np.ndarray, spec: RainSpec):
    """Compose rain over a clean (3,H,W) image in [0,1].

    Returns (O, R) in float64: the rainy observation and the residual R = O - B.
    """
    bg = np.asarray(background)
    if bg.ndim != 3 or bg.shape[0] != 3:
        raise DimensionError(f"background must be (3,H,W), got {bg.shape}")
    if bg.min() < 0.0 or bg.max() > 1.0:
        raise ConfigurationError("background values must lie in [0, 1]")
    b64 = bg.astype(np.float64)
    h, w = bg.shape[1], bg.shape[2]
    field = np.zeros((h, w), dtype=np.float64)
    for idx, layer in enumerate(spec.layers):
        field += synth_streak_layer(h, w, layer, derive_rng(spec.seed, f"layer/{idx}"))
    streaks = np.clip(field, 0.0, 1.0)[None, :, :]
    atmo = np.asarray(spec.atmo_light, dtype=np.float64)[:, None, None]
    rainy = np.clip(spec.alpha * (b64 + streaks) + (1.0 - spec.alpha) * atmo, 0.0, 1.0)
    return rainy, rainy - b64


# ---------------------------------------------------------------------------
# presets and datasets

@dataclass(frozen=True)
class RainPreset:
    """Ranges a per-sample RainSpec is drawn from (uniform unless noted)."""
    name: str
    n_layers: tuple
    direction_deg: tuple
    length_px: tuple
    width_px: tuple
    density_per_kpx: tuple
    intensity: tuple
    alpha: tuple = (1.0, 1.0)
    atmo: tuple = (1.0, 1.0)

    def sample(self, rng: np.random.Generator) -> RainSpec:
        n = int(rng.integers(self.n_layers[0], self.n_layers[1] + 1))
        directions: list = []
        while len(directions) < n:
            d = float(rng.uniform(*self.direction_deg))
            if d not in directions:
                directions.append(d)
        layers = tuple(
            StreakLayer(
                direction_deg=d,
                length_px=float(rng.uniform(*self.length_px)),
                width_px=float(rng.uniform(*self.width_px)),
                density_per_kpx=float(rng.uniform(*self.density_per_kpx)),
                intensity=float(rng.uniform(*self.intensity)),
            ) for d in directions)
        alpha = float(rng.uniform(*self.alpha))
        gray = float(rng.uniform(*self.atmo))
        return RainSpec(layers=layers, alpha=alpha, atmo_light=(gray, gray, gray),
                        seed=int(rng.integers(2 ** 63)))


LIGHT = RainPreset("light", n_layers=(1, 2), direction_deg=(-20.0, 20.0),
                   length_px=(15.0, 25.0), width_px=(1.0, 1.6),
                   density_per_kpx=(0.3, 1.0), intensity=(0.15, 0.35))
HEAVY = RainPreset("heavy", n_layers=(2, 3), direction_deg=(-30.0, 30.0),
                   length_px=(25.0, 45.0), width_px=(1.2, 2.2),
                   density_per_kpx=(2.0, 5.0), intensity=(0.35, 0.7),
                   alpha=(0.75, 0.95), atmo=(0.7, 0.9))
PRESETS = {"light": LIGHT, "heavy": HEAVY}


def _format_layer(layer: StreakLayer) -> str:
    return ":".join(repr(v) for v in (layer.direction_deg, layer.length_px,
                                      layer.width_px, layer.density_per_kpx,
                                      layer.intensity))


def spec_to_manifest(spec: RainSpec) -> str:
    layers = ";".join(_format_layer(l) for l in spec.layers)
    atmo = ",".join(repr(v) for v in spec.atmo_light)
    return f"alpha={spec.alpha!r}\tatmo={atmo}\tseed={spec.seed}\tlayers={layers}"


def spec_from_manifest(text: str) -> RainSpec:
    fields = dict(part.split("=", 1) for part in text.split("\t"))
    layers = []
    if fields["layers"]:
        for chunk in fields["layers"].split(";"):
            vals = [float(v) for v in chunk.split(":")]
            layers.append(StreakLayer(*vals))
    return RainSpec(layers=tuple(layers), alpha=float(fields["alpha"]),
                    atmo_light=tuple(float(v) for v in fields["atmo"].split(",")),
                    seed=int(fields["seed"]))


@dataclass(frozen=True)
class Sample:
    sample_id: str
    rainy: np.ndarray
    clean: np.ndarray
    residual: np.ndarray


def make_dataset(backgrounds, preset: RainPreset, count: int, seed: int, workers: int = 1):
    """Draw `count` rainy/clean pairs; returns (samples, manifest_lines).

    Sample i's generator derives from (seed, i), so results are independent of
    worker count and any sample can be rebuilt from its manifest line alone.
    """
    backgrounds = list(backgrounds)
    if count < 0:
        raise ConfigurationError(f"count must be >= 0, got {count}")
    if count > 0 and not backgrounds:
        raise DataError("no backgrounds supplied")
    header = ["# drd dataset manifest", f"# preset = {preset.name}",
              f"# seed = {seed}", f"# count = {count}"]

    def build(i: int):
        rng = derive_rng(seed, f"sample/{i}")
        bg_idx = int(rng.integers(len(backgrounds)))
        spec = preset.sample(rng)
        rainy, residual = apply_rain_model(backgrounds[bg_idx], spec)
        sid = f"{i:04d}"
        line = f"{sid}\tbg={bg_idx}\t{spec_to_manifest(spec)}"
        return Sample(sid, rainy, np.asarray(backgrounds[bg_idx], dtype=np.float64),
                      residual), line

    if workers > 1 and count > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            built = list(pool.map(build, range(count)))
    else:
        built = [build(i) for i in range(count)]
    samples = [s for s, _ in built]
    manifest = header + [line for _, line in built]
    return samples, manifest


def synthetic_background(h: int, w: int, seed: int) -> np.ndarray:
    """Procedural clean image: smooth gradient plus a few blurred shapes.

    Gives the metrics real structure (edges, flat regions) without any external
    image assets.
    """
    rng = derive_rng(seed, "background")
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    theta = rng.uniform(0.0, 2.0 * math.pi)
    ramp = (xx * math.cos(theta) + yy * math.sin(theta))
    ramp = (ramp - ramp.min()) / max(ramp.max() - ramp.min(), 1e-9)
    img = np.empty((3, h, w), dtype=np.float64)
    for c in range(3):
        lo, hi = sorted(rng.uniform(0.1, 0.8, size=2))
        img[c] = lo + ramp * (hi - lo)
    for _ in range(6):
        color = rng.uniform(0.05, 0.95, size=3)
        if rng.random() < 0.5:
            cx, cy = rng.uniform(0, w), rng.uniform(0, h)
            r = rng.uniform(min(h, w) / 10.0, min(h, w) / 3.0)
            mask = ((xx - cx) ** 2 + (yy - cy) ** 2) <= r * r
        else:
            x0, x1 = sorted(rng.integers(0, w, size=2))
            y0, y1 = sorted(rng.integers(0, h, size=2))
            mask = np.zeros((h, w), dtype=bool)
            mask[y0:y1 + 1, x0:x1 + 1] = True
        blend = rng.uniform(0.5, 0.9)
        for c in range(3):
            img[c][mask] = (1.0 - blend) * img[c][mask] + blend * color[c]
    # one 3x3 box-blur pass softens shape edges
    padded = np.pad(img, ((0, 0), (1, 1), (1, 1)), mode="edge")
    blurred = np.zeros_like(img)
    for dy in (0, 1, 2):
        for dx in (0, 1, 2):
            blurred += padded[:, dy:dy + h, dx:dx + w]
    return np.clip(blurred / 9.0, 0.0, 1.0)


# dataset directories: rain/ norain/ streaks/ + manifest.txt

def write_dataset(samples, manifest_lines, root) -> None:
    """Write samples as PNG triples plus the manifest under `root`.

    streaks/ holds clip(residual, 0, 1) as a visual aid only; the exact
    residual is always recomputed from the rain/norain pair (or re-synthesized
    from the manifest line), never read back from these files.
    """
    root = Path(root)
    for sub in ("rain", "norain", "streaks"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    for s in samples:
        save_image(s.rainy, root / "rain" / f"{s.sample_id}.png")
        save_image(s.clean, root / "norain" / f"{s.sample_id}.png")
        save_image(np.clip(s.residual, 0.0, 1.0),
                   root / "streaks" / f"{s.sample_id}.png")
    (root / "manifest.txt").write_text("\n".join(manifest_lines) + "\n",
                                       encoding="ascii")


def load_dataset(root):
    """(sample_id, rainy, clean) float32 triples from a dataset directory."""
    root = Path(root)
    rain_dir = root / "rain"
    clean_dir = root / "norain"
    if not rain_dir.is_dir() or not clean_dir.is_dir():
        raise DataError(f"{root} is not a dataset directory "
                        "(needs rain/ and norain/ subdirectories)")
    ids = sorted(p.stem for p in rain_dir.glob("*.png"))
    if not ids:
        raise DataError(f"no PNG images under {rain_dir}")
    triples = []
    for sid in ids:
        clean_path = clean_dir / f"{sid}.png"
        if not clean_path.is_file():
            raise DataError(f"missing clean counterpart for {sid}: {clean_path}")
        triples.append((sid, load_image(rain_dir / f"{sid}.png"),
                        load_image(clean_path)))
    return triples


# custom presets from key = value files

_PRESET_REQUIRED = ("n_layers", "direction_deg", "length_px", "width_px",
                    "density_per_kpx", "intensity")
_PRESET_OPTIONAL = ("alpha", "atmo")


def _range_pair(raw: str, key: str, integer: bool = False) -> tuple:
    parts = [p.strip() for p in raw.split(",")]
    if len(parts) == 1:
        parts = parts * 2
    if len(parts) != 2:
        raise ConfigurationError(f"{key}: expected `value` or `lo,hi`, got {raw!r}")
    conv = int if integer else float
    try:
        lo, hi = conv(parts[0]), conv(parts[1])
    except ValueError as exc:
        raise ConfigurationError(f"{key}: {exc}") from exc
    if hi < lo:
        raise ConfigurationError(f"{key}: range is reversed ({lo} > {hi})")
    return (lo, hi)


def preset_from_text(text: str, source: str = "<preset>") -> RainPreset:
    """Parse a custom preset: one `key = value` per line, `#` comments.

    Values are either a single number or a `lo,hi` range; alpha and atmo are
    optional and default to a dry atmosphere (alpha 1).
    """
    entries: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{source}:{lineno}: expected key = value")
        key, _, value = line.partition("=")
        key = key.strip()
        if key in entries:
            raise ConfigurationError(f"{source}:{lineno}: duplicate key {key}")
        entries[key] = value.strip()
    for key in entries:
        if key not in _PRESET_REQUIRED and key not in _PRESET_OPTIONAL:
            raise ConfigurationError(f"{source}: unknown preset key {key}")
    for key in _PRESET_REQUIRED:
        if key not in entries:
            raise ConfigurationError(f"{source}: missing preset key {key}")
    kwargs = {"name": "custom",
              "n_layers": _range_pair(entries["n_layers"], "n_layers", integer=True)}
    for key in _PRESET_REQUIRED[1:]:
        kwargs[key] = _range_pair(entries[key], key)
    for key in _PRESET_OPTIONAL:
        if key in entries:
            kwargs[key] = _range_pair(entries[key], key)
    return RainPreset(**kwargs)


def preset_from_file(path) -> RainPreset:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigurationError(f"cannot read preset file {path}: {exc}") from exc
    return preset_from_text(text, source=str(path))
