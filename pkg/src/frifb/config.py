"""Run configuration: one flat ``key=value`` text file, CLI flags on top.

Every field of :class:`RunConfig` is a valid key.  Blank lines and lines
starting with ``#`` are ignored.  Tuples are written comma-separated
(``stages=32,128,512``), booleans as ``true``/``false``.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, fields

from .detector import ScanParams, WindowSpec
from .fourier import FourierParams
from .parallel import default_workers
from .pyramid import PyramidParams
from .training import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # what to detect
    class_name: str = "airplane"
    class_index: int = 0  # 0 = use the standard NWPU index for class_name
    # window and features
    window_height: int = 40
    window_width: int = 40
    margin: float = 0.1
    shrink: int = 4
    max_order: int = 4
    radial_radii: tuple = (0.0, 2.0, 4.0, 6.0)
    radial_sigma_ratio: float = 0.4
    supersample: int = 5
    # pyramid
    scales_per_octave: int = 8
    min_scale: float = 0.45
    lambda_images: int = 12
    # boosting
    stages: tuple = (32, 128, 512)
    max_depth: int = 2
    alpha_mode: str = "standard"
    n_random_negatives: int = 5000
    hard_negative_cap: int = 10000
    hard_per_image: int = 25
    keep_fraction: float = 0.995
    mirror: bool = True
    jitter: int = 0
    positive_source: str = "both"
    calibration_fraction: float = 0.2
    # scanning
    stride_cells: int = 1
    score_threshold: float = 0.0
    nms_iou: float = 0.5
    use_cascade: bool = True
    # evaluation
    iou_threshold: float = 0.5
    train_fraction: float = 0.6
    # synthetic data
    synth_images: int = 160
    synth_negative_images: int = 40
    synth_test_images: int = 100
    synth_image_size: int = 192
    synth_distractors: tuple = (1, 3)
    synth_negative_distractors: tuple = (2, 5)
    # bookkeeping
    seed: int = 0
    workers: int = 0  # 0 = all available cores
    data_dir: str = ""
    annotations_dir: str = ""
    images_dir: str = ""
    negative_dir: str = ""
    model_path: str = ""
    lambda_path: str = ""
    out_dir: str = "."

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.window_height < 1 or self.window_width < 1:
            raise ConfigError("window size must be positive")
        if self.shrink < 1:
            raise ConfigError("shrink must be >= 1")
        if self.window_height % self.shrink or self.window_width % self.shrink:
            raise ConfigError("window size must be a multiple of shrink")
        if not 0 <= self.margin < 0.5:
            raise ConfigError("margin must lie in [0, 0.5)")
        if self.scales_per_octave < 1 or not 0 < self.min_scale <= 1:
            raise ConfigError("invalid pyramid parameters")
        if not self.stages or any(int(s) < 1 for s in self.stages):
            raise ConfigError("stages must be positive tree counts")
        if self.alpha_mode not in ("standard", "literal"):
            raise ConfigError(f"unknown alpha_mode {self.alpha_mode!r}")
        if self.positive_source not in ("crop", "pyramid", "both"):
            raise ConfigError(f"unknown positive_source {self.positive_source!r}")
        if not 0 < self.nms_iou < 1 or not 0 < self.iou_threshold < 1:
            raise ConfigError("IoU thresholds must lie in (0, 1)")
        if not 0 <= self.calibration_fraction < 1:
            raise ConfigError("calibration_fraction must lie in [0, 1)")
        if not 0 < self.keep_fraction <= 1:
            raise ConfigError("keep_fraction must lie in (0, 1]")
        if not 0 < self.train_fraction < 1:
            raise ConfigError("train_fraction must lie in (0, 1)")
        if self.stride_cells < 1 or self.workers < 0:
            raise ConfigError("stride_cells must be >= 1 and workers >= 0")
        if not math.isfinite(self.score_threshold):
            raise ConfigError("score_threshold must be finite")
        try:
            self.fourier_params()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    # --- derived parameter objects ---------------------------------------
    def fourier_params(self) -> FourierParams:
        return FourierParams(self.max_order, tuple(float(r) for r in self.radial_radii), self.radial_sigma_ratio,
                             self.supersample)

    def window_spec(self) -> WindowSpec:
        return WindowSpec((self.window_height, self.window_width), self.margin, self.shrink, self.fourier_params())

    def pyramid_params(self) -> PyramidParams:
        return PyramidParams(self.scales_per_octave, self.min_scale)

    def scan_params(self) -> ScanParams:
        return ScanParams(self.stride_cells, self.score_threshold, self.nms_iou)

    def train_config(self) -> TrainConfig:
        return TrainConfig(window_spec=self.window_spec(), stages=tuple(int(s) for s in self.stages),
                           max_depth=self.max_depth, n_random_negatives=self.n_random_negatives,
                           hard_negative_cap=self.hard_negative_cap, hard_per_image=self.hard_per_image,
                           keep_fraction=self.keep_fraction, alpha_mode=self.alpha_mode,
                           pyramid=self.pyramid_params(), seed=self.seed, label=self.class_name,
                           mirror=self.mirror, jitter=self.jitter, positive_source=self.positive_source,
                           calibration_fraction=self.calibration_fraction, workers=self.n_workers)

    @property
    def n_workers(self) -> int:
        return self.workers or default_workers()

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        return "".join(f"{f.name}={_format(getattr(self, f.name))}\n" for f in fields(self))


def _format(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(_format(x) for x in v)
    return str(v)


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _convert(key, raw: str):
    default = _FIELDS[key].default
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            kind = type(default[0]) if default else float
            return tuple(kind(p) for p in raw.split(",") if p.strip())
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r}") from None
    return raw


def parse_config_text(text: str, source="<config>") -> dict:
    """``key=value`` lines to a dict of typed values (unknown keys are errors)."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {line!r}")
        key, raw = (p.strip() for p in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        values[key] = _convert(key, raw)
    return values


def load_config(path=None, **overrides) -> RunConfig:
    """Defaults, then the file at ``path``, then non-None ``overrides``."""
    values = {}
    if path:
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        values.update(parse_config_text(text, str(path)))
    for k, v in overrides.items():
        if v is None:
            continue
        if k not in _FIELDS:
            raise ConfigError(f"unknown config key {k!r}")
        values[k] = v
    return RunConfig(**values)
