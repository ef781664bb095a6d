"""Pipeline configuration: every numeric constant of the method in one place."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError

LrSchedule = tuple[tuple[int, float], ...]

# (iterations, learning rate) phases of the reference training schedule.
DEFAULT_LR_SCHEDULE: LrSchedule = ((20000, 1e-4), (30000, 1e-5), (10000, 1e-6))


@dataclass(frozen=True)
class PipelineConfig:
    """All tunable constants of the detection pipeline.

    Defaults marked "gap-fill" are choices the method leaves open; everything
    else follows the reference values.
    """

    patch_size: int = 128
    batch_size: int = 64
    batch_fg: int = 2                      # mitotic patches per batch
    batch_bg: int = 62                     # background patches per batch
    lr_schedule: LrSchedule = DEFAULT_LR_SCHEDULE
    hnm_iteration: int = 30000             # stage boundary: hard-negative mining here
    nms_radius_final: float = 30.0
    nms_radius_hnm: float = 50.0
    window_size: int = 512
    pad: int = 64                          # mirrored apron around inference windows
    window_overlap: int = 120
    score_threshold: float = 0.5
    match_radius: float = 30.0
    bg_rand_min_dist: float = 64.0         # gap-fill: min distance of random negatives
    bg_rand_per_image: int = 50            # gap-fill: BG-Rand patches sampled per HPF
    fg_mix_lab: int = 1                    # gap-fill: FG-Lab share of foreground draws
    fg_mix_wsi: int = 1                    # gap-fill: FG-WSI share of foreground draws
    contrast_transfer_prob: float = 0.5    # gap-fill
    wsi_skip_mean_rgb: float = 230.0       # gap-fill: white-window skip threshold
    wsi_first_pass_threshold: float = 0.5  # gap-fill: skip TTA when first pass is weak
    tta_keep_threshold: float = 0.9        # gap-fill: min consensus score to keep a mine
    rng_seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        positive = {
            "patch_size": self.patch_size,
            "batch_size": self.batch_size,
            "batch_fg": self.batch_fg,
            "batch_bg": self.batch_bg,
            "nms_radius_final": self.nms_radius_final,
            "nms_radius_hnm": self.nms_radius_hnm,
            "window_size": self.window_size,
            "pad": self.pad,
            "window_overlap": self.window_overlap,
            "score_threshold": self.score_threshold,
            "match_radius": self.match_radius,
            "bg_rand_min_dist": self.bg_rand_min_dist,
            "bg_rand_per_image": self.bg_rand_per_image,
        }
        for name, value in positive.items():
            if value <= 0:
                raise ConfigError(f"{name} must be positive, got {value}")
        if self.batch_fg + self.batch_bg != self.batch_size:
            raise ConfigError(
                f"batch ratio {self.batch_fg}:{self.batch_bg} does not sum to "
                f"batch_size {self.batch_size}")
        if self.window_overlap >= self.window_size:
            raise ConfigError("window_overlap must be smaller than window_size")
        if not self.lr_schedule or any(n <= 0 or lr <= 0 for n, lr in self.lr_schedule):
            raise ConfigError("lr_schedule must be non-empty with positive spans and rates")
        if not (0 < self.hnm_iteration <= self.total_iterations):
            raise ConfigError("hnm_iteration must lie within the schedule span")
        for name in ("contrast_transfer_prob",):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ConfigError(f"{name} must be in [0, 1], got {v}")
        if self.fg_mix_lab < 0 or self.fg_mix_wsi < 0 or self.fg_mix_lab + self.fg_mix_wsi == 0:
            raise ConfigError("foreground mix ratio must have a positive total")

    @property
    def total_iterations(self) -> int:
        return sum(n for n, _ in self.lr_schedule)

    def scaled(self, total_iterations: int) -> "PipelineConfig":
        """Shrink the schedule proportionally, keeping its 3-phase structure.

        Phase learning rates are unchanged; spans scale with the new total and
        the mining boundary moves to total/2.
        """
        if total_iterations <= 0:
            raise ConfigError("total_iterations must be positive")
        old_total = self.total_iterations
        spans = [max(1, round(n * total_iterations / old_total)) for n, _ in self.lr_schedule]
        # Fix rounding drift on the largest phase so spans sum exactly.
        drift = total_iterations - sum(spans)
        spans[spans.index(max(spans))] += drift
        if min(spans) <= 0:
            raise ConfigError(f"total_iterations {total_iterations} too small for "
                              f"{len(spans)} schedule phases")
        schedule = tuple((n, lr) for n, (_, lr) in zip(spans, self.lr_schedule))
        return dataclasses.replace(self, lr_schedule=schedule,
                                   hnm_iteration=max(1, total_iterations // 2))

    def replace(self, **kwargs) -> "PipelineConfig":
        return dataclasses.replace(self, **kwargs)


def _parse_lr_schedule(text: str) -> LrSchedule:
    # "20000:1e-4,30000:1e-5,10000:1e-6"
    phases = []
    for part in text.split(","):
        span, _, lr = part.partition(":")
        try:
            phases.append((int(span), float(lr)))
        except ValueError as exc:
            raise ConfigError(f"bad lr_schedule phase {part!r}: {exc}") from exc
    return tuple(phases)


_FIELD_PARSERS = {
    "lr_schedule": _parse_lr_schedule,
    "total_iterations": int,  # convenience: rescales the schedule via scaled()
}


def apply_overrides(config: PipelineConfig, overrides: dict[str, str]) -> PipelineConfig:
    """Apply ``key=value`` overrides with type coercion from the field types."""
    total = None
    updates = {}
    fields = {f.name: f for f in dataclasses.fields(PipelineConfig)}
    for key, raw in overrides.items():
        if key == "total_iterations":
            total = int(raw)
            continue
        if key not in fields:
            raise ConfigError(f"unknown config key {key!r}")
        if key in _FIELD_PARSERS:
            updates[key] = _FIELD_PARSERS[key](raw)
            continue
        current = getattr(config, key)
        caster = type(current)
        try:
            updates[key] = caster(raw)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}") from exc
    out = config.replace(**updates) if updates else config
    if total is not None:
        out = out.scaled(total)
    return out


def config_to_dict(config: PipelineConfig) -> dict:
    d = dataclasses.asdict(config)
    d["lr_schedule"] = [[n, lr] for n, lr in config.lr_schedule]
    return d


def config_from_dict(d: dict) -> PipelineConfig:
    d = dict(d)
    if "lr_schedule" in d:
        d["lr_schedule"] = tuple((int(n), float(lr)) for n, lr in d["lr_schedule"])
    known = {f.name for f in dataclasses.fields(PipelineConfig)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return PipelineConfig(**d)


def save_config(config: PipelineConfig, path: Path | str, extra: dict | None = None) -> None:
    payload = {"pipeline": config_to_dict(config)}
    if extra:
        payload.update(extra)
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def load_config(path: Path | str) -> PipelineConfig:
    payload = json.loads(Path(path).read_text())
    return config_from_dict(payload["pipeline"])
