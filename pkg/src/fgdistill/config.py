"""Flat key = value run configuration with lossless text round-tripping."""

from __future__ import annotations

from dataclasses import dataclass, fields

from .errors import ConfigError
from .fileio import atomic_write_text, format_float
from .losses import ABLATION_MODES, FgdHyperParams, PRESETS, preset as preset_hp


@dataclass
class RunConfig:
    preset: str = "anchor-one-stage"
    mode: str = "full"
    temperature: float = 0.5
    seed: int = 0
    steps: int = 500
    batch_size: int = 2
    image_size: int = 16
    max_rects: int = 3
    min_rects: int = 1
    noise_amp: float = 0.05
    contrast: float = 1.0
    scene_pool_size: int = 2
    levels: int = 2
    teacher_channels: int = 8
    student_channels: int = 4
    lr: float = 0.01
    teacher_pretrain_steps: int = 200
    mask_dump_interval: int = 100
    attention_reduction: str = "mean"
    out_dir: str = "runs/out"
    # explicit weight overrides; None falls back to the preset value
    alpha: float | None = None
    beta: float | None = None
    gamma: float | None = None
    lambda_: float | None = None


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}
_OPTIONAL_FLOATS = {"alpha", "beta", "gamma", "lambda_"}


def _parse_value(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    try:
        if key in _OPTIONAL_FLOATS:
            return float(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"cannot parse {key} = {raw!r}") from None


def parse_config(text: str) -> RunConfig:
    """Parse the flat key = value format; unknown keys are an error."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, raw = stripped.partition("=")
        key, raw = key.strip(), raw.strip()
        if key not in _FIELD_TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _parse_value(key, raw)
    config = RunConfig(**values)
    validate_config(config)
    return config


def serialize_config(config: RunConfig) -> str:
    lines = ["# fgdistill run configuration"]
    for f in fields(RunConfig):
        value = getattr(config, f.name)
        if value is None:
            continue
        if isinstance(value, float):
            value = format_float(value)
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"


def load_config(path: str) -> RunConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


def save_config(path: str, config: RunConfig):
    atomic_write_text(path, serialize_config(config))


def validate_config(config: RunConfig):
    if config.preset != "custom" and config.preset not in PRESETS:
        raise ConfigError(
            f"preset must be 'custom' or one of {sorted(PRESETS)}, got {config.preset!r}"
        )
    if config.preset == "custom":
        missing = [
            k for k in ("alpha", "beta", "gamma", "lambda_") if getattr(config, k) is None
        ]
        if missing:
            raise ConfigError(f"preset 'custom' requires explicit {missing}")
    if config.mode not in ABLATION_MODES:
        raise ConfigError(f"mode must be one of {ABLATION_MODES}, got {config.mode!r}")
    if config.temperature <= 0:
        raise ConfigError("temperature must be > 0")
    if config.steps < 0 or config.batch_size < 1 or config.scene_pool_size < 1:
        raise ConfigError("steps must be >= 0; batch_size and scene_pool_size >= 1")
    if config.levels < 1 or config.image_size % (2**config.levels) != 0:
        raise ConfigError(
            f"image_size {config.image_size} must be divisible by 2^levels"
        )
    if config.teacher_channels < 1 or config.student_channels < 1:
        raise ConfigError("channel counts must be >= 1")
    if config.lr <= 0:
        raise ConfigError("lr must be > 0")
    if config.teacher_pretrain_steps < 0 or config.mask_dump_interval < 0:
        raise ConfigError("teacher_pretrain_steps and mask_dump_interval must be >= 0")
    if config.attention_reduction not in ("mean", "sum"):
        raise ConfigError("attention_reduction must be 'mean' or 'sum'")


def hyperparams_from_config(config: RunConfig) -> FgdHyperParams:
    """Preset values with any explicit per-weight overrides applied."""
    if config.preset == "custom":
        base = FgdHyperParams(
            alpha=config.alpha,
            beta=config.beta,
            gamma=config.gamma,
            lambda_=config.lambda_,
            temperature=config.temperature,
        )
        return base
    base = preset_hp(config.preset)
    return FgdHyperParams(
        alpha=config.alpha if config.alpha is not None else base.alpha,
        beta=config.beta if config.beta is not None else base.beta,
        gamma=config.gamma if config.gamma is not None else base.gamma,
        lambda_=config.lambda_ if config.lambda_ is not None else base.lambda_,
        temperature=config.temperature,
    )
