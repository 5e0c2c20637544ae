# config.py — validated settings: defaults < HYGIENEFEAT_* environment < --config file
import logging
import os
from pathlib import Path
from typing import Any, Dict, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from hygienefeat.errors import ConfigError

logger = logging.getLogger(__name__)

ENV_PREFIX = "HYGIENEFEAT_"
LOG_LEVEL = os.getenv("HYGIENEFEAT_LOG_LEVEL", "INFO")


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class CornerConfig(_Section):
    harris_k: float = Field(0.04, gt=0, lt=0.25)
    window_sigma: float = Field(1.0, gt=0)
    quality_level: float = Field(0.01, gt=0, le=1)
    max_corners: int = Field(100, ge=1)
    min_distance: float = Field(10.0, ge=0)
    # replaces quality_level * max(response) when set
    absolute_threshold: Optional[float] = None


class SiftConfig(_Section):
    scales_per_octave: int = Field(3, ge=1)
    base_sigma: float = Field(1.6, gt=0)
    assumed_blur: float = Field(0.5, ge=0)
    upsample: bool = True
    contrast_threshold: float = Field(0.03, ge=0)
    edge_r: float = Field(10.0, gt=1)
    border: int = Field(5, ge=1)
    refine_iterations: int = Field(5, ge=1)
    orientation_bins: int = Field(36, ge=4)
    orientation_peak_ratio: float = Field(0.8, gt=0, le=1)
    orientation_sigma_factor: float = Field(1.5, gt=0)
    descriptor_width: int = Field(4, ge=1)
    descriptor_bins: int = Field(8, ge=1)
    descriptor_scale: float = Field(3.0, gt=0)
    descriptor_clamp: float = Field(0.2, gt=0, le=1)
    match_ratio: float = Field(0.8, gt=0, lt=1)


class SegmentationConfig(_Section):
    blur_sigma: float = Field(2.0, gt=0)
    threshold: int = Field(50, ge=0, le=255)
    y_min: int = Field(40, ge=0, le=255)
    cb_min: int = Field(77, ge=0, le=255)
    cb_max: int = Field(127, ge=0, le=255)
    cr_min: int = Field(133, ge=0, le=255)
    cr_max: int = Field(173, ge=0, le=255)
    # centroid on the whole skin mask instead of the largest filled component
    use_full_mask: bool = False


class ProtocolConfig(_Section):
    tol_px: float = Field(3.0, gt=0)
    verdict_ratio: float = Field(0.5, ge=0, le=1)
    rotation_deg: float = 90.0
    scale_factor: float = Field(0.5, gt=0)
    gain: float = Field(1.3, gt=0)
    bias: float = 20.0
    min_keypoints: int = Field(10, ge=1)
    texture_size: int = Field(512, ge=64)


class PipelineConfig(_Section):
    fps: float = Field(29.84, gt=0)
    area_fraction: float = Field(0.02, ge=0, le=1)
    min_pause_frames: int = Field(15, ge=1)
    workers: int = Field(1, ge=1)


class Settings(_Section):
    corners: CornerConfig = Field(default_factory=CornerConfig)
    sift: SiftConfig = Field(default_factory=SiftConfig)
    segmentation: SegmentationConfig = Field(default_factory=SegmentationConfig)
    protocol: ProtocolConfig = Field(default_factory=ProtocolConfig)
    pipeline: PipelineConfig = Field(default_factory=PipelineConfig)


def _parse_value(raw: str) -> Any:
    text = raw.strip()
    lowered = text.lower()
    if lowered in ("true", "yes", "on"):
        return True
    if lowered in ("false", "no", "off"):
        return False
    if lowered in ("none", "null", ""):
        return None
    return text  # pydantic coerces numeric strings


def parse_overrides(text: str, source: str = "<config>") -> Dict[str, Any]:
    """
    Parse `section.field=value` lines. Blank lines and `#` comments are skipped.
    """
    overrides: Dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if key.count(".") != 1:
            raise ConfigError(f"{source}:{lineno}: key must look like section.field, got {key!r}")
        overrides[key] = _parse_value(value)
    return overrides


def env_overrides(environ: Optional[Dict[str, str]] = None) -> Dict[str, Any]:
    environ = os.environ if environ is None else environ
    overrides: Dict[str, Any] = {}
    for name, value in environ.items():
        if not name.startswith(ENV_PREFIX) or "__" not in name:
            continue
        section, field = name[len(ENV_PREFIX):].lower().split("__", 1)
        overrides[f"{section}.{field}"] = _parse_value(value)
    return overrides


def apply_overrides(settings: Settings, overrides: Dict[str, Any]) -> Settings:
    data = settings.model_dump()
    for key, value in overrides.items():
        section, field = key.split(".", 1)
        if section not in data:
            raise ConfigError(f"unknown config section {section!r}")
        if field not in data[section]:
            raise ConfigError(f"unknown config key {key!r}")
        data[section][field] = value
    try:
        return Settings.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"invalid configuration: {e.errors(include_url=False)}") from e


def load_settings(path: Optional[Union[str, Path]] = None,
                  environ: Optional[Dict[str, str]] = None) -> Settings:
    settings = apply_overrides(Settings(), env_overrides(environ))
    if path:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"cannot read config file {path}: {e}") from e
        settings = apply_overrides(settings, parse_overrides(text, source=str(path)))
        logger.debug("loaded overrides from %s", path)
    return settings
