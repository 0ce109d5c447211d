"""Pipeline configuration: ``key = value`` files with command-line overrides."""

from __future__ import annotations

import dataclasses
import math
import os
from dataclasses import dataclass, fields

from .errors import ConfigError


@dataclass
class PipelineConfig:
    """Every tunable of the reconstruction pipeline.

    Optional values left as ``None`` are derived from the data: ``f_surface``
    from the intensity histogram, ``alpha`` as 3x the median nearest-neighbour
    spacing of the projected cloud, and the implicit mesh box as one tile
    footprint at the middle of the leaf.
    """

    cloud: str | None = None
    volume: str | None = None
    control: str | None = None
    output: str | None = None
    rho_macro: float = 1e-6
    rho_micro: float = 1e-7
    capacity: int = 800
    overlap: float = 1.25
    macro_capacity: int | None = None
    micro_capacity: int | None = None
    f_surface: float | None = None
    band: float = 0.1
    stride: int = 8
    R: float | None = None
    alpha: float | None = None
    h: float = 0.006
    h_macro: float | None = None
    mesh_center_y1: float | None = None
    mesh_center_y2: float = 0.0
    mesh_tiles: float = 1.0
    mesh_format: str = "obj"
    threads: int = 1
    seed: int = 0

    _positive = ("rho_micro", "capacity", "overlap", "band", "stride", "h", "threads",
                 "R", "alpha", "h_macro", "macro_capacity", "micro_capacity", "mesh_tiles")
    _nonnegative = ("rho_macro", "seed")

    def __post_init__(self):
        self.validate()

    @classmethod
    def keys(cls):
        return [f.name for f in fields(cls)]

    def validate(self):
        for k in self._positive:
            v = getattr(self, k)
            if v is not None and not v > 0:
                raise ConfigError(f"{k} must be positive, got {v}")
        for k in self._nonnegative:
            v = getattr(self, k)
            if v is not None and v < 0:
                raise ConfigError(f"{k} must be nonnegative, got {v}")
        if self.overlap <= 1:
            raise ConfigError("overlap must exceed 1")
        if self.f_surface is not None and not 0 < self.f_surface < 1:
            raise ConfigError("f_surface is a relative intensity in (0, 1)")
        if self.mesh_format not in ("obj", "ply"):
            raise ConfigError("mesh_format must be obj or ply")
        return self

    @property
    def capacity_macro(self) -> int:
        return self.macro_capacity or self.capacity

    @property
    def capacity_micro(self) -> int:
        return self.micro_capacity or self.capacity

    def replace(self, **kw) -> "PipelineConfig":
        return dataclasses.replace(self, **kw)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if v is not None:
                lines.append(f"{f.name} = {v!r}" if isinstance(v, float) else f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _field_type(name):
    for f in fields(PipelineConfig):
        if f.name == name:
            t = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", str(f.type))
            return t.replace(" | None", "")
    raise ConfigError(f"unknown configuration key {name!r}")


def coerce(name: str, raw: str):
    """Parse a textual value for configuration key ``name``."""
    kind = _field_type(name)
    text = raw.strip()
    if text.lower() in ("none", ""):
        return None
    try:
        if kind == "int":
            v = float(text)
            if not v.is_integer():
                raise ValueError
            return int(v)
        if kind == "float":
            v = float(text)
            if math.isnan(v):
                raise ValueError
            return v
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r} as {kind}") from None
    return text


def parse_config_text(text: str, source: str = "<config>") -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, val = (s.strip() for s in body.split("=", 1))
        key = key.replace("-", "_")
        if key not in PipelineConfig.keys():
            raise ConfigError(f"{source}:{lineno}: unknown configuration key {key!r}")
        out[key] = coerce(key, val)
    return out


def load_config(path=None, overrides: dict | None = None) -> PipelineConfig:
    """Config file values, then ``overrides`` (already-typed or strings).

    Relative paths inside a config file are resolved against its directory.
    """
    values = {}
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            values = parse_config_text(fh.read(), os.fspath(path))
        base = os.path.dirname(os.path.abspath(path))
        for k in ("cloud", "volume", "control", "output"):
            if values.get(k) and not os.path.isabs(values[k]):
                values[k] = os.path.join(base, values[k])
    for k, v in (overrides or {}).items():
        k = k.replace("-", "_")
        if k not in PipelineConfig.keys():
            raise ConfigError(f"unknown configuration key {k!r}")
        values[k] = coerce(k, v) if isinstance(v, str) else v
    return PipelineConfig(**values)
