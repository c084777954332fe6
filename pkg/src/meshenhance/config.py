"""Flat key = value pipeline configuration with strict schema checking."""

from __future__ import annotations

from dataclasses import dataclass, fields


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    resolution: int = 256
    grid_size: int = 20
    w1: float = 1.0      # appearance MSE
    w2: float = 1.0      # appearance mask
    w3: float = 0.001    # 2D field smoothness
    w4: float = 1.0      # fidelity MSE
    w5: float = 0.1      # fidelity mask
    w6: float = 1e5      # 3D Laplacian smoothness
    iterations_appearance: int = 100
    iterations_fidelity: int = 200
    iterations_camera: int = 100
    iterations_geometry: int = 100
    step_appearance: float = 0.3
    step_fidelity: float = 8e-3
    step_geometry: float = 1e-3
    sigma: float = 1.0       # soft-raster edge sharpness (pixels^2)
    gamma: float = 0.0       # depth-softmax temperature; 0 = auto from depth range
    cos_threshold: float = 0.1
    expansion_delta: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("resolution", "grid_size", "iterations_appearance",
                     "iterations_fidelity", "iterations_camera", "iterations_geometry"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.resolution < 2 or self.grid_size < 2:
            raise ConfigError("resolution and grid_size must be >= 2")
        for name in ("w1", "w2", "w3", "w4", "w5", "w6"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        for name in ("step_appearance", "step_fidelity", "step_geometry", "sigma"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be > 0")

    def to_text(self) -> str:
        lines = ["# pipeline configuration (key = value)"]
        for f in fields(self):
            lines.append(f"{f.name} = {getattr(self, f.name)!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "PipelineConfig":
        schema = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
            key, _, val = line.partition("=")
            key = key.strip()
            val = val.strip()
            if key not in schema:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            if key in kwargs:
                raise ConfigError(f"line {lineno}: duplicate key {key!r}")
            typ = int if schema[key] in (int, "int") else float
            try:
                kwargs[key] = typ(val)
            except ValueError as exc:
                raise ConfigError(f"line {lineno}: bad value for {key}: {val!r}") from exc
        return cls(**kwargs)

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_text())

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        with open(path) as fh:
            return cls.from_text(fh.read())
