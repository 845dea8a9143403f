"""Flat key-value pipeline configuration.

Every tunable of every stage is one key so parameter sweeps are plain config
edits (or repeated `--set key=value` flags).  The file format is one
`key = value` per line with `#` comments.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError


@dataclass
class PipelineConfig:
    # chunk scheduling
    chunk_size: int = 75
    overlap: int = 30
    # reliability-guided sampling
    lambda_d: float = 0.2
    lambda_gamma: float = 0.5
    min_reliable_points: int = 100
    max_align_points: int = 200_000
    # alignment
    method: str = "umeyama"  # or "irls"
    irls_max_iters: int = 10
    irls_kernel_scale: float = 1.345
    # descriptors
    beta: float = 0.5
    whitening_r: int = 1
    whitening_dim: int = 512
    # loop retrieval
    similarity_threshold: float = 0.65
    min_frame_gap: int = 150
    nms_radius: int = 25
    loop_chunk_size: int = 40
    # global optimization
    lm_max_iters: int = 100
    lm_initial_damping: float = 1e-4
    lm_damping_up: float = 10.0
    lm_damping_down: float = 0.1
    lm_cost_tolerance: float = 1e-10
    lm_step_tolerance: float = 1e-10
    # misc
    seed: int = 0
    depth_ceiling: float = 0.0  # 0 disables the export depth cutoff
    export_point_stride: int = 1

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if not (0 < self.overlap < self.chunk_size):
            raise ConfigError(f"need 0 < overlap < chunk_size, got {self.overlap}, {self.chunk_size}")
        if self.method not in ("umeyama", "irls"):
            raise ConfigError(f"method must be 'umeyama' or 'irls', got {self.method!r}")
        if not (0.0 < self.beta <= 1.0):
            raise ConfigError(f"beta must be in (0, 1], got {self.beta}")
        if self.whitening_r < 0 or self.whitening_dim < 1:
            raise ConfigError("whitening_r must be >= 0 and whitening_dim >= 1")
        if not (-1.0 <= self.similarity_threshold <= 1.0):
            raise ConfigError(f"similarity_threshold must be in [-1, 1], got {self.similarity_threshold}")
        for name in ("lambda_d", "lambda_gamma", "depth_ceiling", "min_frame_gap", "nms_radius"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative")
        for name in ("loop_chunk_size", "min_reliable_points", "max_align_points",
                     "lm_max_iters", "export_point_stride"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")

    @classmethod
    def from_file(cls, path: str | Path) -> "PipelineConfig":
        cfg = cls()
        for line in Path(path).read_text().splitlines():
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ConfigError(f"malformed config line {line!r}")
            cfg.set(key.strip(), value.strip())
        cfg.validate()
        return cfg

    def to_file(self, path: str | Path) -> None:
        lines = [f"{f.name} = {getattr(self, f.name)}" for f in fields(self)]
        Path(path).write_text("\n".join(lines) + "\n")

    def set(self, key: str, value: str) -> None:
        """Parse and assign one key=value override."""
        by_name = {f.name: f for f in fields(self)}
        if key not in by_name:
            raise ConfigError(f"unknown config key {key!r}")
        kind = by_name[key].type
        try:
            if kind == "int":
                parsed: object = int(value)
            elif kind == "float":
                parsed = float(value)
            else:
                parsed = value
        except ValueError as exc:
            raise ConfigError(f"cannot parse {key}={value!r} as {kind}") from exc
        setattr(self, key, parsed)

    def apply_overrides(self, overrides: list[str]) -> None:
        for item in overrides:
            key, sep, value = item.partition("=")
            if not sep:
                raise ConfigError(f"override {item!r} is not key=value")
            self.set(key.strip(), value.strip())
        self.validate()
