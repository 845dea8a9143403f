"""Backbone adapters: a deterministic stub plus a plugin loader.

A backbone takes the images of one chunk and returns per-frame depth,
confidence, pinhole intrinsics, camera-to-world extrinsics, and encoder
patch tokens.  The stub needs no weights and is fully deterministic, so
format and integration tests run anywhere; a real model is plugged in as a
``module:callable`` path resolving to a callable with the same signature.
"""

from __future__ import annotations

import importlib
from dataclasses import dataclass

import numpy as np

from .errors import DeviceOutOfMemory, ModelUnavailable


@dataclass
class ChunkInference:
    """Per-frame arrays for one chunk; float32 on the wire."""

    depth: np.ndarray        # (F, H, W)
    confidence: np.ndarray   # (F, H, W)
    intrinsics: np.ndarray   # (F, 6): fx fy cx cy width height
    extrinsics: np.ndarray   # (F, 3, 4): [R|t] camera-to-world, chunk-local
    tokens: np.ndarray       # (F, K, d)

    def as_float32(self) -> dict[str, np.ndarray]:
        return {
            "depth": self.depth.astype(np.float32),
            "confidence": self.confidence.astype(np.float32),
            "intrinsics": self.intrinsics.astype(np.float32),
            "extrinsics": self.extrinsics.astype(np.float32),
            "tokens": self.tokens.astype(np.float32),
        }


class StubBackbone:
    """Deterministic stand-in: outputs depend only on image content and shape.

    Depth is a smooth function of pixel coordinates modulated by the image
    mean; tokens hash the image into a seeded random matrix.  Same images in,
    same bytes out, with no weights and no device.
    """

    def __init__(self, grid_h: int = 32, grid_w: int = 48, tokens_per_frame: int = 16,
                 token_dim: int = 64, token_layer: str = "final"):
        self.grid_h = grid_h
        self.grid_w = grid_w
        self.tokens_per_frame = tokens_per_frame
        self.token_dim = token_dim
        self.token_layer = token_layer

    def __call__(self, images: list[np.ndarray]) -> ChunkInference:
        f = len(images)
        h, w = self.grid_h, self.grid_w
        depth = np.empty((f, h, w), dtype=np.float32)
        conf = np.empty((f, h, w), dtype=np.float32)
        intr = np.empty((f, 6), dtype=np.float32)
        extr = np.zeros((f, 3, 4), dtype=np.float32)
        tokens = np.empty((f, self.tokens_per_frame, self.token_dim), dtype=np.float32)

        v, u = np.mgrid[0:h, 0:w]
        for k, img in enumerate(images):
            mean = float(np.asarray(img, dtype=np.float64).mean())
            depth[k] = 5.0 + 0.01 * mean + 1.5 * np.sin(u / 7.0 + mean) + np.cos(v / 5.0)
            conf[k] = 1.0 + 0.5 * np.cos(u / 9.0 - mean)
            intr[k] = [float(w), float(w), (w - 1) / 2.0, (h - 1) / 2.0, w, h]
            extr[k, :, :3] = np.eye(3)
            extr[k, :, 3] = [0.25 * k, 0.0, 0.0]
            digest = int(np.asarray(img, dtype=np.uint64).sum() % (2**32))
            rng = np.random.default_rng([digest, k])
            tokens[k] = rng.normal(size=(self.tokens_per_frame, self.token_dim))
        return ChunkInference(depth, conf, intr, extr, tokens)


def load_backbone(spec: str, token_layer: str = "final"):
    """Resolve a backbone: ``stub`` or an importable ``module:callable`` path."""
    if spec == "stub":
        return StubBackbone(token_layer=token_layer)
    module_name, _, attr = spec.partition(":")
    if not attr:
        raise ModelUnavailable(f"backbone spec {spec!r} is not 'stub' or 'module:callable'")
    try:
        module = importlib.import_module(module_name)
        factory = getattr(module, attr)
    except (ImportError, AttributeError) as exc:
        raise ModelUnavailable(f"cannot load backbone {spec!r}: {exc}") from exc
    try:
        return factory(token_layer=token_layer)
    except TypeError:
        return factory()


def run_backbone(backbone, images: list[np.ndarray]) -> ChunkInference:
    """Invoke inference, mapping device memory failures to a typed error."""
    try:
        return backbone(images)
    except MemoryError as exc:
        raise DeviceOutOfMemory(
            f"backbone ran out of memory on a {len(images)}-frame chunk; "
            "retry with a smaller chunk_size"
        ) from exc
