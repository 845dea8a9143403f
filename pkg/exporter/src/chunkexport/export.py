"""Chunked inference over an image sequence, serialized to chunk manifests.

Chunk windows follow the stitcher's sliding-window rule (the t-th window
starts at t*(chunk_size - overlap); the final one is shifted back to end at
the last frame), so downstream loading sees exactly the frame ranges it
expects.  One chunk is inferred at a time and written before the next.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .backbone import load_backbone, run_backbone
from .errors import UnreadableImage
from .tensor_writer import write_chunk_manifest

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


@dataclass
class ExportJob:
    image_dir: str
    out_dir: str
    chunk_size: int = 75
    overlap: int = 30
    device: str = "cpu"
    model: str = "stub"  # or "module:callable"
    token_layer: str = "final"
    # optional loop-centric batches: list of explicit frame-id lists
    loop_batches: list[list[int]] = field(default_factory=list)
    loop_chunk_size: int = 40

    def __post_init__(self) -> None:
        if not (0 < self.overlap < self.chunk_size):
            raise ValueError(f"need 0 < overlap < chunk_size, got {self.overlap}, {self.chunk_size}")


def chunk_windows(n_frames: int, chunk_size: int, overlap: int) -> list[tuple[int, int]]:
    if chunk_size > n_frames:
        raise ValueError(f"chunk_size={chunk_size} exceeds {n_frames} frames")
    stride = chunk_size - overlap
    windows = []
    t = 0
    while True:
        start = t * stride
        end = start + chunk_size
        if end >= n_frames:
            windows.append((max(0, n_frames - chunk_size), n_frames))
            return windows
        windows.append((start, end))
        t += 1


def list_images(image_dir: str | Path) -> list[Path]:
    paths = sorted(
        p for p in Path(image_dir).iterdir()
        if p.suffix.lower() in IMAGE_SUFFIXES
    )
    if not paths:
        raise UnreadableImage(f"{image_dir}: no image files found")
    return paths


def load_image(path: Path) -> np.ndarray:
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("L"), dtype=np.float32)
    except (OSError, UnidentifiedImageError) as exc:
        raise UnreadableImage(f"{path}: {exc}") from exc


def loop_batch_frames(i: int, j: int, loop_chunk_size: int, n_frames: int) -> list[int]:
    """Two windows centered on the loop frames, deduplicated, i-segment first."""
    half = loop_chunk_size // 2

    def window(center: int) -> range:
        if n_frames <= half:
            return range(0, n_frames)
        start = min(max(center - half // 2, 0), n_frames - half)
        return range(start, start + half)

    seen: dict[int, None] = {}
    for fid in list(window(i)) + list(window(j)):
        seen.setdefault(fid)
    return list(seen)


def export_chunks(job: ExportJob) -> list[Path]:
    """Run the backbone chunk by chunk; returns the written manifest paths."""
    backbone = load_backbone(job.model, token_layer=job.token_layer)
    images = list_images(job.image_dir)
    n_frames = len(images)
    out = Path(job.out_dir)

    manifests = []
    for chunk_id, (start, end) in enumerate(chunk_windows(n_frames, job.chunk_size, job.overlap)):
        frames = [load_image(p) for p in images[start:end]]
        result = run_backbone(backbone, frames)
        manifests.append(write_chunk_manifest(
            out, chunk_id, list(range(start, end)), result.as_float32()))
        log.info("chunk %d: frames [%d, %d) -> %s", chunk_id, start, end, manifests[-1].name)

    for k, batch in enumerate(job.loop_batches):
        bad = [f for f in batch if not 0 <= f < n_frames]
        if bad:
            raise ValueError(f"loop batch {k} references frames outside [0, {n_frames}): {bad}")
        frames = [load_image(images[f]) for f in batch]
        result = run_backbone(backbone, frames)
        manifests.append(write_chunk_manifest(
            out, 1000 + k, batch, result.as_float32(), kind="loop"))
        log.info("loop chunk %d: %d frames -> %s", k, len(batch), manifests[-1].name)
    return manifests
