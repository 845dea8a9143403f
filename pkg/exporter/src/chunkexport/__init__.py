"""Adapter that runs a feed-forward reconstruction backbone over an image
sequence and serializes per-chunk depth, confidence, intrinsics, extrinsics,
and encoder patch tokens in the stitcher's manifest/tensor formats.
"""

from .export import ExportJob, export_chunks

__all__ = ["ExportJob", "export_chunks"]
__version__ = "0.1.0"
