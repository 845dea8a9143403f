"""Command-line front end for chunked export.

Examples:
  chunk-export --images seq/ --out-dir chunks/ --chunk-size 75 --overlap 30
  chunk-export --images seq/ --out-dir chunks/ --loops run/loops.json
"""

from __future__ import annotations

import argparse
import json
import logging
from pathlib import Path

from .export import ExportJob, export_chunks, list_images, loop_batch_frames


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="chunk-export",
        description="Run the reconstruction backbone over an image sequence "
                    "and write per-chunk tensor manifests",
    )
    parser.add_argument("--images", required=True, help="directory of input frames")
    parser.add_argument("--out-dir", required=True)
    parser.add_argument("--chunk-size", type=int, default=75)
    parser.add_argument("--overlap", type=int, default=30)
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--model", default="stub",
                        help="'stub' or a module:callable backbone factory")
    parser.add_argument("--token-layer", default="final",
                        help="which encoder layer's patch tokens to export")
    parser.add_argument("--loops", default=None,
                        help="loops.json from the stitcher; exports loop-centric chunks "
                             "for each candidate pair")
    parser.add_argument("--loop-chunk-size", type=int, default=40)
    args = parser.parse_args(argv)

    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    loop_batches = []
    if args.loops:
        candidates = json.loads(Path(args.loops).read_text()).get("candidates", [])
        n_frames = len(list_images(args.images))
        loop_batches = [
            loop_batch_frames(c["frame_i"], c["frame_j"], args.loop_chunk_size, n_frames)
            for c in candidates
        ]

    job = ExportJob(
        image_dir=args.images, out_dir=args.out_dir,
        chunk_size=args.chunk_size, overlap=args.overlap,
        device=args.device, model=args.model, token_layer=args.token_layer,
        loop_batches=loop_batches, loop_chunk_size=args.loop_chunk_size,
    )
    manifests = export_chunks(job)
    print(f"wrote {len(manifests)} manifests to {args.out_dir}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
