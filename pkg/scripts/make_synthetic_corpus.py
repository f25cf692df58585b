"""Write the synthetic two-domain corpus used by the desk experiment.

Creates ``source/`` (tinted ellipses with ground truth), ``target/``
(inverted, blurred grayscale scenes without ground truth) and
``target_eval/`` (same rendering, with ground truth) under the output root.

Usage:
  python scripts/make_synthetic_corpus.py
  python scripts/make_synthetic_corpus.py --out data/synthetic --sequences 8 --frames 60
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

from pdat_config.settings import init_runtime, repo_root
from pdat_data.synthetic import CorpusSpec, make_synthetic_corpus


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", type=Path, default=None, help="Output root (default: <repo>/data/synthetic)")
    ap.add_argument("--sequences", type=int, default=CorpusSpec.sequences, help="Sequences per training split")
    ap.add_argument("--eval-sequences", type=int, default=CorpusSpec.eval_sequences)
    ap.add_argument("--frames", type=int, default=CorpusSpec.frames)
    ap.add_argument("--size", type=int, default=CorpusSpec.size, help="Frame side in pixels")
    ap.add_argument("--blobs", type=int, default=CorpusSpec.blobs, help="Ellipses per frame")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    init_runtime()
    out = args.out or repo_root() / "data" / "synthetic"
    spec = CorpusSpec(
        sequences=args.sequences,
        eval_sequences=args.eval_sequences,
        frames=args.frames,
        size=args.size,
        blobs=args.blobs,
        seed=args.seed,
    )
    paths = make_synthetic_corpus(out, spec)
    print(json.dumps({k: str(v) for k, v in paths.items()}, indent=2))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
