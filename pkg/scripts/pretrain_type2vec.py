"""Rebuild the bundled type2vec table from the bundled corpus.

    python scripts/pretrain_type2vec.py [--out PATH]

With the default flags the output is byte-identical to
src/c3net/data/type2vec_f64.bin.
"""

import argparse
import sys
from pathlib import Path

from c3net.cli import main

DATA = Path(__file__).resolve().parents[1] / "src" / "c3net" / "data"


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=str(DATA / "type2vec_f64.bin"))
    ap.add_argument("--seed", default="0")
    args = ap.parse_args()
    sys.exit(main(["--seed", args.seed, "type2vec-train", "--corpus", str(DATA / "corpus.sdf"),
                   "--dim", "64", "--out", args.out]))
