"""Every corruption family at severities 1 to 5 on one ProcShapes image.

Writes a single PPM grid: one row per family, one column per severity, with
the clean image in the first column.

    python demos/corruption_gallery.py --out gallery.ppm
"""
import argparse

import numpy as np

from overlapscore.corruptions import CORRUPTION_IDS, CorruptionSpec, apply
from overlapscore.data import generate_procshapes
from overlapscore.imagecore import SeededRng, write_ppm


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="gallery.ppm")
    ap.add_argument("--index", type=int, default=3, help="test image to corrupt")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    _, test = generate_procshapes(classes=10, per_class=20, side=32)
    img = test.images[args.index].astype(np.float64)
    pad = 2
    side = img.shape[0] + pad
    grid = np.ones((side * len(CORRUPTION_IDS), side * 6, 3))
    for r, cid in enumerate(CORRUPTION_IDS):
        row = [img] + [apply(CorruptionSpec(cid, s), img, SeededRng(args.seed).derive(cid, s)) for s in range(1, 6)]
        for c, tile in enumerate(row):
            grid[r * side:r * side + img.shape[0], c * side:c * side + img.shape[1]] = tile
        print(f"{r:2d} {cid}")
    write_ppm(grid, args.out)
    print(f"wrote {args.out} ({grid.shape[1]}x{grid.shape[0]})")


if __name__ == "__main__":
    main()
