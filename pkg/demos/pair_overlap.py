"""Overlap of two corruptions, from training to score.

Trains three small models (standard, one per corruption), evaluates them on
both corrupted test sets and prints the robustness table and the score terms.
The defaults use the CNN on a reduced ProcShapes set (100 images per class) so
it finishes in about a minute; pass --per-class 200 for the full setting.

    python demos/pair_overlap.py gaussian_noise shot_noise
    python demos/pair_overlap.py gaussian_noise border
"""
import argparse
import tempfile

from overlapscore.corruptions import CorruptionSpec
from overlapscore.pipeline import RunPlan, run_matrix, run_pair


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("c1")
    ap.add_argument("c2")
    ap.add_argument("--arch", default="cnn", choices=["mlp", "cnn"])
    ap.add_argument("--per-class", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--cache-dir", default=None, help="defaults to a throwaway directory")
    args = ap.parse_args()

    cache = args.cache_dir or tempfile.mkdtemp(prefix="overlapscore-demo-")
    plan = RunPlan(
        (CorruptionSpec(args.c1), CorruptionSpec(args.c2)),
        dataset={"kind": "procshapes", "per_class": args.per_class},
        arch={"kind": args.arch},
        master_seed=args.seed,
        cache_dir=cache,
    )
    table = run_matrix(plan).table
    print(table.to_csv())
    for model in table.models:
        r = ", ".join(f"R({c})={table.robustness(model, c):.3f}" for c in table.corruptions)
        print(f"{model:<16} {r}")

    # second call is served entirely from the cache
    pair = run_pair(plan, args.c1, args.c2)
    t = pair.terms
    print(f"\ncross-gain ratios: {t.ratio_c2:.3f} on {args.c2}, {t.ratio_c1:.3f} on {args.c1}")
    print(f"pre-clamp {t.pre_clamp:.3f}")
    print(f"O({args.c1}, {args.c2}) = {pair.score:.3f}" if pair.score is not None else f"undefined: {pair.validity}")


if __name__ == "__main__":
    main()
