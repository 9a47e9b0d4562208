"""Audit a small benchmark: overlap matrix, balance, and a candidate's admission.

    python demos/benchmark_audit.py --out audit/
"""
import argparse
import os
import tempfile

from overlapscore.analysis import admission_from_coverage, balance_report, coverage_from_matrix
from overlapscore.corruptions import CorruptionSpec
from overlapscore.pipeline import RunPlan, run_matrix
from overlapscore.render import render_heatmap
from overlapscore.scores import save_table_files

BENCHMARK = ["gaussian_noise", "pixelate", "defocus_blur", "border", "contrast"]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--candidate", default="shot_noise")
    ap.add_argument("--arch", default="cnn", choices=["mlp", "cnn"])
    ap.add_argument("--per-class", type=int, default=100)
    ap.add_argument("--out", default="audit")
    ap.add_argument("--cache-dir", default=None)
    args = ap.parse_args()

    os.makedirs(args.out, exist_ok=True)
    plan = RunPlan(
        tuple(CorruptionSpec(c) for c in [args.candidate] + BENCHMARK),
        dataset={"kind": "procshapes", "per_class": args.per_class},
        arch={"kind": args.arch},
        cache_dir=args.cache_dir or tempfile.mkdtemp(prefix="overlapscore-audit-"),
    )
    table, matrix = run_matrix(plan)
    save_table_files(matrix, os.path.join(args.out, "overlap"))
    render_heatmap(matrix, os.path.join(args.out, "heatmap.ppm"))
    print(matrix.to_csv())

    # balance is judged on the benchmark alone
    bench = matrix.permuted(BENCHMARK)
    print(balance_report(bench).to_text())

    result = admission_from_coverage(coverage_from_matrix(args.candidate, BENCHMARK, matrix))
    print(result.coverage.to_text())
    label = "overlaps" if result.decision == "reject" else "undefined"
    partners = f" ({label}: {', '.join(result.partners)})" if result.partners else ""
    print(f"decision for {args.candidate}: {result.decision}{partners}")


if __name__ == "__main__":
    main()
