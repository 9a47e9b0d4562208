"""Benchmark audits built on overlap matrices.

* balance: does any corruption overlap much more with the rest than others?
* coverage: is a candidate corruption already implied by a benchmark?
* admission: add a candidate only if it overlaps with no benchmark member.
* partition CE comparison: mean CE of models on two disjoint corruption sets,
  with deltas against the standard model.
"""
from __future__ import annotations

import csv
import io
import json
import math
import statistics
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Mapping, Sequence

from .corruptions import CorruptionSpec
from .scores import (
    STANDARD,
    AccuracyTable,
    OverlapMatrix,
    ScoreError,
    ce_score,
    mean_overlap_per_corruption,
)

DEFAULT_BALANCE_THRESHOLD = 0.2
DEFAULT_COVERAGE_TAU = 0.1
DEFAULT_COVERAGE_SEEDS = 3

BALANCED = "balanced"
UNBALANCED = "unbalanced"
COVERED = "covered"
NOT_COVERED = "not_covered"
INCONCLUSIVE = "inconclusive"


def replicate_seed(master_seed: int, k: int) -> int:
    """Master seed of replicate ``k`` (replicate 0 is the plan's own seed)."""
    return master_seed + k


# -- balance ----------------------------------------------------------------

@dataclass
class BalanceReport:
    ranking: list[tuple[str, float]]
    dispersion: float | None
    threshold: float
    verdict: str
    excluded: dict[str, int] = field(default_factory=dict)
    flagged: list[str] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "ranking": [{"corruption": c, "mean_overlap": m} for c, m in self.ranking],
            "dispersion": self.dispersion,
            "threshold": self.threshold,
            "verdict": self.verdict,
            "excluded_cells": self.excluded,
            "flagged": self.flagged,
        }

    def to_text(self) -> str:
        lines = [f"{'corruption':<28} mean_overlap"]
        lines += [f"{c:<28} {m:.3f}" for c, m in self.ranking]
        for c in self.flagged:
            lines.append(f"{c:<28} (no valid cells)")
        disp = "n/a" if self.dispersion is None else f"{self.dispersion:.3f}"
        lines.append(f"dispersion {disp} (threshold {self.threshold}): {self.verdict}")
        return "\n".join(lines) + "\n"


def balance_report(matrix: OverlapMatrix, threshold: float = DEFAULT_BALANCE_THRESHOLD) -> BalanceReport:
    """Rank corruptions by mean overlap; unbalanced when max - min > threshold."""
    if len(matrix.ids) < 3:
        raise ScoreError(f"balance needs at least 3 corruptions, got {len(matrix.ids)}")
    means = mean_overlap_per_corruption(matrix)
    usable = {c: m.mean for c, m in means.items() if not m.flagged}
    ranking = sorted(usable.items(), key=lambda kv: (-kv[1], kv[0]))
    flagged = sorted(c for c, m in means.items() if m.flagged)
    excluded = {c: m.n_excluded for c, m in sorted(means.items())}
    if len(usable) < 2:
        return BalanceReport(ranking, None, threshold, INCONCLUSIVE, excluded, flagged)
    dispersion = max(usable.values()) - min(usable.values())
    verdict = UNBALANCED if dispersion > threshold else BALANCED
    return BalanceReport(ranking, dispersion, threshold, verdict, excluded, flagged)


# -- coverage and admission -------------------------------------------------

@dataclass
class CoverageReport:
    candidate: str
    scores: dict[str, float | None]
    tau: float
    verdict: str
    undefined: list[str] = field(default_factory=list)
    overlapping: list[str] = field(default_factory=list)
    seed_scores: dict[str, list[float | None]] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def to_text(self) -> str:
        lines = [f"candidate {self.candidate} (tau = {self.tau})"]
        for c, s in self.scores.items():
            lines.append(f"  {c:<28} {'undefined' if s is None else f'{s:.3f}'}")
        lines.append(f"verdict: {self.verdict}")
        if self.undefined:
            lines.append(f"undefined pairs: {', '.join(self.undefined)}")
        return "\n".join(lines) + "\n"


def coverage_from_scores(candidate: str, scores: Mapping[str, float | None], tau: float = DEFAULT_COVERAGE_TAU) -> CoverageReport:
    """Verdict from the candidate's overlap with each benchmark corruption.

    Any undefined pair makes the verdict inconclusive. Otherwise the candidate
    is not covered iff every score is <= tau. A candidate that is itself a
    benchmark member is covered by definition.
    """
    scores = dict(scores)
    undefined = sorted(c for c, s in scores.items() if s is None or math.isnan(s))
    overlapping = sorted(c for c, s in scores.items() if c not in undefined and s > tau)
    if candidate in scores:
        verdict = COVERED
        overlapping = sorted(set(overlapping) | {candidate})
    elif undefined:
        verdict = INCONCLUSIVE
    elif overlapping:
        verdict = COVERED
    else:
        verdict = NOT_COVERED
    clean = {c: (None if c in undefined else float(s)) for c, s in scores.items()}
    return CoverageReport(candidate, clean, tau, verdict, undefined, overlapping)


def coverage_from_matrix(
    candidate: str, benchmark: Sequence[str], matrix: OverlapMatrix, tau: float = DEFAULT_COVERAGE_TAU
) -> CoverageReport:
    scores = {}
    for b in benchmark:
        scores[b] = matrix.score(candidate, b) if matrix.valid(candidate, b) else None
    return coverage_from_scores(candidate, scores, tau)


def coverage_check(
    candidate: CorruptionSpec,
    benchmark: Sequence[CorruptionSpec],
    plan,
    tau: float = DEFAULT_COVERAGE_TAU,
    n_seeds: int = DEFAULT_COVERAGE_SEEDS,
    **run_kw,
) -> CoverageReport:
    """Run the pipeline for ``candidate`` + ``benchmark`` over ``n_seeds`` replicates.

    Each pair score is the median over replicates where it is valid; a pair
    with no valid replicate is undefined. Benchmark models are shared with any
    earlier run of the same plan through the cache.
    """
    from .pipeline import run_matrix

    bench_keys = [b.key for b in benchmark]
    specs = [candidate] + [b for b in benchmark if b.key != candidate.key]
    per_seed: dict[str, list[float | None]] = {k: [] for k in bench_keys}
    for k in range(n_seeds):
        p = replace(plan, corruptions=tuple(specs), master_seed=replicate_seed(plan.master_seed, k))
        m = run_matrix(p, **run_kw).matrix
        for b in bench_keys:
            per_seed[b].append(m.score(candidate.key, b) if m.valid(candidate.key, b) else None)
    scores = {}
    for b, vals in per_seed.items():
        ok = [v for v in vals if v is not None]
        scores[b] = statistics.median(ok) if ok else None
    report = coverage_from_scores(candidate.key, scores, tau)
    report.seed_scores = per_seed
    return report


@dataclass
class AdmissionResult:
    candidate: str
    decision: str  # "admit", "reject" or "inconclusive"
    partners: list[str]
    coverage: CoverageReport

    def to_dict(self) -> dict[str, Any]:
        return {"candidate": self.candidate, "decision": self.decision, "partners": self.partners, "coverage": self.coverage.to_dict()}


def admission_from_coverage(report: CoverageReport) -> AdmissionResult:
    if report.verdict == NOT_COVERED:
        return AdmissionResult(report.candidate, "admit", [], report)
    if report.verdict == COVERED:
        return AdmissionResult(report.candidate, "reject", list(report.overlapping), report)
    return AdmissionResult(report.candidate, INCONCLUSIVE, list(report.undefined), report)


def admission_check(
    candidate: CorruptionSpec, benchmark: Sequence[CorruptionSpec], plan, tau: float = DEFAULT_COVERAGE_TAU, **kw
) -> AdmissionResult:
    """Admit iff the candidate overlaps with no benchmark corruption."""
    return admission_from_coverage(coverage_check(candidate, benchmark, plan, tau, **kw))


# -- partitioned CE comparison ----------------------------------------------

@dataclass
class CEReport:
    """Per-model values for named columns, with deltas against ``standard``."""

    columns: list[str]
    values: dict[str, dict[str, float]]
    standard: str
    delta_columns: list[str]
    reference: str | None = None

    def delta(self, model: str, column: str) -> float:
        return self.values[model][column] - self.values[self.standard][column]

    def cell(self, model: str, column: str) -> str:
        v = self.values[model][column]
        if column not in self.delta_columns:
            return f"{v:.0f}"
        d = round(self.delta(model, column))
        return f"{v:.0f} ({d:+d})" if d else f"{v:.0f} (0)"

    def to_text(self) -> str:
        models = list(self.values)
        head = ["model"] + self.columns
        rows = [[m] + [self.cell(m, c) for c in self.columns] for m in models]
        widths = [max(len(r[i]) for r in [head] + rows) for i in range(len(head))]
        out = [" | ".join(h.ljust(w) for h, w in zip(head, widths)).rstrip()]
        out.append("-+-".join("-" * w for w in widths))
        out += [" | ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
        if self.reference:
            out.append(f"CE reference: {self.reference}")
        return "\n".join(out) + "\n"

    def to_dict(self) -> dict[str, Any]:
        return {
            "columns": self.columns,
            "values": self.values,
            "deltas": {m: {c: self.delta(m, c) for c in self.delta_columns} for m in self.values},
            "standard": self.standard,
            "reference": self.reference,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_csv(cls, text: str, standard: str, delta_columns: Sequence[str] | None = None) -> "CEReport":
        """Read an external table of already-computed scores (first column = model)."""
        rows = [r for r in csv.reader(io.StringIO(text)) if r]
        header = [h.strip() for h in rows[0][1:]]
        values = {r[0].strip(): {h: float(v) for h, v in zip(header, r[1:])} for r in rows[1:]}
        if standard not in values:
            raise ScoreError(f"standard row {standard!r} missing from table")
        return cls(header, values, standard, list(header if delta_columns is None else delta_columns))


def partition_compare(
    table: AccuracyTable,
    set1: Sequence[str],
    set2: Sequence[str],
    models: Sequence[str] | None = None,
    reference: str = STANDARD,
    standard: str = STANDARD,
    names: tuple[str, str] = ("mean_CE_set1", "mean_CE_set2"),
) -> CEReport:
    """Mean CE per model over each corruption set, relative to ``reference``'s errors."""
    set1, set2 = list(set1), list(set2)
    if not set1 or not set2:
        raise ScoreError("both corruption sets must be nonempty")
    if set(set1) & set(set2):
        raise ScoreError(f"sets overlap: {sorted(set(set1) & set(set2))}")
    missing = [c for c in set1 + set2 if c not in table.conditions]
    if missing:
        raise ScoreError(f"table has no column for {missing}")
    models = list(models) if models is not None else list(table.models)
    for m in set(models) | {reference, standard}:
        if m not in table.models:
            raise ScoreError(f"table has no row for model {m!r}")
    if standard not in models:
        models = [standard] + models

    def mean_ce(model: str, cols: list[str]) -> float:
        return float(
            sum(ce_score(1.0 - table.acc(model, c), 1.0 - table.acc(reference, c)) for c in cols) / len(cols)
        )

    values = {m: {names[0]: mean_ce(m, set1), names[1]: mean_ce(m, set2)} for m in models}
    ref_note = table.provenance.get("ce_reference", f"reference model {reference!r}")
    return CEReport(list(names), values, standard, list(names), ref_note)


__all__ = [
    "BALANCED",
    "COVERED",
    "INCONCLUSIVE",
    "NOT_COVERED",
    "UNBALANCED",
    "AdmissionResult",
    "BalanceReport",
    "CEReport",
    "CoverageReport",
    "admission_check",
    "admission_from_coverage",
    "balance_report",
    "coverage_check",
    "coverage_from_matrix",
    "coverage_from_scores",
    "partition_compare",
    "replicate_seed",
]
