"""Robustness, overlapping and CE scores, plus the tables that carry them.

Notation used below: ``R[m][c] = A_m(c) / A_m(clean)`` is the robustness of
model ``m`` to corruption ``c``; ``m1`` and ``m2`` are the models trained with
augmentation by ``c1`` and ``c2``, and ``std`` is the model trained on clean
data only. The overlapping score of ``c1`` and ``c2`` is::

    O = max(0, 1/2 * [ (R[m1][c2] - R[std][c2]) / (R[m2][c2] - R[std][c2])
                     + (R[m2][c1] - R[std][c1]) / (R[m1][c1] - R[std][c1]) ])
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

STANDARD = "standard"
CLEAN = "clean"
DEFAULT_EPS = 1e-3

OK = "ok"
UNDEFINED_DENOMINATOR = "undefined_denominator"
NONCONVERGED_MODEL = "nonconverged_model"


class ScoreError(ValueError):
    pass


class UndefinedRobustnessError(ScoreError):
    pass


class UndefinedDenominatorError(ScoreError):
    pass


class UndefinedCEError(ScoreError):
    pass


def resolve_key(cid: str, keys: Sequence[str]) -> str:
    """``cid`` itself if present, else the single key ``cid@<severity>``."""
    if cid in keys:
        return cid
    hits = [k for k in keys if k.split("@", 1)[0] == cid]
    if len(hits) != 1:
        why = "is ambiguous among" if hits else "is not one of"
        raise ScoreError(f"{cid!r} {why} {list(hits or keys)}")
    return hits[0]


def robustness_score(a_c: float, a_clean: float) -> float:
    if not a_clean > 0:
        raise UndefinedRobustnessError(f"clean accuracy {a_clean} must be > 0")
    return a_c / a_clean


def raw_overlap(r_m2_c1: float, r_std_c1: float, r_m1_c2: float, r_std_c2: float) -> float:
    """Unnormalized sum of the two cross robustness gains."""
    return (r_m2_c1 - r_std_c1) + (r_m1_c2 - r_std_c2)


@dataclass(frozen=True)
class OverlapTerms:
    """Both normalized transfer ratios, the mean before clamping, and the score.

    ``ratio_c2`` is the gain of ``m1`` on ``c2`` over the gain of ``m2`` on ``c2``;
    ``ratio_c1`` the symmetric counterpart. ``score`` is None unless status is ok.
    """

    status: str
    ratio_c2: float | None = None
    ratio_c1: float | None = None
    pre_clamp: float | None = None
    score: float | None = None


def overlap_terms(
    r_m1_c2: float,
    r_std_c2: float,
    r_m2_c2: float,
    r_m2_c1: float,
    r_std_c1: float,
    r_m1_c1: float,
    eps: float = DEFAULT_EPS,
) -> OverlapTerms:
    den_c2 = r_m2_c2 - r_std_c2
    den_c1 = r_m1_c1 - r_std_c1
    if not (abs(den_c2) >= eps and abs(den_c1) >= eps):
        return OverlapTerms(UNDEFINED_DENOMINATOR)
    ratio_c2 = (r_m1_c2 - r_std_c2) / den_c2
    ratio_c1 = (r_m2_c1 - r_std_c1) / den_c1
    pre = 0.5 * (ratio_c2 + ratio_c1)
    return OverlapTerms(OK, ratio_c2, ratio_c1, pre, max(0.0, pre))


def overlap_score(
    r_m1_c2: float,
    r_std_c2: float,
    r_m2_c2: float,
    r_m2_c1: float,
    r_std_c1: float,
    r_m1_c1: float,
    eps: float = DEFAULT_EPS,
) -> float:
    """Normalized overlapping score; raises when a self-gain is below ``eps``."""
    t = overlap_terms(r_m1_c2, r_std_c2, r_m2_c2, r_m2_c1, r_std_c1, r_m1_c1, eps)
    if t.status != OK:
        raise UndefinedDenominatorError(
            f"self robustness gain below {eps}: "
            f"|{r_m2_c2} - {r_std_c2}| or |{r_m1_c1} - {r_std_c1}|"
        )
    return t.score


def ce_score(err_model: float, err_ref: float) -> float:
    """Corruption error in percent, relative to a reference model's error."""
    if not err_ref > 0:
        raise UndefinedCEError(f"reference error {err_ref} must be > 0")
    return 100.0 * err_model / err_ref


def ce_score_multi(errs_model: Sequence[float], errs_ref: Sequence[float]) -> float:
    """Errors summed over severities before the ratio."""
    if len(errs_model) != len(errs_ref) or not errs_model:
        raise ScoreError("need matching, nonempty severity lists")
    return ce_score(float(np.sum(errs_model)), float(np.sum(errs_ref)))


# -- tables -----------------------------------------------------------------

def _fmt(x: float) -> str:
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) else f"{x:.6f}"


def _canonical_digest(obj: Any) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, allow_nan=True).encode()).hexdigest()


def _nan_to_none(a: np.ndarray) -> list:
    return [[None if math.isnan(v) else float(v) for v in row] for row in a]


def _none_to_nan(rows) -> np.ndarray:
    return np.array([[math.nan if v is None else v for v in row] for row in rows], dtype=np.float64)


@dataclass
class AccuracyTable:
    """Accuracies of each model (rows) on each test condition (columns).

    Missing entries (for example a model whose training diverged) are NaN.
    """

    models: list[str]
    conditions: list[str]
    accuracies: np.ndarray
    converged: dict[str, bool] = field(default_factory=dict)
    provenance: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.models = list(self.models)
        self.conditions = list(self.conditions)
        self.accuracies = np.asarray(self.accuracies, dtype=np.float64).reshape(len(self.models), len(self.conditions))
        if STANDARD not in self.models or CLEAN not in self.conditions:
            raise ScoreError(f"table needs a {STANDARD!r} row and a {CLEAN!r} column")
        if len(set(self.models)) != len(self.models) or len(set(self.conditions)) != len(self.conditions):
            raise ScoreError("duplicate model or condition ids")
        vals = self.accuracies[~np.isnan(self.accuracies)]
        if ((vals < 0) | (vals > 1)).any():
            raise ScoreError("accuracies must lie in [0, 1]")
        for m in self.models:
            self.converged.setdefault(m, True)

    @property
    def corruptions(self) -> list[str]:
        return [c for c in self.conditions if c != CLEAN]

    def acc(self, model: str, condition: str) -> float:
        return float(self.accuracies[self.models.index(model), self.conditions.index(condition)])

    def robustness(self, model: str, condition: str) -> float:
        return robustness_score(self.acc(model, condition), self.acc(model, CLEAN))

    def to_dict(self) -> dict[str, Any]:
        return {
            "models": self.models,
            "conditions": self.conditions,
            "accuracies": _nan_to_none(self.accuracies),
            "converged": {m: bool(self.converged[m]) for m in self.models},
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "AccuracyTable":
        return cls(d["models"], d["conditions"], _none_to_nan(d["accuracies"]), dict(d.get("converged", {})), dict(d.get("provenance", {})))

    def digest(self) -> str:
        return _canonical_digest(self.to_dict())

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model"] + self.conditions)
        for i, m in enumerate(self.models):
            w.writerow([m] + [_fmt(v) for v in self.accuracies[i]])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, **kw) -> "AccuracyTable":
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], [r for r in rows[1:] if r]
        acc = [[float(v) if v != "" else math.nan for v in r[1:]] for r in body]
        return cls([r[0] for r in body], header[1:], np.array(acc), **kw)

    def merge_row(self, model: str, row: Mapping[str, float], converged: bool = True) -> "AccuracyTable":
        """New table with one more model row; columns must match exactly."""
        if set(row) != set(self.conditions):
            raise ScoreError(f"row conditions {sorted(row)} do not match table {sorted(self.conditions)}")
        if model in self.models:
            raise ScoreError(f"model {model!r} already in table")
        acc = np.vstack([self.accuracies, [row[c] for c in self.conditions]])
        conv = dict(self.converged)
        conv[model] = converged
        return AccuracyTable(self.models + [model], self.conditions, acc, conv, dict(self.provenance))


@dataclass
class OverlapMatrix:
    """Pairwise overlapping scores with per-cell validity.

    ``scores`` is NaN wherever ``validity`` is not ``"ok"``. ``pre_clamp``,
    ``ratio_c2`` (row model's transfer onto the column corruption) and
    ``ratio_c1`` hold the diagnostics whenever both denominators were usable.
    """

    ids: list[str]
    scores: np.ndarray
    validity: np.ndarray
    pre_clamp: np.ndarray
    ratio_c2: np.ndarray
    ratio_c1: np.ndarray
    provenance: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.ids = list(self.ids)
        n = len(self.ids)
        for name in ("scores", "pre_clamp", "ratio_c2", "ratio_c1"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64).reshape(n, n))
        self.validity = np.asarray(self.validity, dtype=object).reshape(n, n)

    @classmethod
    def from_scores(cls, ids: Sequence[str], scores, validity=None, **kw) -> "OverlapMatrix":
        """Build from a plain score matrix (NaN marks an undefined cell)."""
        s = np.asarray(scores, dtype=np.float64)
        if validity is None:
            validity = np.where(np.isnan(s), UNDEFINED_DENOMINATOR, OK)
        nan = np.full_like(s, np.nan)
        return cls(list(ids), s, validity, s.copy(), nan, nan.copy(), **kw)

    def index(self, cid: str) -> int:
        return self.ids.index(resolve_key(cid, self.ids))

    def valid(self, a: str, b: str) -> bool:
        return self.validity[self.index(a), self.index(b)] == OK

    def score(self, a: str, b: str) -> float:
        return float(self.scores[self.index(a), self.index(b)])

    def permuted(self, order: Sequence[str]) -> "OverlapMatrix":
        p = [self.index(c) for c in order]
        ix = np.ix_(p, p)
        return OverlapMatrix(
            list(order), self.scores[ix], self.validity[ix], self.pre_clamp[ix],
            self.ratio_c2[ix], self.ratio_c1[ix], dict(self.provenance),
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "ids": self.ids,
            "scores": _nan_to_none(self.scores),
            "validity": [list(r) for r in self.validity],
            "pre_clamp": _nan_to_none(self.pre_clamp),
            "ratio_c2": _nan_to_none(self.ratio_c2),
            "ratio_c1": _nan_to_none(self.ratio_c1),
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "OverlapMatrix":
        n = len(d["ids"])
        nan = [[None] * n for _ in range(n)]
        return cls(
            d["ids"],
            _none_to_nan(d["scores"]),
            np.array(d.get("validity") or [[OK] * n for _ in range(n)], dtype=object),
            _none_to_nan(d.get("pre_clamp", nan)),
            _none_to_nan(d.get("ratio_c2", nan)),
            _none_to_nan(d.get("ratio_c1", nan)),
            dict(d.get("provenance", {})),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def digest(self) -> str:
        return _canonical_digest(self.to_dict())

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["corruption"] + self.ids)
        for i, c in enumerate(self.ids):
            w.writerow([c] + [_fmt(v) for v in self.scores[i]])
        return buf.getvalue()


def _safe_robustness(table: AccuracyTable, model: str, cond: str) -> float:
    a, clean = table.acc(model, cond), table.acc(model, CLEAN)
    if math.isnan(a) or math.isnan(clean) or not clean > 0:
        return math.nan
    return a / clean


def overlap_matrix(table: AccuracyTable, eps: float = DEFAULT_EPS, ids: Iterable[str] | None = None) -> OverlapMatrix:
    """All pairwise scores for corruptions that have both a model row and a column."""
    ids = list(ids) if ids is not None else [c for c in table.corruptions if c in table.models]
    n = len(ids)
    scores = np.full((n, n), np.nan)
    pre = np.full((n, n), np.nan)
    r2 = np.full((n, n), np.nan)
    r1 = np.full((n, n), np.nan)
    validity = np.empty((n, n), dtype=object)
    for i, c1 in enumerate(ids):
        for j, c2 in enumerate(ids):
            rs = [
                _safe_robustness(table, c1, c2),
                _safe_robustness(table, STANDARD, c2),
                _safe_robustness(table, c2, c2),
                _safe_robustness(table, c2, c1),
                _safe_robustness(table, STANDARD, c1),
                _safe_robustness(table, c1, c1),
            ]
            if any(math.isnan(r) for r in rs):
                t = OverlapTerms(UNDEFINED_DENOMINATOR)
            else:
                t = overlap_terms(*rs, eps=eps)
            if t.status == OK:
                pre[i, j], r2[i, j], r1[i, j] = t.pre_clamp, t.ratio_c2, t.ratio_c1
            nonconv = not all(table.converged.get(m, True) for m in (STANDARD, c1, c2))
            if nonconv:
                validity[i, j] = NONCONVERGED_MODEL
            else:
                validity[i, j] = t.status
                if t.status == OK:
                    scores[i, j] = t.score
    prov = dict(table.provenance)
    prov["eps"] = eps
    prov["accuracy_table_digest"] = table.digest()
    return OverlapMatrix(ids, scores, validity, pre, r2, r1, prov)


@dataclass(frozen=True)
class MeanOverlap:
    mean: float | None
    n_valid: int
    n_excluded: int

    @property
    def flagged(self) -> bool:
        return self.n_valid == 0


def mean_overlap_per_corruption(matrix: OverlapMatrix) -> dict[str, MeanOverlap]:
    """Mean of each corruption's valid off-diagonal scores."""
    n = len(matrix.ids)
    if n < 2:
        raise ScoreError("need at least 2 corruptions")
    out = {}
    for i, c in enumerate(matrix.ids):
        vals = [matrix.scores[i, j] for j in range(n) if j != i and matrix.validity[i, j] == OK]
        excluded = (n - 1) - len(vals)
        out[c] = MeanOverlap(float(np.mean(vals)) if vals else None, len(vals), excluded)
    return out


def save_table_files(table: AccuracyTable | OverlapMatrix, stem) -> list[Path]:
    stem = Path(stem)
    paths = [stem.with_suffix(".csv"), stem.with_suffix(".json")]
    paths[0].write_text(table.to_csv())
    paths[1].write_text(table.to_json())
    return paths
