import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from overlapscore.analysis import (
    BALANCED,
    COVERED,
    INCONCLUSIVE,
    NOT_COVERED,
    UNBALANCED,
    CEReport,
    admission_from_coverage,
    balance_report,
    coverage_from_matrix,
    coverage_from_scores,
    partition_compare,
)
from overlapscore.scores import AccuracyTable, OverlapMatrix, ScoreError

TABLE1 = """model,mean_CE_Set1,mean_CE_Set2,Border,Obstr
Standard,81,73,53,63
SIN+IN,71,68,56,69
Augmix,66,65,50,63
ANT3x3,60,68,58,71
DeepAug,59,63,60,72
"""


def matrix(ids, off, diag=1.0):
    n = len(ids)
    s = np.full((n, n), float(off)) if np.isscalar(off) else np.array(off, dtype=float)
    np.fill_diagonal(s, diag)
    return OverlapMatrix.from_scores(ids, s)


# -- balance ----------------------------------------------------------------

def test_equal_off_diagonal_is_balanced():
    r = balance_report(matrix(list("abcd"), 0.3))
    assert r.dispersion == pytest.approx(0.0) and r.verdict == BALANCED


def test_one_dominant_corruption():
    s = np.zeros((4, 4))
    s[0, 1:] = s[1:, 0] = 0.9
    r = balance_report(matrix(["a", "b", "c", "d"], s))
    # means: a = 0.9, others = 0.3
    assert r.ranking[0] == ("a", pytest.approx(0.9))
    assert r.dispersion == pytest.approx(0.6) and r.verdict == UNBALANCED


def test_balance_needs_three():
    with pytest.raises(ScoreError):
        balance_report(matrix(["a", "b"], 0.1))


def test_balance_inconclusive_when_cells_missing():
    s = np.full((3, 3), np.nan)
    np.fill_diagonal(s, 1.0)
    r = balance_report(matrix(list("abc"), s))
    assert r.verdict == INCONCLUSIVE and r.flagged == ["a", "b", "c"]
    assert "inconclusive" in r.to_text()


@given(st.lists(st.floats(0, 1), min_size=6, max_size=6), st.permutations(["a", "b", "c", "d"]))
@settings(max_examples=100)
def test_balance_invariant_under_relabeling(vals, order):
    s = np.eye(4)
    iu = np.triu_indices(4, 1)
    s[iu] = vals
    s.T[iu] = vals
    m = matrix(list("abcd"), s)
    a, b = balance_report(m), balance_report(m.permuted(order))
    assert a.dispersion == pytest.approx(b.dispersion, abs=1e-15)
    assert dict(a.ranking) == pytest.approx(dict(b.ranking))
    assert a.verdict == b.verdict


# -- coverage and admission -------------------------------------------------

def test_all_zero_row_not_covered():
    r = coverage_from_scores("x", {"a": 0.0, "b": 0.0, "c": 0.0})
    assert r.verdict == NOT_COVERED
    assert admission_from_coverage(r).decision == "admit"


def test_one_overlap_rejects_with_partner():
    r = coverage_from_scores("x", {"a": 0.0, "b": 0.5})
    assert r.verdict == COVERED
    res = admission_from_coverage(r)
    assert res.decision == "reject" and res.partners == ["b"]


def test_undefined_pair_is_inconclusive():
    r = coverage_from_scores("x", {"a": 0.0, "b": None})
    assert r.verdict == INCONCLUSIVE and r.undefined == ["b"]
    assert admission_from_coverage(r).decision == "inconclusive"


def test_member_candidate_is_covered():
    r = coverage_from_scores("a", {"a": 1.0, "b": 0.0})
    assert r.verdict == COVERED
    res = admission_from_coverage(r)
    assert res.decision == "reject" and res.partners == ["a"]


def test_tau_one_makes_non_members_not_covered():
    assert coverage_from_scores("x", {"a": 0.9, "b": 1.0}, tau=1.0).verdict == NOT_COVERED


@given(st.dictionaries(st.sampled_from("abcde"), st.floats(0, 1), min_size=1), st.floats(0, 1), st.floats(0, 1))
@settings(max_examples=200)
def test_coverage_monotone_in_tau(scores, t1, t2):
    lo, hi = sorted((t1, t2))
    if coverage_from_scores("x", scores, lo).verdict == NOT_COVERED:
        assert coverage_from_scores("x", scores, hi).verdict == NOT_COVERED


def test_coverage_from_matrix_row():
    s = np.zeros((3, 3))
    s[0, 2] = s[2, 0] = 0.05
    r = coverage_from_matrix("a", ["b", "c"], matrix(list("abc"), s))
    assert r.verdict == NOT_COVERED and r.scores == {"b": 0.0, "c": 0.05}


# -- CE comparison ----------------------------------------------------------

def ce_table():
    # standard errors 0.4 everywhere; "half" halves the error on set1 only
    models = ["standard", "half"]
    conds = ["clean", "n1", "n2", "b1", "b2"]
    acc = [[0.9, 0.6, 0.6, 0.6, 0.6], [0.9, 0.8, 0.8, 0.6, 0.6]]
    return AccuracyTable(models, conds, acc)


def test_partition_compare_oracle():
    r = partition_compare(ce_table(), ["n1", "n2"], ["b1", "b2"])
    assert r.values["standard"] == {"mean_CE_set1": pytest.approx(100), "mean_CE_set2": pytest.approx(100)}
    assert r.values["half"] == {"mean_CE_set1": pytest.approx(50), "mean_CE_set2": pytest.approx(100)}
    assert r.delta("half", "mean_CE_set1") == pytest.approx(-50)
    assert r.cell("half", "mean_CE_set1") == "50 (-50)"
    assert r.cell("standard", "mean_CE_set2") == "100 (0)"


def test_partition_compare_validation():
    t = ce_table()
    with pytest.raises(ScoreError):
        partition_compare(t, ["n1"], ["n1", "b1"])
    with pytest.raises(ScoreError):
        partition_compare(t, [], ["b1"])
    with pytest.raises(ScoreError):
        partition_compare(t, ["n1"], ["zz"])
    zero = AccuracyTable(["standard"], ["clean", "n1", "b1"], [[1.0, 1.0, 0.5]])
    with pytest.raises(ScoreError):
        partition_compare(zero, ["n1"], ["b1"])


def test_external_table_format():
    r = CEReport.from_csv(TABLE1, "Standard", ["mean_CE_Set1", "mean_CE_Set2"])
    assert r.cell("DeepAug", "mean_CE_Set1") == "59 (-22)"
    assert r.cell("DeepAug", "mean_CE_Set2") == "63 (-10)"
    assert r.cell("Standard", "mean_CE_Set1") == "81 (0)"
    assert r.cell("DeepAug", "Border") == "60"
    lines = r.to_text().splitlines()
    assert lines[0].split(" | ")[0].strip() == "model"
    assert any(line.startswith("DeepAug") and "59 (-22)" in line for line in lines)


def test_external_table_needs_standard_row():
    with pytest.raises(ScoreError):
        CEReport.from_csv(TABLE1, "ResNet")
