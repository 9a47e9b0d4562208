import json
import math

import numpy as np
import pytest

from oracle import direct_overlap
from overlapscore.corruptions import CorruptionSpec
from overlapscore.pipeline import (
    CacheCorruptionError,
    PlanError,
    RunPlan,
    evaluate_external,
    join_external,
    run_matrix,
    run_pair,
)
from overlapscore.scores import NONCONVERGED_MODEL, OK, UNDEFINED_DENOMINATOR, ScoreError
from overlapscore.trainer import evaluate, load_checkpoint

TINY = dict(
    dataset={"kind": "procshapes", "classes": 3, "per_class": 20, "side": 24},
    arch={"kind": "mlp", "hidden": [32]},
    train={"epochs": 4, "batch_size": 16, "lr_drop_epochs": [3], "convergence_threshold": 0.0},
)


def plan(ids, **kw):
    return RunPlan(tuple(CorruptionSpec(c) if isinstance(c, str) else c for c in ids), **{**TINY, **kw})


def test_counts_and_warm_cache(tmp_path):
    p = plan(["gaussian_noise", "border"])
    cold = run_matrix(p, cache_dir=tmp_path)
    assert cold.trained == 3 and cold.evaluated == 9
    assert cold.table.accuracies.shape == (3, 3)
    assert cold.matrix.scores.shape == (2, 2)
    warm = run_matrix(p, cache_dir=tmp_path)
    assert warm.trained == 0 and warm.evaluated == 0
    assert warm.table.digest() == cold.table.digest()
    assert warm.matrix.digest() == cold.matrix.digest()


def test_worker_count_does_not_change_results(tmp_path):
    p = plan(["contrast", "pixelate"])
    a = run_matrix(p, workers=1, cache_dir=tmp_path / "a")
    b = run_matrix(p, workers=2, cache_dir=tmp_path / "b")
    assert a.table.digest() == b.table.digest() and a.matrix.digest() == b.matrix.digest()


def test_cells_equal_direct_substitution(tmp_path):
    res = run_matrix(plan(["gaussian_noise", "shot_noise", "border"]), cache_dir=tmp_path)
    d = json.loads(res.table.to_json())
    m = res.matrix
    for i, a in enumerate(m.ids):
        for j, b in enumerate(m.ids):
            want = direct_overlap(d, a, b)
            if want is None:
                assert m.validity[i, j] == UNDEFINED_DENOMINATOR
            else:
                assert abs(m.scores[i, j] - want) <= 1e-12


def test_adding_a_corruption_keeps_existing_models(tmp_path):
    a = run_matrix(plan(["gaussian_noise"]), cache_dir=tmp_path)
    b = run_matrix(plan(["gaussian_noise", "fog"]), cache_dir=tmp_path)
    assert b.trained == 1
    for m in ("standard", "gaussian_noise@3"):
        assert a.model_digests[m] == b.model_digests[m]
        assert a.table.acc(m, "gaussian_noise@3") == b.table.acc(m, "gaussian_noise@3")


def test_pair_matches_matrix_cell(tmp_path):
    p = plan(["gaussian_noise", "border"])
    res = run_matrix(p, cache_dir=tmp_path)
    pr = run_pair(p, "gaussian_noise@3", "border@3", cache_dir=tmp_path)
    assert pr.validity == res.matrix.validity[0, 1]
    if pr.validity == OK:
        assert pr.score == res.matrix.scores[0, 1]


def test_identity_pair_is_undefined(tmp_path):
    p = plan([CorruptionSpec.identity("border"), CorruptionSpec.identity("brightness")])
    pr = run_pair(p, p.keys[0], p.keys[1], cache_dir=tmp_path)
    assert pr.validity == UNDEFINED_DENOMINATOR and pr.score is None


def test_self_pair_same_model_is_one_and_independent_twin_trains_once(tmp_path):
    p = plan(["gaussian_noise"], train={**TINY["train"], "epochs": 8, "lr_drop_epochs": [6]})
    same = run_pair(p, "gaussian_noise@3", "gaussian_noise@3", cache_dir=tmp_path)
    assert same.validity != OK or same.score == 1.0
    twin = run_pair(p, "gaussian_noise@3", "gaussian_noise@3", independent_self=True, cache_dir=tmp_path)
    assert twin.validity in (OK, UNDEFINED_DENOMINATOR)
    ckpts = list((tmp_path / "models").glob("*.ckpt"))
    assert len(ckpts) == 3  # standard, augmented, independent twin


def test_divergence_recorded_and_flagged(tmp_path):
    p = plan(["gaussian_noise", "border"], train={**TINY["train"], "lr0": 1e6, "lr_drop_epochs": []})
    with np.errstate(all="ignore"):
        res = run_matrix(p, cache_dir=tmp_path)
    assert set(res.failures) == {"standard", "gaussian_noise@3", "border@3"}
    assert np.isnan(res.table.accuracies).all()
    assert (res.matrix.validity == NONCONVERGED_MODEL).all()


def test_nonconverged_models_flag_cells(tmp_path):
    p = plan(["gaussian_noise", "border"], train={**TINY["train"], "convergence_threshold": 1.01})
    res = run_matrix(p, cache_dir=tmp_path)
    assert (res.matrix.validity == NONCONVERGED_MODEL).all()


def test_cache_corruption_is_a_hard_error(tmp_path):
    p = plan(["border"])
    run_matrix(p, cache_dir=tmp_path)
    victim = sorted((tmp_path / "models").glob("*.ckpt"))[0]
    victim.write_bytes(victim.read_bytes()[:-5] + b"xxxxx")
    with pytest.raises(CacheCorruptionError) as ei:
        run_matrix(p, cache_dir=tmp_path)
    assert ei.value.key == victim.stem


def test_plan_validation_and_files(tmp_path):
    with pytest.raises(PlanError):
        plan(["border", "border"])
    with pytest.raises(PlanError):
        plan(["border"], severity_policy="random")
    with pytest.raises(PlanError):
        plan(["border"], train={"seed": 3})
    with pytest.raises(PlanError):
        plan(["border"], dataset={"kind": "cifar"})
    p = plan(["border", CorruptionSpec("fog", 2)], master_seed=4)
    f = tmp_path / "plan.json"
    f.write_text(json.dumps(p.to_dict()))
    back = RunPlan.from_file(f)
    assert back == p and back.semantic_digest() == p.semantic_digest()
    assert p.semantic_digest() == plan(["border", CorruptionSpec("fog", 2)], master_seed=4, workers=8).semantic_digest()


def test_derived_seeds_depend_on_master_and_id():
    a, b = plan(["border"], master_seed=0), plan(["border"], master_seed=1)
    assert a.model_id_seed("border@3") != b.model_id_seed("border@3")
    assert a.model_id_seed("border@3") != a.model_id_seed("standard")
    assert a.test_seed("border@3") != a.model_id_seed("border@3")


def test_external_evaluation_row(tmp_path):
    p = plan(["gaussian_noise"])
    res = run_matrix(p, cache_dir=tmp_path)
    _, test_set = p.datasets()
    ident = CorruptionSpec.identity("border")
    path = res.checkpoint_paths["standard"]
    row = evaluate_external(path, [CorruptionSpec("gaussian_noise"), ident], test_set, master_seed=0)
    assert row["clean"] == evaluate(load_checkpoint(path), test_set)
    assert row["gaussian_noise@3"] == res.table.acc("standard", "gaussian_noise@3")
    assert row[ident.key] == row["clean"]
    ext = {k: row[k] for k in ("clean", "gaussian_noise@3")}
    joined = join_external(res.table, "external", ext, test_set.digest())
    assert joined.acc("external", "clean") == row["clean"]
    with pytest.raises(ScoreError):
        join_external(res.table, "external", ext, "0" * 64)


def test_external_shape_mismatch(tmp_path):
    p = plan(["border"])
    res = run_matrix(p, cache_dir=tmp_path)
    from overlapscore.data import generate_procshapes

    _, other = generate_procshapes(classes=3, per_class=5, side=32)
    with pytest.raises(ScoreError):
        evaluate_external(res.checkpoint_paths["standard"], [], other, 0)


def test_resample_policy_changes_test_sets(tmp_path):
    fixed = run_matrix(plan(["brightness"]), cache_dir=tmp_path)
    resampled = run_matrix(plan(["brightness"], severity_policy="resample"), cache_dir=tmp_path)
    assert fixed.table.provenance["severity_policy"] == "fixed"
    assert resampled.table.provenance["severity_policy"] == "resample"
    assert not math.isclose(
        fixed.table.acc("standard", "brightness@3"), resampled.table.acc("standard", "brightness@3")
    ) or fixed.model_digests["brightness@3"] != resampled.model_digests["brightness@3"]
