"""End-to-end overlap computation for a list of corruptions.

For N corruptions the pipeline trains N + 1 models (a standard one and one
augmented per corruption), evaluates each on the clean test set and on every
corrupted test set, and turns the (N + 1) x (N + 1) accuracy table into an
overlap matrix.

Cache layout (one directory, content addressed, append only)::

    <cache>/models/<train-key>.ckpt         trained model checkpoint
    <cache>/models/<train-key>.failed.json  record of a diverged training
    <cache>/evals/<eval-key>.json           {"accuracy": ..., ...}

Keys are SHA-256 digests of canonical JSON over every input that determines
the result (dataset digest, architecture, training config including seed and
augmentation; or model digest, test-set digest and test-condition spec).
Files are written to a temporary name and renamed into place.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Any, Mapping, Sequence

from threadpoolctl import threadpool_limits

from .corruptions import CorruptionSpec
from .data import Dataset, corrupt_dataset, generate_procshapes, load_idx
from .imagecore import SeededRng
from .scores import (
    CLEAN,
    DEFAULT_EPS,
    NONCONVERGED_MODEL,
    OK,
    STANDARD,
    AccuracyTable,
    OverlapMatrix,
    OverlapTerms,
    ScoreError,
    overlap_matrix,
    overlap_terms,
    resolve_key,
)
from .trainer import (
    CheckpointError,
    ModelArch,
    TrainConfig,
    TrainedModel,
    TrainingDivergedError,
    evaluate,
    train,
)
from .trainer import checkpoint as ckpt

log = logging.getLogger(__name__)

SEVERITY_POLICIES = ("fixed", "resample")
CE_REFERENCE_NOTE = "CE reference model: this run's standard model"


class PlanError(ValueError):
    pass


class CacheCorruptionError(RuntimeError):
    def __init__(self, key: str, path: Path, reason: str):
        super().__init__(f"corrupt cache entry {key} at {path}: {reason}")
        self.key = key


def canonical_digest(obj: Any) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def derive_seed(master_seed: int, *tags) -> int:
    return SeededRng(master_seed).derive(*tags).key


@dataclass(frozen=True)
class RunPlan:
    corruptions: tuple[CorruptionSpec, ...]
    dataset: Mapping[str, Any] = field(default_factory=lambda: {"kind": "procshapes"})
    arch: Mapping[str, Any] = field(default_factory=lambda: {"kind": "cnn"})
    train: Mapping[str, Any] = field(default_factory=dict)
    severity_policy: str = "fixed"
    master_seed: int = 0
    cache_dir: str | None = None
    workers: int = 1
    eps: float = DEFAULT_EPS

    def __post_init__(self):
        specs = tuple(c if isinstance(c, CorruptionSpec) else CorruptionSpec.from_dict(c) for c in self.corruptions)
        object.__setattr__(self, "corruptions", specs)
        object.__setattr__(self, "dataset", dict(self.dataset))
        object.__setattr__(self, "arch", dict(self.arch))
        object.__setattr__(self, "train", dict(self.train))
        keys = [c.key for c in specs]
        if len(set(keys)) != len(keys):
            raise PlanError(f"duplicate corruptions in plan: {keys}")
        if self.severity_policy not in SEVERITY_POLICIES:
            raise PlanError(f"severity_policy must be one of {SEVERITY_POLICIES}")
        for bad in ("augment", "seed"):
            if bad in self.train:
                raise PlanError(f"train template may not set {bad!r}; the pipeline derives it")
        TrainConfig.from_dict(self.train)  # validates the template early
        if self.dataset.get("kind", "procshapes") not in ("procshapes", "idx"):
            raise PlanError(f"unknown dataset kind {self.dataset.get('kind')!r}")

    @property
    def keys(self) -> list[str]:
        return [c.key for c in self.corruptions]

    def to_dict(self) -> dict[str, Any]:
        return {
            "corruptions": [c.to_dict() for c in self.corruptions],
            "dataset": self.dataset,
            "arch": self.arch,
            "train": self.train,
            "severity_policy": self.severity_policy,
            "master_seed": self.master_seed,
            "cache_dir": self.cache_dir,
            "workers": self.workers,
            "eps": self.eps,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "RunPlan":
        d = dict(d)
        d["corruptions"] = tuple(d.get("corruptions", ()))
        return cls(**d)

    @classmethod
    def from_file(cls, path) -> "RunPlan":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def restricted(self, keys: Sequence[str]) -> "RunPlan":
        by_key = {c.key: c for c in self.corruptions}
        return replace(self, corruptions=tuple(by_key[resolve_key(k, list(by_key))] for k in keys))

    def with_corruptions(self, specs: Sequence[CorruptionSpec]) -> "RunPlan":
        return replace(self, corruptions=tuple(specs))

    def semantic_digest(self) -> str:
        """Digest of everything that affects results (not cache dir or workers)."""
        d = self.to_dict()
        d.pop("cache_dir")
        d.pop("workers")
        return canonical_digest(d)

    # -- derived pieces --

    def datasets(self) -> tuple[Dataset, Dataset]:
        return _build_datasets(json.dumps(self.dataset, sort_keys=True))

    def model_arch(self, train_set: Dataset) -> ModelArch:
        a = dict(self.arch)
        kind = a.pop("kind", "cnn")
        base = ModelArch.default(kind, train_set.image_shape, train_set.num_classes)
        return ModelArch.from_dict({**base.to_dict(), **a, "kind": kind})

    def model_id_seed(self, model_id: str) -> int:
        return derive_seed(self.master_seed, "model", model_id)

    def test_seed(self, key: str) -> int:
        return derive_seed(self.master_seed, "test", key)

    def train_config(self, spec: CorruptionSpec | None) -> TrainConfig:
        model_id = STANDARD if spec is None else spec.key
        return replace(
            TrainConfig.from_dict(self.train),
            augment=spec,
            seed=self.model_id_seed(model_id),
            resample_severity=self.severity_policy == "resample",
        )


@lru_cache(maxsize=4)
def _build_datasets(dataset_json: str) -> tuple[Dataset, Dataset]:
    d = json.loads(dataset_json)
    kind = d.get("kind", "procshapes")
    if kind == "procshapes":
        return generate_procshapes(
            d.get("classes", 10), d.get("per_class", 200), d.get("side", 32), d.get("seed", 0)
        )
    train_set = load_idx(d["train_images"], d["train_labels"], "train")
    test_set = load_idx(d["test_images"], d["test_labels"], "test")
    return train_set, test_set


class Cache:
    def __init__(self, root):
        self.root = Path(root)
        (self.root / "models").mkdir(parents=True, exist_ok=True)
        (self.root / "evals").mkdir(parents=True, exist_ok=True)

    def model_path(self, key: str) -> Path:
        return self.root / "models" / f"{key}.ckpt"

    def failure_path(self, key: str) -> Path:
        return self.root / "models" / f"{key}.failed.json"

    def eval_path(self, key: str) -> Path:
        return self.root / "evals" / f"{key}.json"

    @staticmethod
    def atomic_write(path: Path, data: bytes) -> None:
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    def has_model(self, key: str) -> bool:
        return self.model_path(key).exists() or self.failure_path(key).exists()

    def load_model(self, key: str) -> TrainedModel | None:
        """The cached model, or None if its training was recorded as diverged."""
        path = self.model_path(key)
        if not path.exists():
            if self.failure_path(key).exists():
                return None
            raise KeyError(key)
        try:
            return ckpt.loads(path.read_bytes())
        except (CheckpointError, ValueError, KeyError) as exc:
            raise CacheCorruptionError(key, path, str(exc)) from exc

    def load_failure(self, key: str) -> dict | None:
        path = self.failure_path(key)
        return json.loads(path.read_text()) if path.exists() else None

    def store_model(self, key: str, model: TrainedModel) -> None:
        self.atomic_write(self.model_path(key), ckpt.dumps(model))

    def store_failure(self, key: str, message: str) -> None:
        self.atomic_write(self.failure_path(key), json.dumps({"key": key, "error": message}).encode())

    def load_eval(self, key: str) -> float | None:
        path = self.eval_path(key)
        if not path.exists():
            return None
        try:
            rec = json.loads(path.read_text())
            acc = float(rec["accuracy"])
        except (ValueError, KeyError, TypeError) as exc:
            raise CacheCorruptionError(key, path, str(exc)) from exc
        if not 0.0 <= acc <= 1.0 or rec.get("key") != key:
            raise CacheCorruptionError(key, path, "invalid record")
        return acc

    def store_eval(self, key: str, accuracy: float, meta: Mapping[str, Any]) -> None:
        rec = {"key": key, "accuracy": accuracy, **meta}
        self.atomic_write(self.eval_path(key), json.dumps(rec, sort_keys=True).encode())


def default_cache_dir() -> Path:
    return Path(os.environ.get("OVERLAPSCORE_CACHE", Path.home() / ".cache" / "overlapscore"))


def train_key(dataset_digest: str, arch: ModelArch, config: TrainConfig) -> str:
    return canonical_digest({"dataset": dataset_digest, "arch": arch.to_dict(), "config": config.to_dict()})


def eval_key(model_digest: str, test_digest: str, condition: Mapping[str, Any]) -> str:
    return canonical_digest({"model": model_digest, "test": test_digest, "condition": condition})


def _limit_threads() -> None:
    # fixed single-threaded BLAS keeps float results independent of scheduling
    threadpool_limits(limits=1)


def _train_job(arch_d: dict, train_set: Dataset, config_d: dict, cache_root: str, key: str) -> tuple[str, str | None]:
    cache = Cache(cache_root)
    with threadpool_limits(limits=1):
        try:
            model = train(ModelArch.from_dict(arch_d), train_set, TrainConfig.from_dict(config_d))
        except TrainingDivergedError as exc:
            cache.store_failure(key, str(exc))
            return key, str(exc)
    cache.store_model(key, model)
    return key, None


@dataclass
class MatrixResult:
    table: AccuracyTable
    matrix: OverlapMatrix
    trained: int
    evaluated: int
    failures: dict[str, str] = field(default_factory=dict)
    model_digests: dict[str, str] = field(default_factory=dict)
    checkpoint_paths: dict[str, Path] = field(default_factory=dict)

    def __iter__(self):
        return iter((self.table, self.matrix))


def condition_record(plan: RunPlan, spec: CorruptionSpec | None) -> dict[str, Any]:
    if spec is None:
        return {"id": CLEAN}
    return {"spec": spec.to_dict(), "seed": plan.test_seed(spec.key), "policy": plan.severity_policy}


def corrupted_test_sets(plan: RunPlan, test_set: Dataset, specs: Sequence[CorruptionSpec]) -> dict[str, Dataset]:
    sets = {CLEAN: test_set}
    for spec in specs:
        sets[spec.key] = corrupt_dataset(
            test_set, spec, plan.test_seed(spec.key), resample_severity=plan.severity_policy == "resample"
        )
    return sets


def run_matrix(plan: RunPlan, workers: int | None = None, cache_dir=None) -> MatrixResult:
    """Train, evaluate and score every corruption pair of ``plan``."""
    workers = workers or plan.workers or 1
    cache = Cache(cache_dir or plan.cache_dir or default_cache_dir())
    train_set, test_set = plan.datasets()
    arch = plan.model_arch(train_set)
    train_digest = train_set.digest()

    model_ids = [STANDARD] + plan.keys
    specs = {STANDARD: None, **{c.key: c for c in plan.corruptions}}
    keys = {m: train_key(train_digest, arch, plan.train_config(specs[m])) for m in model_ids}

    todo = [m for m in model_ids if not cache.has_model(keys[m])]
    jobs = [(arch.to_dict(), train_set, plan.train_config(specs[m]).to_dict(), str(cache.root), keys[m]) for m in todo]
    if jobs:
        log.info("training %d of %d models with %d worker(s)", len(jobs), len(model_ids), workers)
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers, initializer=_limit_threads) as pool:
            list(pool.map(_train_job, *zip(*jobs)))
    else:
        for job in jobs:
            _train_job(*job)

    models: dict[str, TrainedModel | None] = {m: cache.load_model(keys[m]) for m in model_ids}
    failures = {m: cache.load_failure(keys[m])["error"] for m in model_ids if models[m] is None}

    test_sets = corrupted_test_sets(plan, test_set, plan.corruptions)
    test_digests = {c: ds.digest() for c, ds in test_sets.items()}
    conditions = [CLEAN] + plan.keys
    evaluated = 0
    rows = []
    with threadpool_limits(limits=1):
        for m in model_ids:
            model = models[m]
            row = []
            for c in conditions:
                if model is None:
                    row.append(float("nan"))
                    continue
                cond = condition_record(plan, specs[c] if c != CLEAN else None)
                k = eval_key(model.digest(), test_digests[c], cond)
                acc = cache.load_eval(k)
                if acc is None:
                    acc = evaluate(model, test_sets[c])
                    cache.store_eval(k, acc, {"model_id": m, "condition": c})
                    evaluated += 1
                row.append(acc)
            rows.append(row)

    converged = {m: bool(models[m] is not None and models[m].converged) for m in model_ids}
    prov = {
        "plan_digest": plan.semantic_digest(),
        "master_seed": plan.master_seed,
        "arch": arch.to_dict(),
        "train_digest": train_digest,
        "test_digest": test_digests[CLEAN],
        "severity_policy": plan.severity_policy,
        "ce_reference": CE_REFERENCE_NOTE,
        "model_digests": {m: (models[m].digest() if models[m] is not None else None) for m in model_ids},
        "final_train_accuracy": {
            m: (models[m].final_train_accuracy if models[m] is not None else None) for m in model_ids
        },
    }
    if failures:
        prov["failures"] = failures
    table = AccuracyTable(model_ids, conditions, rows, converged, prov)
    matrix = overlap_matrix(table, eps=plan.eps)
    return MatrixResult(
        table,
        matrix,
        trained=len(jobs),
        evaluated=evaluated,
        failures=failures,
        model_digests={m: d for m, d in prov["model_digests"].items() if d},
        checkpoint_paths={m: cache.model_path(keys[m]) for m in model_ids if models[m] is not None},
    )


@dataclass(frozen=True)
class PairResult:
    c1: str
    c2: str
    score: float | None
    validity: str
    terms: OverlapTerms


def run_pair(plan: RunPlan, c1: str, c2: str, independent_self: bool = False, **kw) -> PairResult:
    """Overlap of two corruptions of ``plan`` (or of one corruption with itself).

    With ``c1 == c2`` the same model plays both roles and the score is exactly
    1. ``independent_self=True`` instead trains a second, independently seeded
    model for the m2 role, which measures how reproducible the self-overlap is.
    """
    c1, c2 = resolve_key(c1, plan.keys), resolve_key(c2, plan.keys)
    if c1 == c2 and independent_self:
        return _independent_self_pair(plan, c1, **kw)
    keys = [c1] if c1 == c2 else [c1, c2]
    result = run_matrix(plan.restricted(keys), **kw)
    m = result.matrix
    i, j = m.index(c1), m.index(c2)
    status = m.validity[i, j]

    def cell(a):
        v = float(a[i, j])
        return None if math.isnan(v) else v

    terms = OverlapTerms(status, cell(m.ratio_c2), cell(m.ratio_c1), cell(m.pre_clamp), cell(m.scores))
    return PairResult(c1, c2, terms.score, status, terms)


def _independent_self_pair(plan: RunPlan, c: str, workers: int | None = None, cache_dir=None) -> PairResult:
    sub = plan.restricted([c])
    result = run_matrix(sub, workers=workers, cache_dir=cache_dir)
    cache = Cache(cache_dir or plan.cache_dir or default_cache_dir())
    spec = sub.corruptions[0]
    train_set, test_set = sub.datasets()
    arch = sub.model_arch(train_set)
    config = replace(sub.train_config(spec), seed=derive_seed(sub.master_seed, "model", c, "replicate"))
    key = train_key(train_set.digest(), arch, config)
    if not cache.has_model(key):
        _train_job(arch.to_dict(), train_set, config.to_dict(), str(cache.root), key)
    twin = cache.load_model(key)
    table = result.table
    if twin is None:
        terms = OverlapTerms(NONCONVERGED_MODEL)
        return PairResult(c, c, None, NONCONVERGED_MODEL, terms)
    sets = corrupted_test_sets(sub, test_set, sub.corruptions)
    twin_row = {}
    with threadpool_limits(limits=1):
        for cond, ds in sets.items():
            k = eval_key(twin.digest(), ds.digest(), condition_record(sub, spec if cond != CLEAN else None))
            acc = cache.load_eval(k)
            if acc is None:
                acc = evaluate(twin, ds)
                cache.store_eval(k, acc, {"model_id": c + "#replicate", "condition": cond})
            twin_row[cond] = acc
    std = {cond: table.acc(STANDARD, cond) for cond in (CLEAN, c)}
    m1 = {cond: table.acc(c, cond) for cond in (CLEAN, c)}
    terms = pair_from_models(std, m1, twin_row, c, c, eps=plan.eps)
    converged = table.converged.get(STANDARD, False) and table.converged.get(c, False) and twin.converged
    status = terms.status if converged else NONCONVERGED_MODEL
    return PairResult(c, c, terms.score if status == OK else None, status, terms)


def pair_from_models(
    std: Mapping[str, float], m1: Mapping[str, float], m2: Mapping[str, float], c1: str, c2: str, eps: float = DEFAULT_EPS
) -> OverlapTerms:
    """Overlap terms from three accuracy rows keyed by condition id."""

    def r(row, c):
        return row[c] / row[CLEAN]

    return overlap_terms(r(m1, c2), r(std, c2), r(m2, c2), r(m2, c1), r(std, c1), r(m1, c1), eps=eps)


def evaluate_external(
    model: TrainedModel | str | os.PathLike,
    corruptions: Sequence[CorruptionSpec],
    test_set: Dataset,
    master_seed: int,
    severity_policy: str = "fixed",
) -> dict[str, float]:
    """Accuracy row (clean + each corruption) for a model trained elsewhere.

    Corrupted test sets use the same per-condition seeds as :func:`run_matrix`
    with the same master seed, so the row is comparable to a pipeline table.
    """
    if not isinstance(model, TrainedModel):
        model = ckpt.load(model)
    if tuple(test_set.image_shape) != model.arch.input_shape:
        raise ScoreError(f"model expects {model.arch.input_shape}, dataset has {test_set.image_shape}")
    plan = RunPlan(tuple(corruptions), severity_policy=severity_policy, master_seed=master_seed)
    sets = corrupted_test_sets(plan, test_set, plan.corruptions)
    with threadpool_limits(limits=1):
        return {c: evaluate(model, ds) for c, ds in sets.items()}


def join_external(table: AccuracyTable, model_id: str, row: Mapping[str, float], test_digest: str) -> AccuracyTable:
    """Append an external row; refuses rows computed on a different test set."""
    expected = table.provenance.get("test_digest")
    if expected != test_digest:
        raise ScoreError(f"test-set digest {test_digest[:12]} does not match table {str(expected)[:12]}")
    return table.merge_row(model_id, row)
