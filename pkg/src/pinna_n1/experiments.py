"""Evaluation protocols: seeded splits, repeated runs, size sweeps, leave-one-out,
domain mixing and feature-distribution overlap.

Every protocol is deterministic given (dataset, spec, seed). Runs may be
farmed out to worker processes with ``jobs > 1``; results are always
reduced in seed/index order.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .anthro import FEATURE_NAMES, fit_normalizer
from .dataset import DataError, Dataset
from .predictors import ModelSpec, OutOfRangeError, TrainedModel, predict_many, train_linear, train_mlp, train_naive

JND_OCTAVE_RANGE = (0.1, 0.2)
DEFAULT_RATIOS = (0.6, 0.2, 0.2)
SWEEP_VAL_FRACTION = 0.25
LOO_VAL_FRACTION = 0.2
LOO_NOTE = "leave-one-out: not directly comparable to fixed-split points"

# observer(role, indices) sees every index set handed to fitting or evaluation
Observer = Callable[[str, np.ndarray], None]


def jnd_annotation(rms_octave: float) -> str:
    lo, hi = JND_OCTAVE_RANGE
    if rms_octave < lo:
        return "below_jnd"
    if rms_octave <= hi:
        return "within_jnd"
    return "above_jnd"


@dataclass(frozen=True)
class Split:
    train: tuple[int, ...]
    validation: tuple[int, ...]
    test: tuple[int, ...]


@dataclass(frozen=True)
class RunResult:
    seed: int
    rms_hz: float
    rms_octave: float
    n_test: int
    n_train: int
    size: Optional[int] = None


@dataclass(frozen=True)
class ErrorReport:
    dataset: str
    protocol: str
    model: str
    rms_hz: float
    rms_octave: float
    n_test: int
    seeds: tuple[int, ...]
    runs: tuple[RunResult, ...]
    size: Optional[int] = None
    note: str = ""

    @property
    def jnd(self) -> str:
        return jnd_annotation(self.rms_octave)


def rms_hz(pred: Sequence[float], true: Sequence[float]) -> float:
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(true, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {t.shape}")
    if p.size == 0:
        raise ValueError("rms of an empty sequence")
    d = p - t
    return float(np.sqrt(np.mean(d * d)))


def rms_octave(pred: Sequence[float], true: Sequence[float]) -> float:
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(true, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {t.shape}")
    if p.size == 0:
        raise ValueError("rms of an empty sequence")
    if np.any(p <= 0) or np.any(t <= 0):
        raise ValueError("octave error needs positive frequencies")
    r = np.log2(p / t)
    return float(np.sqrt(np.mean(r * r)))


def aggregate(dataset: str, protocol: str, model: str, runs: Sequence[RunResult], size=None, note="") -> ErrorReport:
    runs = tuple(runs)
    return ErrorReport(
        dataset=dataset,
        protocol=protocol,
        model=model,
        rms_hz=float(np.mean([r.rms_hz for r in runs])),
        rms_octave=float(np.mean([r.rms_octave for r in runs])),
        n_test=runs[0].n_test,
        seeds=tuple(r.seed for r in runs),
        runs=runs,
        size=size,
        note=note,
    )


def _take_groups(groups: Sequence[Sequence[int]], start: int, k: int) -> tuple[list[int], int]:
    """Take exactly ``k`` indices from ``groups[start:]``, whole groups first.

    The last group may be cut; its remainder is dropped so a subject never
    spans two parts. Returns the indices and the next group position.
    """
    out: list[int] = []
    g = start
    while len(out) < k and g < len(groups):
        need = k - len(out)
        out.extend(groups[g][:need])
        g += 1
    return out, g


def make_split(d: Dataset, ratios: Sequence[float] = DEFAULT_RATIOS, seed: int = 0) -> Split:
    """Seeded subject-level train/validation/test split.

    Validation and test targets are ``floor(ratio * n)``; train gets the
    remainder. Whole subjects are assigned, so a part can exceed its
    target by one ear.
    """
    if len(ratios) != 3 or any(r < 0 for r in ratios) or not math.isclose(sum(ratios), 1.0, abs_tol=1e-9):
        raise ValueError(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    n = len(d)
    n_val = int(math.floor(ratios[1] * n + 1e-9))
    n_test = int(math.floor(ratios[2] * n + 1e-9))
    groups = d.subject_groups()
    order = np.random.default_rng(seed).permutation(len(groups))
    test, val, train = [], [], []
    for gi in order:
        g = groups[gi]
        if len(test) < n_test:
            test.extend(g)
        elif len(val) < n_val:
            val.extend(g)
        else:
            train.extend(g)
    if not train or (ratios[1] > 0 and not val) or (ratios[2] > 0 and not test):
        raise DataError(f"dataset {d.name!r} with {n} examples is too small for ratios {tuple(ratios)}")
    return Split(tuple(sorted(train)), tuple(sorted(val)), tuple(sorted(test)))


def _gather(X: np.ndarray, y: np.ndarray, idx: Sequence[int], role: str, observer: Optional[Observer]):
    idx = np.asarray(idx, dtype=np.int64)
    if observer is not None:
        observer(role, idx)
    return X[idx], y[idx]


def fit_model(
    spec: ModelSpec,
    X_train: np.ndarray,
    y_train: np.ndarray,
    X_val: Optional[np.ndarray] = None,
    y_val: Optional[np.ndarray] = None,
    seed: Optional[int] = None,
) -> TrainedModel:
    """Fit the normalizer on the training rows, then the model."""
    if spec.kind == "naive":
        return train_naive(y_train)
    norm = fit_normalizer(X_train)
    if spec.kind == "linear":
        m = train_linear(norm.transform(X_train), y_train, spec.ridge, norm)
        return replace(m, spec=spec)
    if X_val is None or len(X_val) == 0:
        raise DataError("the MLP needs a validation set")
    run_spec = spec if seed is None else replace(spec, seed=int(seed))
    return train_mlp(norm.transform(X_train), y_train, norm.transform(X_val), y_val, run_spec, norm)


def _check_range(pred: np.ndarray) -> None:
    # reported, never clamped
    bad = np.flatnonzero(~(pred > 0))
    if bad.size:
        raise OutOfRangeError(f"model predicted {bad.size} nonpositive or non-finite frequencies "
                              f"(first: {pred[bad[0]]!r} Hz)")


def _evaluate(m: TrainedModel, X: np.ndarray, y: np.ndarray) -> tuple[float, float, np.ndarray]:
    pred = predict_many(m, X)
    _check_range(pred)
    return rms_hz(pred, y), rms_octave(pred, y), pred


def run_single(
    d: Dataset,
    spec: ModelSpec,
    seed: int,
    ratios: Sequence[float] = DEFAULT_RATIOS,
    observer: Optional[Observer] = None,
) -> RunResult:
    X, y = d.features(), d.labels()
    sp = make_split(d, ratios, seed)
    Xtr, ytr = _gather(X, y, sp.train, "train", observer)
    Xva, yva = _gather(X, y, sp.validation, "validation", observer) if spec.kind == "mlp" else (None, None)
    m = fit_model(spec, Xtr, ytr, Xva, yva, seed)
    Xte, yte = _gather(X, y, sp.test, "test", observer)
    rh, ro, _ = _evaluate(m, Xte, yte)
    return RunResult(seed, rh, ro, len(sp.test), len(sp.train))


def _map(fn, items: Sequence, jobs: int) -> list:
    if jobs <= 1 or len(items) <= 1:
        return [fn(*it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        futures = [ex.submit(fn, *it) for it in items]
        return [f.result() for f in futures]


class RunFailure(RuntimeError):
    def __init__(self, seed: int, cause: BaseException):
        super().__init__(f"run with seed {seed} failed: {cause}")
        self.seed = seed
        self.cause = cause


def _guarded(fn, seed, *args):
    try:
        return fn(*args)
    except Exception as exc:
        raise RunFailure(seed, exc) from exc


def run_repeated(
    d: Dataset,
    spec: ModelSpec,
    n_runs: int = 9,
    base_seed: int = 0,
    ratios: Sequence[float] = DEFAULT_RATIOS,
    jobs: int = 1,
    observer: Optional[Observer] = None,
) -> ErrorReport:
    """Seeds ``base_seed .. base_seed + n_runs - 1``; each seed drives both split and initialisation."""
    seeds = [base_seed + i for i in range(n_runs)]
    if observer is not None:
        jobs = 1
    items = [(run_single, s, d, spec, s, ratios, observer) for s in seeds]
    runs = _map(_guarded, items, jobs)
    return aggregate(d.name, "repeated", spec.summary(), runs)


def _sweep_one(d: Dataset, spec: ModelSpec, seed: int, train_sizes: Sequence[int], test_size: int,
               observer: Optional[Observer]) -> list[RunResult]:
    X, y = d.features(), d.labels()
    groups = d.subject_groups()
    order = np.random.default_rng(seed).permutation(len(groups))
    groups = [groups[i] for i in order]
    test_idx, pos = _take_groups(groups, 0, test_size)
    if len(test_idx) < test_size:
        raise DataError(f"cannot draw a {test_size}-example test set")
    Xte, yte = _gather(X, y, test_idx, "test", observer)
    out = []
    for size in train_sizes:
        train_idx, vpos = _take_groups(groups, pos, size)
        if len(train_idx) < size:
            raise DataError(f"train size {size} is infeasible with a {test_size}-example test set")
        Xtr, ytr = _gather(X, y, train_idx, "train", observer)
        Xva = yva = None
        if spec.kind == "mlp":
            n_val = max(1, int(math.ceil(SWEEP_VAL_FRACTION * size)))
            val_idx, _ = _take_groups(groups, vpos, n_val)
            if not val_idx:
                raise DataError(f"no examples left for validation at train size {size}")
            Xva, yva = _gather(X, y, val_idx, "validation", observer)
        m = fit_model(spec, Xtr, ytr, Xva, yva, seed)
        rh, ro, _ = _evaluate(m, Xte, yte)
        out.append(RunResult(seed, rh, ro, len(test_idx), size, size))
    return out


def size_sweep(
    d: Dataset,
    train_sizes: Sequence[int],
    spec: ModelSpec,
    test_size: int = 25,
    n_runs: int = 9,
    base_seed: int = 0,
    jobs: int = 1,
    observer: Optional[Observer] = None,
) -> list[tuple[int, ErrorReport]]:
    """Error versus training-set size with a fixed-size test set.

    Per seed the test set is drawn once and shared by all sizes; training
    sets are nested prefixes of one permutation of the remaining subjects.
    MLP validation takes 25% of the train size from what is left.
    """
    sizes = [int(s) for s in train_sizes]
    if not sizes or min(sizes) < 1:
        raise ValueError("train sizes must be positive")
    if max(sizes) + test_size > len(d):
        raise DataError(
            f"infeasible sweep: train size {max(sizes)} + test size {test_size} exceeds {len(d)} examples"
        )
    seeds = [base_seed + i for i in range(n_runs)]
    if observer is not None:
        jobs = 1
    per_seed = _map(_guarded, [(_sweep_one, s, d, spec, s, sizes, test_size, observer) for s in seeds], jobs)
    reports = []
    for k, size in enumerate(sizes):
        runs = [per_seed[i][k] for i in range(len(seeds))]
        reports.append((size, aggregate(d.name, "sweep", spec.summary(), runs, size=size)))
    return reports


def _loo_one(d: Dataset, spec: ModelSpec, i: int, seed: int) -> float:
    X, y = d.features(), d.labels()
    others = np.array([j for j in range(len(d)) if j != i], dtype=np.int64)
    Xva = yva = None
    tr = others
    if spec.kind == "mlp":
        rng = np.random.default_rng([seed, i])
        perm = rng.permutation(others)
        n_val = max(1, int(round(LOO_VAL_FRACTION * len(others))))
        if n_val >= len(others):
            raise DataError("too few examples to carve a validation set")
        tr, va = np.sort(perm[n_val:]), np.sort(perm[:n_val])
        Xva, yva = X[va], y[va]
    m = fit_model(spec, X[tr], y[tr], Xva, yva, seed + i)
    return float(predict_many(m, X[i:i + 1])[0])


def leave_one_out(d: Dataset, spec: ModelSpec, seed: int = 0, jobs: int = 1) -> ErrorReport:
    """Train on all examples but one, predict it, for every example."""
    n = len(d)
    if n < 2:
        raise DataError("leave-one-out needs at least 2 examples")
    y = d.labels()
    preds = np.array(_map(_guarded, [(_loo_one, seed + i, d, spec, i, seed) for i in range(n)], jobs))
    for i, p in enumerate(preds):
        if not p > 0:
            raise RunFailure(seed + i, OutOfRangeError(f"held-out example {i}: predicted {p!r} Hz"))
    run = RunResult(seed, rms_hz(preds, y), rms_octave(preds, y), n, n - 1, n - 1)
    return aggregate(d.name, "loo", spec.summary(), [run], size=n - 1, note=LOO_NOTE)


def loo_predictions(d: Dataset, spec: ModelSpec, seed: int = 0) -> np.ndarray:
    return np.array([_loo_one(d, spec, i, seed) for i in range(len(d))])


def _mix_one(source: Dataset, target: Dataset, spec: ModelSpec, seed: int, ratios,
             observer: Optional[Observer]) -> RunResult:
    Xt, yt = target.features(), target.labels()
    sp = make_split(target, ratios, seed)
    parts_X, parts_y = [], []
    if len(source):
        Xs, ys = source.features(), source.labels()
        src_train = make_split(source, ratios, seed).train
        sX, sy = _gather(Xs, ys, src_train, "source_train", observer)
        parts_X.append(sX)
        parts_y.append(sy)
    tX, ty = _gather(Xt, yt, sp.train, "train", observer)
    parts_X += [tX, tX]
    parts_y += [ty, ty]
    Xtr = np.vstack(parts_X)
    ytr = np.concatenate(parts_y)
    Xva, yva = _gather(Xt, yt, sp.validation, "validation", observer) if spec.kind == "mlp" else (None, None)
    m = fit_model(spec, Xtr, ytr, Xva, yva, seed)
    Xte, yte = _gather(Xt, yt, sp.test, "test", observer)
    rh, ro, _ = _evaluate(m, Xte, yte)
    return RunResult(seed, rh, ro, len(sp.test), Xtr.shape[0])


def domain_mix(
    source: Dataset,
    target: Dataset,
    spec: ModelSpec,
    n_runs: int = 9,
    base_seed: int = 0,
    ratios: Sequence[float] = DEFAULT_RATIOS,
    jobs: int = 1,
    observer: Optional[Observer] = None,
) -> ErrorReport:
    """Train on the source training split plus the target training split twice; test on target.

    Both datasets are split with the same seed. The normalizer is fitted on
    the mixed training rows; validation and test come from the target only.
    """
    for ds in (source, target):
        if any(r.anthro is None for r in ds.records):
            raise DataError(f"dataset {ds.name!r} lacks anthropometry for some records")
        if any(r.n1_label_hz is None for r in ds.records):
            raise DataError(f"dataset {ds.name!r} has unlabelled records")
    seeds = [base_seed + i for i in range(n_runs)]
    if observer is not None:
        jobs = 1
    runs = _map(_guarded, [(_mix_one, s, source, target, spec, s, ratios, observer) for s in seeds], jobs)
    return aggregate(target.name, f"mix:{source.name}", spec.summary(), runs)


@dataclass(frozen=True)
class OverlapRow:
    feature: str
    overlap: float
    n_bins: int
    bin_width: float
    a_min: float
    a_max: float
    a_mean: float
    b_min: float
    b_max: float
    b_mean: float


def histogram_overlap(a: np.ndarray, b: np.ndarray) -> tuple[float, np.ndarray]:
    """Intersection of the two normalised histograms on shared Freedman-Diaconis bins."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise ValueError("overlap needs non-empty samples")
    edges = np.histogram_bin_edges(np.concatenate([a, b]), bins="fd")
    ha, _ = np.histogram(a, bins=edges)
    hb, _ = np.histogram(b, bins=edges)
    return float(np.minimum(ha / a.size, hb / b.size).sum()), edges


def feature_overlap_report(a: Dataset, b: Dataset) -> list[OverlapRow]:
    Xa, Xb = a.features(), b.features()
    rows = []
    for k, name in enumerate(FEATURE_NAMES):
        ov, edges = histogram_overlap(Xa[:, k], Xb[:, k])
        rows.append(
            OverlapRow(
                feature=name,
                overlap=ov,
                n_bins=len(edges) - 1,
                bin_width=float(edges[1] - edges[0]) if len(edges) > 1 else 0.0,
                a_min=float(Xa[:, k].min()),
                a_max=float(Xa[:, k].max()),
                a_mean=float(Xa[:, k].mean()),
                b_min=float(Xb[:, k].min()),
                b_max=float(Xb[:, k].max()),
                b_mean=float(Xb[:, k].mean()),
            )
        )
    return rows
