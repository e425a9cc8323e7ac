"""N1 predictors: training-set mean, ridge-regularised linear model, 3-hidden-layer MLP."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import solve_triangular

from . import _backend
from ._mlp_py import _forward_cache, unpack
from ._io import atomic_write_text
from .anthro import AnthroVector, Normalizer

KINDS = ("naive", "linear", "mlp")
ACTIVATIONS = {"relu": 0, "tanh": 1}
PAPER_HIDDEN_UNITS = (20, 40)
N_FEATURES = 9
# MLP targets are trained in kHz
TARGET_SCALE_HZ = 1000.0
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

SNAPSHOT_FORMAT = "pinna-n1-model"
SNAPSHOT_VERSION = 1


class NumericError(ArithmeticError):
    """Training or solving failed numerically."""


class ConditioningError(NumericError):
    pass


class DivergenceError(NumericError):
    pass


class OutOfRangeError(NumericError):
    """A trained model predicted a frequency the metrics cannot score."""


@dataclass(frozen=True)
class ModelSpec:
    kind: str = "mlp"
    hidden_units: int = 40
    hidden_layers: int = 3
    activation: str = "tanh"
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 2000
    patience: int = 100
    ridge: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"model kind must be one of {KINDS}, got {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {tuple(ACTIVATIONS)}, got {self.activation!r}")
        if self.kind == "mlp" and self.hidden_layers != 3:
            raise ValueError("the MLP has exactly 3 hidden layers")
        if self.hidden_units < 1 or self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ValueError("hidden_units, batch_size, max_epochs and patience must be positive")
        if self.ridge < 0:
            raise ValueError("ridge must be non-negative")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")

    @property
    def replication(self) -> bool:
        """False for MLP widths the reference experiments did not use."""
        return self.kind != "mlp" or self.hidden_units in PAPER_HIDDEN_UNITS

    @property
    def sizes(self) -> list[int]:
        return [N_FEATURES] + [self.hidden_units] * self.hidden_layers + [1]

    def summary(self) -> str:
        if self.kind == "naive":
            return "naive"
        if self.kind == "linear":
            return f"linear(ridge={self.ridge:g})"
        tag = "" if self.replication else ",non-replication"
        return (
            f"mlp({self.hidden_layers}x{self.hidden_units},{self.activation},lr={self.learning_rate:g},"
            f"bs={self.batch_size},epochs={self.max_epochs},patience={self.patience}{tag})"
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(**d)


@dataclass(frozen=True, eq=False)
class TrainedModel:
    spec: ModelSpec
    params: dict
    normalizer: Optional[Normalizer] = None
    # (epoch, train RMS Hz, validation RMS Hz); train RMS is the running
    # mini-batch value before each update
    training_log: tuple = ()
    best_epoch: Optional[int] = None

    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        if self.spec.kind != "mlp":
            raise ValueError("only MLP models have layers")
        return unpack(self.params["theta"], self.spec.sizes)


def init_params(sizes: Sequence[int], rng: np.random.Generator) -> np.ndarray:
    """Weights uniform in +-sqrt(6 / (fan_in + fan_out)); zero biases."""
    parts = []
    for a, b in zip(sizes[:-1], sizes[1:]):
        lim = np.sqrt(6.0 / (a + b))
        parts.append(rng.uniform(-lim, lim, size=a * b))
        parts.append(np.zeros(b))
    return np.concatenate(parts)


def train_naive(labels_hz: Sequence[float]) -> TrainedModel:
    y = np.asarray(labels_hz, dtype=np.float64)
    if y.size == 0:
        raise ValueError("naive model needs at least one training label")
    return TrainedModel(ModelSpec(kind="naive"), {"mean": float(np.mean(y))})


def train_linear(
    X: np.ndarray, y: Sequence[float], ridge: float = 0.0, normalizer: Optional[Normalizer] = None
) -> TrainedModel:
    """Minimise ``|Xw + b - y|^2 + ridge |w|^2`` with an unpenalised bias.

    Centring removes the bias from the problem; the remaining ridge system
    is solved by QR of the stacked matrix ``[Xc; sqrt(ridge) I]``.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError("X must be (n, p) with one label per row")
    n, p = X.shape
    if ridge < 0:
        raise ValueError("ridge must be non-negative")
    if ridge == 0 and n < p + 1:
        raise ConditioningError(f"{n} examples cannot determine {p} weights and a bias; use ridge > 0")
    xm = X.mean(axis=0)
    ym = float(y.mean())
    Xc = X - xm
    yc = y - ym
    if ridge > 0:
        A = np.vstack([Xc, np.sqrt(ridge) * np.eye(p)])
        rhs = np.concatenate([yc, np.zeros(p)])
    else:
        A, rhs = Xc, yc
    Q, R = np.linalg.qr(A, mode="reduced")
    diag = np.abs(np.diag(R))
    if diag.min() <= 1e-10 * max(diag.max(), 1e-300):
        raise ConditioningError("normal equations are singular or nearly so; use ridge > 0")
    w = solve_triangular(R, Q.T @ rhs, lower=False)
    b = ym - float(xm @ w)
    spec = ModelSpec(kind="linear", ridge=float(ridge))
    return TrainedModel(spec, {"weights": w, "bias": b}, normalizer)


def _rms(a: np.ndarray, b: np.ndarray) -> float:
    d = a - b
    return float(np.sqrt(np.mean(d * d)))


def train_mlp(
    X_train: np.ndarray,
    y_train: Sequence[float],
    X_val: np.ndarray,
    y_val: Sequence[float],
    spec: ModelSpec,
    normalizer: Optional[Normalizer] = None,
    kernels=None,
) -> TrainedModel:
    """Adam on mini-batch MSE with early stopping on validation RMS.

    ``X_*`` are model inputs (already normalised); labels are in Hz. The
    returned parameters are the snapshot with the lowest validation RMS.
    """
    if spec.kind != "mlp":
        raise ValueError("train_mlp needs an mlp ModelSpec")
    K = kernels if kernels is not None else _backend.kernels
    Xt = np.ascontiguousarray(X_train, dtype=np.float64)
    Xv = np.ascontiguousarray(X_val, dtype=np.float64)
    yt = np.asarray(y_train, dtype=np.float64) / TARGET_SCALE_HZ
    yv = np.asarray(y_val, dtype=np.float64) / TARGET_SCALE_HZ
    if Xv.shape[0] == 0:
        raise ValueError("MLP training needs a non-empty validation set")
    if Xt.shape[0] == 0:
        raise ValueError("MLP training needs a non-empty training set")
    if Xt.shape[1] != N_FEATURES or Xv.shape[1] != N_FEATURES:
        raise ValueError(f"expected {N_FEATURES} input features")

    rng = np.random.default_rng(spec.seed)
    sizes = spec.sizes
    act = ACTIVATIONS[spec.activation]
    theta = init_params(sizes, rng)
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    n = Xt.shape[0]
    step = 0
    best_rms = np.inf
    best_theta = theta.copy()
    best_epoch = 0
    since = 0
    log = []
    for epoch in range(1, spec.max_epochs + 1):
        order = rng.permutation(n).astype(np.int64)
        step, sse = K.adam_epoch(
            theta, m, v, sizes, Xt, yt, order, spec.batch_size, spec.learning_rate,
            ADAM_BETA1, ADAM_BETA2, ADAM_EPS, step, act,
        )
        if not np.isfinite(sse) or not np.all(np.isfinite(theta)):
            raise DivergenceError(f"non-finite loss at epoch {epoch} (seed {spec.seed}); lower the learning rate")
        val_rms = _rms(K.forward(theta, sizes, Xv, act), yv) * TARGET_SCALE_HZ
        log.append((epoch, float(np.sqrt(sse / n)) * TARGET_SCALE_HZ, val_rms))
        if val_rms < best_rms:
            best_rms = val_rms
            best_theta = theta.copy()
            best_epoch = epoch
            since = 0
        else:
            since += 1
            if since >= spec.patience:
                break
    best_theta.flags.writeable = False
    return TrainedModel(spec, {"theta": best_theta}, normalizer, tuple(log), best_epoch)


def predict_many(m: TrainedModel, X_raw: np.ndarray, kernels=None) -> np.ndarray:
    """Predictions in Hz for raw (unnormalised) feature rows."""
    X = np.atleast_2d(np.asarray(X_raw, dtype=np.float64))
    kind = m.spec.kind
    if kind == "naive":
        return np.full(X.shape[0], m.params["mean"])
    Z = m.normalizer.transform(X) if m.normalizer is not None else X
    if kind == "linear":
        return Z @ m.params["weights"] + m.params["bias"]
    K = kernels if kernels is not None else _backend.kernels
    out = K.forward(np.ascontiguousarray(m.params["theta"]), m.spec.sizes, np.ascontiguousarray(Z),
                    ACTIVATIONS[m.spec.activation])
    return out * TARGET_SCALE_HZ


def predict(m: TrainedModel, v: AnthroVector) -> float:
    return float(predict_many(m, v.as_array()[None, :])[0])


def gradient_check(
    spec: ModelSpec,
    n_probes: int = 50,
    seed: int = 0,
    batch: int = 16,
    step: float = 1e-4,
    kink_margin: float = 0.0,
    kernels=None,
) -> float:
    """Worst relative gap between analytic and central-difference gradients.

    Each probe draws fresh parameters (non-zero biases), a random batch and
    one parameter index. The gap is ``|a - f| / max(|a|, |f|, 1e-3 * |g|_inf)``
    where the last term keeps rounding noise on negligible components from
    dominating. For relu, probes whose perturbation flips any unit, or that
    leave a pre-activation within ``kink_margin`` of zero, are redrawn.
    """
    K = kernels if kernels is not None else _backend.kernels
    rng = np.random.default_rng(seed)
    sizes = spec.sizes
    act = ACTIVATIONS[spec.activation]
    P = sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))

    def pattern(theta, X):
        _, pre, _ = _forward_cache(theta, sizes, X, act)
        return [z > 0 for z in pre[:-1]], min(float(np.min(np.abs(z))) for z in pre[:-1])

    worst = 0.0
    done = 0
    attempts = 0
    while done < n_probes:
        attempts += 1
        if attempts > 100 * n_probes:
            raise NumericError("could not find probes away from relu kinks")
        theta = init_params(sizes, rng) + np.concatenate(
            [np.zeros(a * b) if k % 2 == 0 else rng.normal(0, 0.1, size=b)
             for a, b in zip(sizes[:-1], sizes[1:]) for k in (0, 1)]
        )
        X = rng.normal(size=(batch, sizes[0]))
        y = rng.normal(size=batch)
        i = int(rng.integers(P))
        tp = theta.copy()
        tp[i] += step
        tm = theta.copy()
        tm[i] -= step
        if act == ACTIVATIONS["relu"]:
            p0, gap = pattern(theta, X)
            if gap <= kink_margin:
                continue
            pp, _ = pattern(tp, X)
            pm, _ = pattern(tm, X)
            if any((a != b).any() or (a != c).any() for a, b, c in zip(p0, pp, pm)):
                continue
        _, g = K.loss_grad(theta, sizes, X, y, act)
        lp, _ = K.loss_grad(tp, sizes, X, y, act)
        lm, _ = K.loss_grad(tm, sizes, X, y, act)
        fd = (lp - lm) / (2 * step)
        denom = max(abs(g[i]), abs(fd), 1e-3 * float(np.max(np.abs(g))))
        if denom > 0:
            worst = max(worst, abs(g[i] - fd) / denom)
        done += 1
    return worst


def _params_to_json(m: TrainedModel) -> dict:
    if m.spec.kind == "naive":
        return {"mean": m.params["mean"]}
    if m.spec.kind == "linear":
        return {"weights": np.asarray(m.params["weights"]).tolist(), "bias": m.params["bias"]}
    return {"theta": np.asarray(m.params["theta"]).tolist(), "sizes": m.spec.sizes}


def save_model(m: TrainedModel, path: str | Path) -> None:
    """Write a JSON snapshot; floats use shortest round-trip repr, so reloads are exact."""
    doc = {
        "format": SNAPSHOT_FORMAT,
        "version": SNAPSHOT_VERSION,
        "spec": m.spec.to_dict(),
        "normalizer": None if m.normalizer is None else m.normalizer.to_dict(),
        "params": _params_to_json(m),
        "best_epoch": m.best_epoch,
        "training_log": [list(r) for r in m.training_log],
    }
    atomic_write_text(path, json.dumps(doc) + "\n")


def load_model(path: str | Path) -> TrainedModel:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != SNAPSHOT_FORMAT or doc.get("version") != SNAPSHOT_VERSION:
        raise ValueError(f"{path}: not a version-{SNAPSHOT_VERSION} model snapshot")
    spec = ModelSpec.from_dict(doc["spec"])
    p = doc["params"]
    if spec.kind == "naive":
        params = {"mean": float(p["mean"])}
    elif spec.kind == "linear":
        params = {"weights": np.asarray(p["weights"], dtype=np.float64), "bias": float(p["bias"])}
    else:
        if list(p["sizes"]) != spec.sizes:
            raise ValueError(f"{path}: layer sizes do not match the model spec")
        params = {"theta": np.asarray(p["theta"], dtype=np.float64)}
    norm = None if doc["normalizer"] is None else Normalizer.from_dict(doc["normalizer"])
    log = tuple(tuple(r) for r in doc.get("training_log", []))
    return TrainedModel(spec, params, norm, log, doc.get("best_epoch"))
