"""Pinna anthropometry: the nine CIPIC-style features, keypoint distances, z-scoring."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

FEATURE_NAMES = ("d1", "d2", "d3", "d4", "d5", "d6", "d7", "rotation", "flare")
DISTANCE_NAMES = FEATURE_NAMES[:7]


class AnthroError(ValueError):
    pass


class DegenerateFeatureError(AnthroError):
    def __init__(self, feature: str):
        super().__init__(f"feature {feature!r} is constant over the training set")
        self.feature = feature


@dataclass(frozen=True)
class AnthroVector:
    d1: float
    d2: float
    d3: float
    d4: float
    d5: float
    d6: float
    d7: float
    rotation_deg: float
    flare_deg: float

    def __post_init__(self):
        vals = self.as_array()
        if not np.all(np.isfinite(vals)):
            raise AnthroError(f"non-finite anthropometry: {vals.tolist()}")
        if np.any(vals[:7] <= 0):
            raise AnthroError(f"distances must be positive: {vals[:7].tolist()}")

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.d1, self.d2, self.d3, self.d4, self.d5, self.d6, self.d7, self.rotation_deg, self.flare_deg],
            dtype=np.float64,
        )

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "AnthroVector":
        if len(values) != 9:
            raise AnthroError(f"expected 9 features, got {len(values)}")
        return cls(*(float(v) for v in values))


def stack(vectors: Iterable[AnthroVector]) -> np.ndarray:
    rows = [v.as_array() for v in vectors]
    if not rows:
        return np.zeros((0, 9))
    return np.vstack(rows)


@dataclass(frozen=True)
class KeypointMapping:
    """Keypoint index pairs approximating d1..d7.

    Which keypoints approximate which CIPIC distance depends on the
    keypoint scheme; mappings are supplied as configuration.
    """

    pairs: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if len(self.pairs) != 7:
            raise AnthroError(f"mapping must specify all 7 distances, got {len(self.pairs)}")
        for a, b in self.pairs:
            if a < 0 or b < 0:
                raise AnthroError(f"negative keypoint index in pair ({a}, {b})")

    def validate(self, n_points: int) -> None:
        for name, (a, b) in zip(DISTANCE_NAMES, self.pairs):
            if a >= n_points or b >= n_points:
                raise AnthroError(f"{name} uses keypoint ({a}, {b}) but only {n_points} points exist")

    def to_dict(self) -> dict:
        return {name: [a, b] for name, (a, b) in zip(DISTANCE_NAMES, self.pairs)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "KeypointMapping":
        missing = [n for n in DISTANCE_NAMES if n not in d]
        if missing:
            raise AnthroError(f"keypoint mapping lacks {missing}")
        return cls(tuple((int(d[n][0]), int(d[n][1])) for n in DISTANCE_NAMES))


def load_keypoint_mapping(path: str | Path) -> KeypointMapping:
    with open(path, encoding="utf-8") as fh:
        return KeypointMapping.from_dict(json.load(fh))


def read_keypoints(path: str | Path) -> np.ndarray:
    """Read an ``x,y,z`` CSV (millimetres); a non-numeric first row is a header."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for i, row in enumerate(csv.reader(fh)):
            if not row or row[0].startswith("#"):
                continue
            try:
                rows.append([float(v) for v in row[:3]])
            except ValueError:
                if i == 0:
                    continue
                raise AnthroError(f"{path}: bad keypoint row {row}") from None
    pts = np.asarray(rows, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise AnthroError(f"{path}: expected rows of x,y,z")
    return pts


def write_keypoints(path: str | Path, points: np.ndarray) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "z"])
        for x, y, z in np.asarray(points, dtype=np.float64):
            w.writerow([repr(float(x)), repr(float(y)), repr(float(z))])


def mirror_keypoints(points: np.ndarray) -> np.ndarray:
    pts = np.array(points, dtype=np.float64, copy=True)
    pts[:, 0] = -pts[:, 0]
    return pts


def distances_from_keypoints(
    points: np.ndarray, mapping: KeypointMapping, rotation_deg: float, flare_deg: float
) -> AnthroVector:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise AnthroError("keypoints must have shape (n, 3)")
    mapping.validate(pts.shape[0])
    dists = []
    for name, (a, b) in zip(DISTANCE_NAMES, mapping.pairs):
        d_mm = float(np.linalg.norm(pts[a] - pts[b]))
        if d_mm == 0.0:
            raise AnthroError(f"{name}: keypoints {a} and {b} coincide")
        dists.append(d_mm / 10.0)
    return AnthroVector(*dists, float(rotation_deg), float(flare_deg))


@dataclass(frozen=True, eq=False)
class Normalizer:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        for name in ("mean", "std"):
            arr = np.array(getattr(self, name), dtype=np.float64, copy=True)
            if arr.shape != (9,):
                raise AnthroError(f"normalizer {name} must have 9 entries")
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        bad = [FEATURE_NAMES[i] for i in np.flatnonzero(~(self.std > 0))]
        if bad:
            raise DegenerateFeatureError(bad[0])

    def __eq__(self, other):
        if not isinstance(other, Normalizer):
            return NotImplemented
        return np.array_equal(self.mean, other.mean) and np.array_equal(self.std, other.std)

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.std

    def inverse(self, Z: np.ndarray) -> np.ndarray:
        return np.asarray(Z, dtype=np.float64) * self.std + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Normalizer":
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))


def fit_normalizer(train: Sequence[AnthroVector] | np.ndarray) -> Normalizer:
    """Per-feature mean and population standard deviation of the training rows."""
    X = train if isinstance(train, np.ndarray) else stack(train)
    if X.ndim != 2 or X.shape[1] != 9:
        raise AnthroError("training features must have shape (n, 9)")
    if X.shape[0] < 2:
        raise AnthroError("need at least 2 training vectors to fit a normalizer")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    for i in range(9):
        # relative test: a constant column can still show rounding-level spread
        if std[i] <= 1e-12 * max(1.0, abs(mean[i])):
            raise DegenerateFeatureError(FEATURE_NAMES[i])
    return Normalizer(mean, std)


def apply_normalizer(n: Normalizer, v: AnthroVector | np.ndarray) -> np.ndarray:
    x = v.as_array() if isinstance(v, AnthroVector) else v
    return n.transform(x)

