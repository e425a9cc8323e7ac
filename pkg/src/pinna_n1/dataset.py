"""Datasets of labelled ears and the JSON manifest interchange format.

A manifest is one UTF-8 JSON file::

    {
      "format_version": 1,
      "name": "hutubs_measured",
      "acquisition": "measured",            # or "simulated"
      "sample_rate_hz": 44100,
      "direction": {"azimuth_deg": 0, "elevation_deg": 0},
      "deduplicate_identical": false,
      "hrir_length": 256,                   # default for records
      "anthro_csv": "anthro.csv",           # header d1..d7,rotation,flare
      "keypoint_mapping": "mapping.json",   # or an inline {"d1": [i, j], ...}
      "records": [
        {"subject_id": "S01", "ear": "left",
         "anthro_csv_row": 0,               # or "keypoints_file" + rotation_deg/flare_deg
         "hrir_file": "hrir/S01_left.f32",  # and/or "n1_hz": 8123.4
         "prominent": true}
      ]
    }

Relative paths resolve against the manifest's directory. HRIR files hold
raw little-endian float32 samples. ``anthro_csv_row`` counts data rows
from zero.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from ._io import atomic_write_bytes, atomic_write_text
from .anthro import (
    FEATURE_NAMES,
    AnthroError,
    AnthroVector,
    KeypointMapping,
    distances_from_keypoints,
    mirror_keypoints,
    read_keypoints,
    write_keypoints,
)
from .notch import ExtractionParams, Hrir, NotchFeatures, extract_n1

MANIFEST_VERSION = 1
EARS = ("left", "right")
ACQUISITIONS = ("simulated", "measured")
ANTHRO_COLUMNS = ("d1", "d2", "d3", "d4", "d5", "d6", "d7", "rotation", "flare")


class DataError(ValueError):
    """Malformed or inconsistent dataset input."""


class ManifestError(DataError):
    pass


class DuplicateRecordError(DataError):
    pass


@dataclass(frozen=True)
class SubjectRecord:
    subject_id: str
    ear: str
    anthro: Optional[AnthroVector] = None
    keypoints: Optional[tuple] = None
    hrir: Optional[Hrir] = None
    n1_label_hz: Optional[float] = None
    # None until extraction (or a precomputed label) has run
    prominent: Optional[bool] = None

    def __post_init__(self):
        if self.ear not in EARS:
            raise DataError(f"{self.subject_id}: ear must be 'left' or 'right', got {self.ear!r}")
        if self.hrir is None and self.n1_label_hz is None:
            raise DataError(f"{self.subject_id}/{self.ear}: record needs an HRIR or an N1 label")
        if self.keypoints is not None and not isinstance(self.keypoints, tuple):
            pts = np.asarray(self.keypoints, dtype=np.float64)
            object.__setattr__(self, "keypoints", tuple(tuple(float(c) for c in p) for p in pts))

    @property
    def key(self) -> tuple[str, str]:
        return (self.subject_id, self.ear)

    def keypoints_array(self) -> np.ndarray:
        return np.asarray(self.keypoints, dtype=np.float64)


@dataclass(frozen=True)
class Dataset:
    name: str
    acquisition: str
    records: tuple[SubjectRecord, ...]
    direction: tuple[float, float] = (0.0, 0.0)
    sample_rate_hz: Optional[float] = None
    deduplicate_identical: bool = False
    keypoint_mapping: Optional[KeypointMapping] = None

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        object.__setattr__(self, "direction", (float(self.direction[0]), float(self.direction[1])))
        if self.acquisition not in ACQUISITIONS:
            raise DataError(f"acquisition must be one of {ACQUISITIONS}, got {self.acquisition!r}")
        seen = set()
        for r in self.records:
            if r.key in seen:
                raise DuplicateRecordError(f"duplicate record {r.key} in dataset {self.name!r}")
            seen.add(r.key)
            if r.hrir is not None:
                if (r.hrir.azimuth_deg, r.hrir.elevation_deg) != self.direction:
                    raise DataError(f"{r.key}: HRIR direction differs from dataset direction {self.direction}")
                if self.sample_rate_hz is not None and r.hrir.sample_rate_hz != self.sample_rate_hz:
                    raise DataError(
                        f"{r.key}: sample rate {r.hrir.sample_rate_hz} differs from dataset rate {self.sample_rate_hz}"
                    )

    def __len__(self):
        return len(self.records)

    def subset(self, indices: Iterable[int]) -> "Dataset":
        return replace(self, records=tuple(self.records[i] for i in indices))

    def features(self) -> np.ndarray:
        missing = [r.key for r in self.records if r.anthro is None]
        if missing:
            raise DataError(f"{self.name}: records without anthropometry, e.g. {missing[0]}")
        if not self.records:
            return np.zeros((0, 9))
        return np.vstack([r.anthro.as_array() for r in self.records])

    def labels(self) -> np.ndarray:
        missing = [r.key for r in self.records if r.n1_label_hz is None]
        if missing:
            raise DataError(f"{self.name}: records without an N1 label, e.g. {missing[0]}")
        return np.array([r.n1_label_hz for r in self.records], dtype=np.float64)

    def subject_groups(self) -> list[list[int]]:
        """Record indices grouped by subject, in first-appearance order."""
        groups: dict[str, list[int]] = {}
        for i, r in enumerate(self.records):
            groups.setdefault(r.subject_id, []).append(i)
        return list(groups.values())


def _resolve(base: Path, rel: str) -> Path:
    p = Path(rel)
    return p if p.is_absolute() else base / p


def _read_anthro_csv(path: Path) -> list[AnthroVector]:
    if not path.exists():
        raise ManifestError(f"anthropometry file {path} does not exist")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(row for row in fh if not row.startswith("#"))
        cols = reader.fieldnames or []
        missing = [c for c in ANTHRO_COLUMNS if c not in cols]
        if missing:
            raise ManifestError(f"{path}: missing columns {missing}")
        rows = []
        for i, row in enumerate(reader):
            try:
                rows.append(AnthroVector.from_array([float(row[c]) for c in ANTHRO_COLUMNS]))
            except (ValueError, AnthroError) as exc:
                raise ManifestError(f"{path}: data row {i}: {exc}") from None
    return rows


def _read_hrir(path: Path, length: int, fs: float, direction: tuple[float, float]) -> Hrir:
    if not path.exists():
        raise ManifestError(f"HRIR file {path} does not exist")
    raw = path.read_bytes()
    if len(raw) != 4 * length:
        raise ManifestError(f"{path}: expected {length} float32 samples, found {len(raw) / 4:g}")
    samples = np.frombuffer(raw, dtype="<f4").astype(np.float32)
    return Hrir(samples, fs, direction[0], direction[1])


def _require(obj: dict, key: str, where: str):
    if key not in obj:
        raise ManifestError(f"{where}: missing field {key!r}")
    return obj[key]


def load_manifest(path: str | Path) -> Dataset:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise ManifestError(f"{path}: manifest must be a JSON object")
    base = path.parent
    version = doc.get("format_version", MANIFEST_VERSION)
    if version != MANIFEST_VERSION:
        raise ManifestError(f"{path}: unsupported format_version {version}")

    name = _require(doc, "name", str(path))
    acquisition = _require(doc, "acquisition", str(path))
    fs = float(_require(doc, "sample_rate_hz", str(path)))
    direction_doc = doc.get("direction", {})
    direction = (float(direction_doc.get("azimuth_deg", 0.0)), float(direction_doc.get("elevation_deg", 0.0)))
    default_len = doc.get("hrir_length")

    anthro_rows = None
    if doc.get("anthro_csv"):
        anthro_rows = _read_anthro_csv(_resolve(base, doc["anthro_csv"]))

    mapping = None
    km = doc.get("keypoint_mapping")
    if isinstance(km, str):
        try:
            mapping = KeypointMapping.from_dict(json.loads(_resolve(base, km).read_text(encoding="utf-8")))
        except (OSError, json.JSONDecodeError, AnthroError) as exc:
            raise ManifestError(f"{path}: bad keypoint mapping: {exc}") from None
    elif isinstance(km, dict):
        mapping = KeypointMapping.from_dict(km)

    recs_doc = _require(doc, "records", str(path))
    if not isinstance(recs_doc, list):
        raise ManifestError(f"{path}: 'records' must be a list")

    records = []
    seen = set()
    for i, rd in enumerate(recs_doc):
        where = f"{path}: record {i}"
        sid = str(_require(rd, "subject_id", where))
        ear = _require(rd, "ear", where)
        if (sid, ear) in seen:
            raise DuplicateRecordError(f"{where}: duplicate record ({sid}, {ear})")
        seen.add((sid, ear))
        if "sample_rate_hz" in rd and float(rd["sample_rate_hz"]) != fs:
            raise ManifestError(f"{where}: sample rate {rd['sample_rate_hz']} differs from dataset rate {fs}")

        keypoints = None
        if "keypoints_file" in rd:
            kp_path = _resolve(base, rd["keypoints_file"])
            if not kp_path.exists():
                raise ManifestError(f"{where}: keypoints file {kp_path} does not exist")
            keypoints = read_keypoints(kp_path)

        anthro = None
        if "anthro_csv_row" in rd:
            if anthro_rows is None:
                raise ManifestError(f"{where}: anthro_csv_row given but manifest has no anthro_csv")
            row = int(rd["anthro_csv_row"])
            if not 0 <= row < len(anthro_rows):
                raise ManifestError(f"{where}: anthro_csv_row {row} out of range")
            anthro = anthro_rows[row]
        elif keypoints is not None:
            if mapping is None:
                raise ManifestError(f"{where}: keypoints given but manifest has no keypoint_mapping")
            pts = mirror_keypoints(keypoints) if ear == "right" else keypoints
            try:
                anthro = distances_from_keypoints(
                    pts, mapping, float(_require(rd, "rotation_deg", where)), float(_require(rd, "flare_deg", where))
                )
            except AnthroError as exc:
                raise ManifestError(f"{where}: {exc}") from None

        hrir = None
        if "hrir_file" in rd:
            length = rd.get("hrir_length", default_len)
            if length is None:
                raise ManifestError(f"{where}: no hrir_length in record or manifest")
            hrir = _read_hrir(_resolve(base, rd["hrir_file"]), int(length), fs, direction)

        n1 = rd.get("n1_hz")
        prominent = rd.get("prominent")
        if n1 is not None and prominent is None:
            prominent = True
        if hrir is None and n1 is None:
            raise ManifestError(f"{where}: needs 'hrir_file' or 'n1_hz'")
        records.append(
            SubjectRecord(
                subject_id=sid,
                ear=ear,
                anthro=anthro,
                keypoints=keypoints,
                hrir=hrir,
                n1_label_hz=None if n1 is None else float(n1),
                prominent=prominent,
            )
        )
    try:
        return Dataset(
            name=name,
            acquisition=acquisition,
            records=tuple(records),
            direction=direction,
            sample_rate_hz=fs,
            deduplicate_identical=bool(doc.get("deduplicate_identical", False)),
            keypoint_mapping=mapping,
        )
    except DataError as exc:
        raise ManifestError(f"{path}: {exc}") from None


def save_manifest(d: Dataset, path: str | Path) -> Path:
    """Write ``d`` as a manifest plus sidecar files next to it."""
    path = Path(path)
    base = path.parent
    stem = path.stem
    fs = d.sample_rate_hz
    if fs is None:
        rates = {r.hrir.sample_rate_hz for r in d.records if r.hrir is not None}
        fs = rates.pop() if len(rates) == 1 else 48000.0

    anthro_buf = io.StringIO()
    aw = csv.writer(anthro_buf, lineterminator="\n")
    aw.writerow(ANTHRO_COLUMNS)
    n_anthro = 0
    hrir_lengths = {len(r.hrir) for r in d.records if r.hrir is not None}
    default_len = hrir_lengths.pop() if len(hrir_lengths) == 1 else None

    recs = []
    for r in d.records:
        rd: dict = {"subject_id": r.subject_id, "ear": r.ear}
        if r.anthro is not None:
            aw.writerow([repr(float(v)) for v in r.anthro.as_array()])
            rd["anthro_csv_row"] = n_anthro
            n_anthro += 1
        if r.keypoints is not None:
            kp_rel = f"{stem}_keypoints/{r.subject_id}_{r.ear}.csv"
            (base / kp_rel).parent.mkdir(parents=True, exist_ok=True)
            write_keypoints(base / kp_rel, r.keypoints_array())
            rd["keypoints_file"] = kp_rel
            if r.anthro is not None:
                rd["rotation_deg"] = r.anthro.rotation_deg
                rd["flare_deg"] = r.anthro.flare_deg
        if r.hrir is not None:
            rel = f"{stem}_hrir/{r.subject_id}_{r.ear}.f32"
            atomic_write_bytes(base / rel, np.asarray(r.hrir.samples, dtype="<f4").tobytes())
            rd["hrir_file"] = rel
            if default_len is None:
                rd["hrir_length"] = len(r.hrir)
        if r.n1_label_hz is not None:
            rd["n1_hz"] = r.n1_label_hz
        if r.prominent is not None:
            rd["prominent"] = r.prominent
        recs.append(rd)

    doc = {
        "format_version": MANIFEST_VERSION,
        "name": d.name,
        "acquisition": d.acquisition,
        "sample_rate_hz": fs,
        "direction": {"azimuth_deg": d.direction[0], "elevation_deg": d.direction[1]},
        "deduplicate_identical": d.deduplicate_identical,
    }
    if default_len is not None:
        doc["hrir_length"] = default_len
    if n_anthro:
        anthro_rel = f"{stem}_anthro.csv"
        atomic_write_text(base / anthro_rel, anthro_buf.getvalue())
        doc["anthro_csv"] = anthro_rel
    if d.keypoint_mapping is not None:
        doc["keypoint_mapping"] = d.keypoint_mapping.to_dict()
    doc["records"] = recs
    atomic_write_text(path, json.dumps(doc, indent=1) + "\n")
    return path


def label_records(d: Dataset, params: ExtractionParams = ExtractionParams()) -> tuple[Dataset, list[Optional[NotchFeatures]]]:
    """Run N1 extraction on every record that has an HRIR.

    Records without an HRIR keep their precomputed label and get ``None``
    in the returned feature list.
    """
    out, feats = [], []
    for r in d.records:
        if r.hrir is None:
            out.append(r)
            feats.append(None)
            continue
        f = extract_n1(r.hrir, params)
        out.append(replace(r, n1_label_hz=f.n1_hz, prominent=f.prominent))
        feats.append(f)
    return replace(d, records=tuple(out)), feats


def filter_records(d: Dataset, min_n1_hz: float = 5000.0, require_prominent: bool = True) -> Dataset:
    """Keep records with N1 >= ``min_n1_hz`` (and a prominent notch if required).

    Records whose extraction found no notch carry no label and are dropped
    either way.
    """
    kept = []
    for r in d.records:
        if r.prominent is None and r.n1_label_hz is None:
            raise DataError(f"{d.name}: record {r.key} has no extracted label; run extraction first")
        if r.n1_label_hz is None:
            continue
        if require_prominent and not r.prominent:
            continue
        if r.n1_label_hz >= min_n1_hz:
            kept.append(r)
    return replace(d, records=tuple(kept))


def _same_ear_content(a: SubjectRecord, b: SubjectRecord) -> bool:
    if a.hrir is not None or b.hrir is not None:
        if a.hrir is None or b.hrir is None or a.hrir != b.hrir:
            return False
    elif a.n1_label_hz != b.n1_label_hz:
        return False
    return a.anthro == b.anthro


def merge_ears(d: Dataset, deduplicate_identical: Optional[bool] = None) -> Dataset:
    """Treat every ear as its own example.

    Orientation is handled at load time, where right-ear keypoints are
    mirrored (x -> -x) before distances are taken; scalar CIPIC features
    are per-ear already. With deduplication on,
    a subject whose two ears are identical keeps only its left ear.
    """
    dedup = d.deduplicate_identical if deduplicate_identical is None else deduplicate_identical
    by_subject: dict[str, dict[str, SubjectRecord]] = {}
    for r in d.records:
        by_subject.setdefault(r.subject_id, {})[r.ear] = r

    out = []
    for r in d.records:
        if dedup and r.ear == "right":
            left = by_subject[r.subject_id].get("left")
            if left is not None and _same_ear_content(left, r):
                continue
        out.append(r)
    return replace(d, records=tuple(out))

