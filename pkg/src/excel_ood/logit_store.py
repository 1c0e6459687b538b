"""Loading, validating, and persisting logit matrices, labels, and manifests.

Interchange formats:

* NPY v1.0, little-endian, C-order. Logits are ``<f4`` or ``<f8`` with shape
  (N, C); labels and score vectors are 1-D (``<i8`` and ``<f8``). Files are
  written with ``<f8`` so that save/load round-trips are bit-exact.
* CSV as a debugging fallback: comma-separated, no header, one sample per
  line. Floats are rendered with shortest round-trip precision, so CSV
  round-trips are also bit-exact for 64-bit payloads.
* Split manifests are JSON: ``{"id_train": ..., "id_val": ..., "id_test":
  ..., "ood": [{"name", "path", "group"}]}``. Each ``id_*`` entry is either
  a logits path or ``{"logits": path, "labels": path}``. Relative paths are
  resolved against the manifest's directory.

All loaded objects are immutable after construction and safe to share
across threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    EmptyPayload,
    IoError,
    LabelOutOfRange,
    LengthMismatch,
    MalformedFile,
    ManifestError,
    NonFiniteValue,
    ShapeError,
)

_NPY_MAGIC = b"\x93NUMPY"


@dataclass(frozen=True)
class LogitMatrix:
    """An (N, C) block of pre-softmax classifier outputs.

    ``values`` is always float64 and C-ordered; row i of the source file is
    sample i. ``source_tag`` carries free-form dataset/split provenance.
    """

    values: np.ndarray
    source_tag: str = ""

    @property
    def num_samples(self) -> int:
        return int(self.values.shape[0])

    @property
    def num_classes(self) -> int:
        return int(self.values.shape[1])


@dataclass(frozen=True)
class LabelVector:
    """Length-N class indices in [0, C), paired with a LogitMatrix."""

    labels: np.ndarray

    def __len__(self) -> int:
        return int(self.labels.shape[0])


@dataclass(frozen=True)
class ScoreVector:
    """Per-sample scalar scores under a named method; higher means more ID."""

    method: str
    scores: np.ndarray

    def __len__(self) -> int:
        return int(self.scores.shape[0])


@dataclass(frozen=True)
class IdSplit:
    logits: Path
    labels: Path | None = None


@dataclass(frozen=True)
class OodSet:
    name: str
    path: Path
    group: str  # "near" or "far"


@dataclass(frozen=True)
class SplitManifest:
    id_train: IdSplit
    id_val: IdSplit
    id_test: IdSplit
    ood_sets: tuple[OodSet, ...] = field(default_factory=tuple)


def as_logit_array(data) -> np.ndarray:
    """Accept a LogitMatrix or a raw array; return float64 (N, C) values.

    Raw arrays are checked for finiteness here because a NaN logit makes
    the class ranking silently ill-defined downstream.
    """
    if isinstance(data, LogitMatrix):
        return data.values  # validated at load time
    values = np.asarray(data, dtype=np.float64)
    if values.ndim != 2:
        raise ShapeError(f"expected a 2-D logit matrix, got ndim={values.ndim}")
    finite = np.isfinite(values)
    if not finite.all():
        row, col = np.argwhere(~finite)[0]
        raise NonFiniteValue(
            f"non-finite logit at row {row}, col {col}", row=int(row), col=int(col)
        )
    return values


def as_label_array(data) -> np.ndarray:
    """Accept a LabelVector or a raw array; return int64 labels."""
    labels = data.labels if isinstance(data, LabelVector) else np.asarray(data)
    return np.asarray(labels, dtype=np.int64)


def _infer_format(path: Path, fmt: str | None) -> str:
    if fmt is not None:
        if fmt not in ("npy", "csv"):
            raise MalformedFile(f"unknown format {fmt!r}; expected 'npy' or 'csv'")
        return fmt
    return "csv" if path.suffix.lower() == ".csv" else "npy"


def _read_npy(path: Path) -> np.ndarray:
    try:
        raw = path.open("rb")
    except OSError as exc:
        raise IoError(f"cannot open {path}: {exc}") from exc
    with raw:
        head = raw.read(len(_NPY_MAGIC))
        if head != _NPY_MAGIC:
            raise MalformedFile(f"{path}: not an NPY file (bad magic {head!r})")
        raw.seek(0)
        try:
            return np.lib.format.read_array(raw, allow_pickle=False)
        except ValueError as exc:
            raise MalformedFile(f"{path}: invalid NPY header ({exc})") from exc


def _write_npy(path: Path, arr: np.ndarray) -> None:
    try:
        with path.open("wb") as fh:
            np.lib.format.write_array(fh, np.ascontiguousarray(arr), version=(1, 0))
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def _read_csv_matrix(path: Path) -> np.ndarray:
    try:
        with path.open("r") as fh:
            arr = np.loadtxt(fh, delimiter=",", dtype=np.float64, ndmin=2)
    except OSError as exc:
        raise IoError(f"cannot open {path}: {exc}") from exc
    except ValueError as exc:
        raise MalformedFile(f"{path}: cannot parse CSV ({exc})") from exc
    return arr


def _write_csv_matrix(path: Path, arr: np.ndarray) -> None:
    # repr() of a Python float is the shortest string that round-trips
    try:
        with path.open("w") as fh:
            for row in arr:
                fh.write(",".join(repr(float(v)) for v in row))
                fh.write("\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def _validate_finite(values: np.ndarray, path: Path) -> None:
    finite = np.isfinite(values)
    if not finite.all():
        row, col = np.argwhere(~finite)[0]
        raise NonFiniteValue(
            f"{path}: non-finite logit at row {row}, col {col}",
            row=int(row),
            col=int(col),
        )


def load_logits(path, fmt: str | None = None, source_tag: str | None = None) -> LogitMatrix:
    """Load and validate an (N, C) logit matrix from NPY or CSV.

    Rejects non-2-D data, non-float dtypes, matrices with N < 1 or C < 2,
    and any NaN/Inf entry (a NaN logit would make the class ranking
    ill-defined).
    """
    path = Path(path)
    fmt = _infer_format(path, fmt)
    if fmt == "npy":
        arr = _read_npy(path)
        if arr.dtype not in (np.float32, np.float64):
            raise MalformedFile(
                f"{path}: logits must be float32 or float64, got {arr.dtype}"
            )
    else:
        arr = _read_csv_matrix(path)
    if arr.ndim != 2:
        raise ShapeError(f"{path}: logits must be 2-D, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 2:
        raise ShapeError(f"{path}: need N >= 1 and C >= 2, got shape {arr.shape}")
    values = np.ascontiguousarray(arr, dtype=np.float64)
    _validate_finite(values, path)
    values.setflags(write=False)
    return LogitMatrix(values=values, source_tag=source_tag or str(path))


def save_logits(data, path, fmt: str | None = None) -> None:
    """Persist a logit matrix as float64 NPY (default) or full-precision CSV."""
    values = as_logit_array(data)
    if values.size == 0:
        raise EmptyPayload("refusing to save an empty logit matrix")
    path = Path(path)
    fmt = _infer_format(path, fmt)
    if fmt == "npy":
        _write_npy(path, values.astype("<f8"))
    else:
        _write_csv_matrix(path, values)


def load_labels(path, expected_n: int, num_classes: int, fmt: str | None = None) -> LabelVector:
    """Load a length-checked, range-checked label vector."""
    if expected_n < 1:
        raise LengthMismatch("expected_n must be >= 1")
    path = Path(path)
    fmt = _infer_format(path, fmt)
    if fmt == "npy":
        arr = _read_npy(path)
        if not np.issubdtype(arr.dtype, np.integer):
            raise MalformedFile(f"{path}: labels must be integers, got {arr.dtype}")
    else:
        try:
            with path.open("r") as fh:
                arr = np.loadtxt(fh, dtype=np.int64, ndmin=1)
        except OSError as exc:
            raise IoError(f"cannot open {path}: {exc}") from exc
        except ValueError as exc:
            raise MalformedFile(f"{path}: cannot parse labels ({exc})") from exc
    if arr.ndim != 1:
        raise ShapeError(f"{path}: labels must be 1-D, got shape {arr.shape}")
    if arr.shape[0] != expected_n:
        raise LengthMismatch(
            f"{path}: expected {expected_n} labels, found {arr.shape[0]}"
        )
    labels = np.ascontiguousarray(arr, dtype=np.int64)
    bad = np.nonzero((labels < 0) | (labels >= num_classes))[0]
    if bad.size:
        idx = int(bad[0])
        raise LabelOutOfRange(
            f"{path}: label {int(labels[idx])} at index {idx} outside [0, {num_classes})",
            index=idx,
        )
    labels.setflags(write=False)
    return LabelVector(labels=labels)


def save_labels(data, path, fmt: str | None = None) -> None:
    """Persist labels as int64 NPY (default) or one label per CSV line."""
    labels = as_label_array(data)
    if labels.size == 0:
        raise EmptyPayload("refusing to save an empty label vector")
    path = Path(path)
    fmt = _infer_format(path, fmt)
    if fmt == "npy":
        _write_npy(path, labels.astype("<i8"))
    else:
        try:
            with path.open("w") as fh:
                for v in labels:
                    fh.write(f"{int(v)}\n")
        except OSError as exc:
            raise IoError(f"cannot write {path}: {exc}") from exc


def save_scores(scores, path) -> None:
    """Persist a score vector as float64 NPY; round-trips are bit-exact."""
    arr = scores.scores if isinstance(scores, ScoreVector) else np.asarray(scores)
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim != 1:
        raise ShapeError(f"scores must be 1-D, got shape {arr.shape}")
    if arr.size == 0:
        raise EmptyPayload("refusing to save an empty score vector")
    _write_npy(Path(path), arr.astype("<f8"))


def load_scores(path, method: str | None = None) -> ScoreVector:
    """Load a score vector. ``method`` defaults to the file stem (provenance only)."""
    path = Path(path)
    arr = _read_npy(path)
    if arr.ndim != 1:
        raise ShapeError(f"{path}: scores must be 1-D, got shape {arr.shape}")
    if arr.dtype != np.float64:
        raise MalformedFile(f"{path}: scores must be float64, got {arr.dtype}")
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return ScoreVector(method=method or path.stem, scores=arr)


def _peek_parses(path: Path) -> None:
    """Cheap header-level check that a referenced data file parses."""
    if path.suffix.lower() == ".csv":
        with path.open("r") as fh:
            first = fh.readline()
        if not first.strip():
            raise ValueError("empty CSV")
        return
    with path.open("rb") as fh:
        version = np.lib.format.read_magic(fh)
        if version == (1, 0):
            np.lib.format.read_array_header_1_0(fh)
        elif version == (2, 0):
            np.lib.format.read_array_header_2_0(fh)
        else:
            raise ValueError(f"unsupported NPY version {version}")


def _manifest_id_entry(obj, key: str, base: Path) -> IdSplit:
    if isinstance(obj, str):
        return IdSplit(logits=base / obj)
    if isinstance(obj, dict) and "logits" in obj:
        labels = obj.get("labels")
        return IdSplit(
            logits=base / obj["logits"],
            labels=(base / labels) if labels else None,
        )
    raise ManifestError(
        f"manifest entry {key!r} must be a path or an object with a 'logits' key"
    )


def load_manifest(path) -> SplitManifest:
    """Load and validate a split manifest.

    Every referenced file must exist and parse at the header level; each
    OOD set needs a unique name and a group tag in {"near", "far"}.
    """
    path = Path(path)
    try:
        payload = json.loads(path.read_text())
    except OSError as exc:
        raise IoError(f"cannot open {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON ({exc})") from exc

    base = path.parent
    for key in ("id_train", "id_val", "id_test"):
        if key not in payload:
            raise ManifestError(f"{path}: missing required key {key!r}")
    id_train = _manifest_id_entry(payload["id_train"], "id_train", base)
    id_val = _manifest_id_entry(payload["id_val"], "id_val", base)
    id_test = _manifest_id_entry(payload["id_test"], "id_test", base)

    ood_sets = []
    seen = set()
    for i, entry in enumerate(payload.get("ood", [])):
        try:
            name, rel, group = entry["name"], entry["path"], entry["group"]
        except (TypeError, KeyError) as exc:
            raise ManifestError(
                f"{path}: ood entry {i} needs 'name', 'path', and 'group'"
            ) from exc
        if group not in ("near", "far"):
            raise ManifestError(
                f"{path}: ood set {name!r} has group {group!r}, expected 'near' or 'far'"
            )
        if name in seen:
            raise ManifestError(f"{path}: duplicate ood set name {name!r}")
        seen.add(name)
        ood_sets.append(OodSet(name=name, path=base / rel, group=group))

    manifest = SplitManifest(
        id_train=id_train, id_val=id_val, id_test=id_test, ood_sets=tuple(ood_sets)
    )
    for split in (manifest.id_train, manifest.id_val, manifest.id_test):
        for ref in (split.logits, split.labels):
            if ref is None:
                continue
            _check_referenced(path, ref)
    for ood in manifest.ood_sets:
        _check_referenced(path, ood.path)
    return manifest


def _check_referenced(manifest_path: Path, ref: Path) -> None:
    if not ref.exists():
        raise ManifestError(f"{manifest_path}: referenced file {ref} does not exist")
    try:
        _peek_parses(ref)
    except Exception as exc:
        raise ManifestError(f"{manifest_path}: referenced file {ref} does not parse ({exc})") from exc
