"""Per-class likelihood matrices over predicted class ranks.

For each class c, the class likelihood matrix (CLM) tabulates how often
every class lands at every rank among the correctly classified training
samples whose true class is c. Rows index classes, columns index ranks,
and each column is a probability distribution. Rank 1 is always the base
class itself, so column 1 is one-hot.

Smoothing replaces each likelihood with one of four reward/penalty levels
controlled by (a, b):

* ``p >= b/(C-1)``            -> ``+a/(C-1)``   (frequent: high reward)
* ``1/(C-1) <= p < b/(C-1)``  -> ``+1/(C-1)``   (better than chance)
* ``0 < p < 1/(C-1)``         -> ``-1/(C-1)``   (worse than chance)
* ``p == 0``                  -> ``-a/(C-1)``   (never seen: high penalty)

The fitted artifact (one smoothed matrix per class) persists to a binary
container: magic ``EXCELCLM``, u32 format version, u32 C, u32 encoding tag
(0 = float64, 1 = packed 2-bit codes), payload, trailing CRC32; plus a JSON
sidecar ``<path>.json`` holding a, b, num_classes, fallback_classes, and
support_counts.
"""

from __future__ import annotations

import json
import struct
import warnings
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    ChecksumMismatch,
    DimensionMismatch,
    ExcelOodWarning,
    IoError,
    VersionMismatch,
)
from .logit_store import as_label_array, as_logit_array
from .ranking import rank_classes_matrix

_MAGIC = b"EXCELCLM"
_FORMAT_VERSION = 1
_ENC_F64 = 0
_ENC_2BIT = 1
# 2-bit code -> palette slot [-a, -1, +1, +a] / (C-1)
_CODE_VALUES = 4


@dataclass(frozen=True)
class SmoothingParams:
    """Reward magnitude ``a`` and high-likelihood threshold multiplier ``b``."""

    a: float
    b: float

    def __post_init__(self):
        if not self.a > 1:
            raise ValueError(f"smoothing parameter a must be > 1, got {self.a}")
        if not self.b > 1:
            raise ValueError(f"smoothing parameter b must be > 1, got {self.b}")


@dataclass(frozen=True)
class ClassLikelihoodMatrix:
    """Raw class-at-rank frequencies for one base class.

    ``probs[i, j]`` is the probability of class i at rank j+1 given the
    base class was predicted. ``support_count`` is the number of correctly
    classified training samples that produced the estimate; zero marks the
    uniform fallback.
    """

    base_class: int
    probs: np.ndarray
    support_count: int

    @property
    def is_fallback(self) -> bool:
        return self.support_count == 0


@dataclass(frozen=True)
class SmoothedClmSet:
    """All C smoothed matrices plus the parameters that produced them.

    ``matrices`` is a (C, C, C) float64 tensor, class-major: ``matrices[c]``
    is the smoothed matrix used when class c is the top prediction.
    """

    matrices: np.ndarray
    params: SmoothingParams
    fallback_classes: tuple[int, ...]
    support_counts: np.ndarray

    @property
    def num_classes(self) -> int:
        return int(self.matrices.shape[0])

    def per_class(self, c: int) -> np.ndarray:
        if not 0 <= c < self.num_classes:
            raise DimensionMismatch(
                f"class {c} outside [0, {self.num_classes})"
            )
        return self.matrices[c]

    def palette(self) -> np.ndarray:
        """The four values every entry takes: [-a, -1, +1, +a] / (C-1)."""
        c1 = self.num_classes - 1
        a = self.params.a
        return np.array([-a / c1, -1.0 / c1, 1.0 / c1, a / c1])


def uniform_fallback_probs(num_classes: int, class_c: int) -> np.ndarray:
    """CLM used when a class has no correctly classified samples.

    Column 1 is one-hot at the base class; every later column spreads
    1/(C-1) over the other classes. Under this matrix the rank score is
    the same constant for every input, which makes the fused score an
    affine function of the max logit (the safest degenerate behaviour).
    """
    c = num_classes
    probs = np.full((c, c), 1.0 / (c - 1))
    probs[:, 0] = 0.0
    probs[class_c, :] = 0.0
    probs[class_c, 0] = 1.0
    return probs


def build_clm(train_logits, train_labels, class_c: int) -> ClassLikelihoodMatrix:
    """Estimate the CLM for one class from correctly classified samples.

    A sample counts only if its label is ``class_c`` and its top-ranked
    class is ``class_c``; misclassified samples are discarded, not
    reassigned. With no qualifying samples the uniform fallback is
    returned and flagged via ``support_count == 0``.
    """
    values = as_logit_array(train_logits)
    labels = as_label_array(train_labels)
    n, c = values.shape
    if labels.shape[0] != n:
        raise DimensionMismatch(
            f"labels length {labels.shape[0]} != number of samples {n}"
        )
    if not 0 <= class_c < c:
        raise DimensionMismatch(f"class {class_c} outside [0, {c})")
    perms = rank_classes_matrix(values)
    return _clm_from_perms(perms, labels, class_c, c)


def _clm_from_perms(
    perms: np.ndarray, labels: np.ndarray, class_c: int, num_classes: int
) -> ClassLikelihoodMatrix:
    sel = perms[(labels == class_c) & (perms[:, 0] == class_c)]
    n_c = sel.shape[0]
    if n_c == 0:
        probs = uniform_fallback_probs(num_classes, class_c)
    else:
        counts = np.zeros((num_classes, num_classes), dtype=np.int64)
        ranks = np.broadcast_to(np.arange(num_classes), sel.shape)
        np.add.at(counts, (sel.ravel(), ranks.ravel()), 1)
        probs = counts / float(n_c)
    return ClassLikelihoodMatrix(base_class=class_c, probs=probs, support_count=int(n_c))


def smooth(clm, params: SmoothingParams) -> np.ndarray:
    """Apply the four-branch reward/penalty map elementwise.

    Accepts a ClassLikelihoodMatrix or a raw probability matrix. The map is
    applied uniformly, column 1 included. Boundaries are closed from below:
    ``p == b/(C-1)`` earns the high reward and ``p == 1/(C-1)`` the small
    one.
    """
    probs = clm.probs if isinstance(clm, ClassLikelihoodMatrix) else np.asarray(clm)
    probs = np.asarray(probs, dtype=np.float64)
    c1 = probs.shape[-1] - 1
    hi = params.b / c1
    lo = 1.0 / c1
    reward = params.a / c1
    return np.select(
        [probs >= hi, probs >= lo, probs > 0.0],
        [reward, lo, -lo],
        default=-reward,
    )


def fit(train_logits, train_labels, params: SmoothingParams) -> SmoothedClmSet:
    """Build and smooth the CLM of every class from training logits."""
    values = as_logit_array(train_logits)
    labels = as_label_array(train_labels)
    n, c = values.shape
    if labels.shape[0] != n:
        raise DimensionMismatch(
            f"labels length {labels.shape[0]} != number of samples {n}"
        )
    if params.b >= c - 1:
        warnings.warn(
            f"b={params.b} >= C-1={c - 1}: the high-reward branch is unreachable "
            "for likelihoods below 1",
            ExcelOodWarning,
            stacklevel=2,
        )
    perms = rank_classes_matrix(values)
    matrices = np.empty((c, c, c), dtype=np.float64)
    support_counts = np.zeros(c, dtype=np.int64)
    fallback = []
    for cls in range(c):
        clm = _clm_from_perms(perms, labels, cls, c)
        matrices[cls] = smooth(clm, params)
        support_counts[cls] = clm.support_count
        if clm.is_fallback:
            fallback.append(cls)
    if len(fallback) == c:
        warnings.warn(
            "no class has correctly classified samples; every matrix is the "
            "uniform fallback",
            ExcelOodWarning,
            stacklevel=2,
        )
    matrices.setflags(write=False)
    support_counts.setflags(write=False)
    return SmoothedClmSet(
        matrices=matrices,
        params=params,
        fallback_classes=tuple(fallback),
        support_counts=support_counts,
    )


def uniform_clm_set(num_classes: int, params: SmoothingParams) -> SmoothedClmSet:
    """A set where every class uses the smoothed uniform fallback."""
    matrices = np.empty((num_classes, num_classes, num_classes), dtype=np.float64)
    for cls in range(num_classes):
        matrices[cls] = smooth(uniform_fallback_probs(num_classes, cls), params)
    matrices.setflags(write=False)
    return SmoothedClmSet(
        matrices=matrices,
        params=params,
        fallback_classes=tuple(range(num_classes)),
        support_counts=np.zeros(num_classes, dtype=np.int64),
    )


def _encode_2bit(matrices: np.ndarray, palette: np.ndarray) -> bytes:
    flat = matrices.ravel()
    codes = np.full(flat.shape, -1, dtype=np.int8)
    for code, value in enumerate(palette):
        codes[flat == value] = code
    if (codes < 0).any():
        raise ValueError("matrix entry outside the smoothed four-value palette")
    pad = (-codes.size) % _CODE_VALUES
    codes = np.concatenate([codes.astype(np.uint8), np.zeros(pad, dtype=np.uint8)])
    quads = codes.reshape(-1, 4)
    packed = quads[:, 0] | (quads[:, 1] << 2) | (quads[:, 2] << 4) | (quads[:, 3] << 6)
    return packed.astype(np.uint8).tobytes()


def _decode_2bit(payload: bytes, num_entries: int, palette: np.ndarray) -> np.ndarray:
    packed = np.frombuffer(payload, dtype=np.uint8)
    codes = np.empty(packed.size * 4, dtype=np.uint8)
    codes[0::4] = packed & 0b11
    codes[1::4] = (packed >> 2) & 0b11
    codes[2::4] = (packed >> 4) & 0b11
    codes[3::4] = (packed >> 6) & 0b11
    return palette[codes[:num_entries]]


def save_clm_set(clm_set: SmoothedClmSet, path, encoding: str = "f64") -> None:
    """Write the container plus its JSON sidecar.

    ``encoding="compact"`` packs each entry into 2 bits (there are only
    four possible values); decoding reproduces float64 values bit-exactly.
    """
    path = Path(path)
    if encoding == "f64":
        tag = _ENC_F64
        payload = clm_set.matrices.astype("<f8").tobytes(order="C")
    elif encoding == "compact":
        tag = _ENC_2BIT
        payload = _encode_2bit(clm_set.matrices, clm_set.palette())
    else:
        raise ValueError(f"unknown encoding {encoding!r}")
    body = _MAGIC + struct.pack("<III", _FORMAT_VERSION, clm_set.num_classes, tag) + payload
    sidecar = {
        "a": clm_set.params.a,
        "b": clm_set.params.b,
        "num_classes": clm_set.num_classes,
        "fallback_classes": list(clm_set.fallback_classes),
        "support_counts": [int(v) for v in clm_set.support_counts],
    }
    try:
        with path.open("wb") as fh:
            fh.write(body)
            fh.write(struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF))
        Path(str(path) + ".json").write_text(
            json.dumps(sidecar, indent=2, sort_keys=True) + "\n"
        )
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def load_clm_set(path) -> SmoothedClmSet:
    """Load a container written by :func:`save_clm_set`."""
    path = Path(path)
    sidecar_path = Path(str(path) + ".json")
    try:
        blob = path.read_bytes()
        sidecar = json.loads(sidecar_path.read_text())
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise VersionMismatch(f"{sidecar_path}: invalid sidecar JSON ({exc})") from exc

    if len(blob) < len(_MAGIC) + 16:
        raise ChecksumMismatch(f"{path}: file truncated")
    if blob[: len(_MAGIC)] != _MAGIC:
        raise VersionMismatch(f"{path}: bad magic {blob[:len(_MAGIC)]!r}")
    body, (crc_stored,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc_stored:
        raise ChecksumMismatch(f"{path}: CRC32 mismatch (file truncated or corrupt)")
    version, c, tag = struct.unpack_from("<III", body, len(_MAGIC))
    if version != _FORMAT_VERSION:
        raise VersionMismatch(f"{path}: unsupported format version {version}")

    params = SmoothingParams(a=float(sidecar["a"]), b=float(sidecar["b"]))
    if int(sidecar["num_classes"]) != c:
        raise VersionMismatch(
            f"{path}: sidecar num_classes {sidecar['num_classes']} != header {c}"
        )
    payload = body[len(_MAGIC) + 12 :]
    n_entries = c * c * c
    if tag == _ENC_F64:
        if len(payload) != n_entries * 8:
            raise ChecksumMismatch(f"{path}: payload size mismatch")
        matrices = np.frombuffer(payload, dtype="<f8").reshape(c, c, c).copy()
    elif tag == _ENC_2BIT:
        expected = (n_entries + _CODE_VALUES - 1) // _CODE_VALUES
        if len(payload) != expected:
            raise ChecksumMismatch(f"{path}: payload size mismatch")
        c1 = c - 1
        palette = np.array(
            [-params.a / c1, -1.0 / c1, 1.0 / c1, params.a / c1]
        )
        matrices = _decode_2bit(payload, n_entries, palette).reshape(c, c, c)
    else:
        raise VersionMismatch(f"{path}: unknown encoding tag {tag}")
    matrices.setflags(write=False)
    support_counts = np.asarray(sidecar["support_counts"], dtype=np.int64)
    support_counts.setflags(write=False)
    return SmoothedClmSet(
        matrices=matrices,
        params=params,
        fallback_classes=tuple(int(v) for v in sidecar["fallback_classes"]),
        support_counts=support_counts,
    )
