"""Deterministic synthetic logit generation for desk-scale experiments.

Three ingredients:

* ID batches with a planted class-rank signature: each class boosts its
  listed neighbours, so the classes appearing just below the top rank are
  predictable.
* OOD batches whose rankings carry no reusable signature: ``sparse_ood``
  boosts a fresh random subset of classes per sample, ``uniform_ood`` is
  exchangeable noise (every ranking equally likely), and ``flat_ood``
  additionally matches the max-logit distribution of ID data so that only
  ranking information separates the two.

Randomness is counter-based rather than stateful: every draw is a pure
function of (seed, stream, sample index, class index) through the
SplitMix64 finalizer, and Gaussians come from the inverse normal CDF of a
53-bit uniform. Identical inputs therefore produce bit-identical batches
regardless of platform or execution order. Batches of different regimes
use disjoint key streams, so an ID batch and an OOD batch built from the
same model are independent; draw independent batches of the same regime
by changing the seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import ndtri

from .errors import ConfigError, EmptyBatch, IoError
from .logit_store import LabelVector, LogitMatrix

REGIMES = ("signature_id", "sparse_ood", "uniform_ood", "flat_ood")

# SplitMix64 constants
_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MULT1 = np.uint64(0xBF58476D1CE4E5B9)
_MULT2 = np.uint64(0x94D049BB133111EB)

# substreams within a regime's key block
_SUB_NOISE = 0
_SUB_SUBSET = 1
_SUB_PHANTOM = 2
_STREAM_BLOCK = 16


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z + _GAMMA).astype(np.uint64)
    z = ((z ^ (z >> np.uint64(30))) * _MULT1).astype(np.uint64)
    z = ((z ^ (z >> np.uint64(27))) * _MULT2).astype(np.uint64)
    return z ^ (z >> np.uint64(31))


def _keyed_uniform(seed: int, stream: int, samples: np.ndarray, classes: np.ndarray) -> np.ndarray:
    """Uniform draws in (0, 1), one per (sample, class) pair."""
    with np.errstate(over="ignore"):
        base = _mix(_mix(np.uint64(seed & 0xFFFFFFFFFFFFFFFF)) ^ np.uint64(stream))
        h = _mix(base ^ samples.astype(np.uint64))
        h = _mix(h ^ classes.astype(np.uint64))
    return ((h >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def _keyed_normal(seed: int, stream: int, n: int, c: int) -> np.ndarray:
    samples = np.arange(n, dtype=np.uint64)[:, None]
    classes = np.arange(c, dtype=np.uint64)[None, :]
    return ndtri(_keyed_uniform(seed, stream, samples, classes))


@dataclass(frozen=True)
class SignatureModel:
    """Parameters of the planted class-rank signature.

    ``neighbor_map[c]`` lists the classes semantically close to c, nearest
    first. In an ID sample of true class c the mean logit is ``2*s`` at c,
    ``s/(k+1)`` at the k-th neighbour (1-based), and 0 elsewhere, plus
    Gaussian noise of scale ``noise_scale``.
    """

    num_classes: int
    neighbor_map: tuple[tuple[int, ...], ...]
    signal_strength: float
    noise_scale: float
    seed: int

    def __post_init__(self):
        c = self.num_classes
        if c < 2:
            raise ConfigError("signature model needs at least 2 classes")
        if len(self.neighbor_map) != c:
            raise ConfigError(
                f"neighbor_map has {len(self.neighbor_map)} entries, expected {c}"
            )
        for cls, neigh in enumerate(self.neighbor_map):
            if cls in neigh:
                raise ConfigError(f"class {cls} lists itself as a neighbour")
            if len(set(neigh)) != len(neigh):
                raise ConfigError(f"class {cls} has duplicate neighbours")
            if any(not 0 <= m < c for m in neigh):
                raise ConfigError(f"class {cls} has a neighbour outside [0, {c})")
        if self.signal_strength < 0:
            raise ConfigError("signal_strength must be >= 0")
        if self.noise_scale <= 0:
            raise ConfigError("noise_scale must be > 0")

    @classmethod
    def ring(
        cls,
        num_classes: int,
        depth: int = 3,
        signal_strength: float = 5.0,
        noise_scale: float = 1.0,
        seed: int = 0,
    ) -> "SignatureModel":
        """Each class's neighbours are the next ``depth`` classes, cyclically."""
        neigh = tuple(
            tuple((c + k) % num_classes for k in range(1, depth + 1))
            for c in range(num_classes)
        )
        return cls(
            num_classes=num_classes,
            neighbor_map=neigh,
            signal_strength=signal_strength,
            noise_scale=noise_scale,
            seed=seed,
        )

    @classmethod
    def from_dict(cls, payload: dict) -> "SignatureModel":
        try:
            return cls(
                num_classes=int(payload["num_classes"]),
                neighbor_map=tuple(
                    tuple(int(m) for m in row) for row in payload["neighbor_map"]
                ),
                signal_strength=float(payload["signal_strength"]),
                noise_scale=float(payload["noise_scale"]),
                seed=int(payload["seed"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid signature model: {exc}") from exc

    @classmethod
    def from_json_file(cls, path) -> "SignatureModel":
        path = Path(path)
        try:
            payload = json.loads(path.read_text())
        except OSError as exc:
            raise IoError(f"cannot open {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(payload)

    def to_dict(self) -> dict:
        return {
            "num_classes": self.num_classes,
            "neighbor_map": [list(row) for row in self.neighbor_map],
            "signal_strength": self.signal_strength,
            "noise_scale": self.noise_scale,
            "seed": self.seed,
        }

    def mean_logits(self) -> np.ndarray:
        """(C, C) matrix of per-true-class mean logits."""
        c = self.num_classes
        mu = np.zeros((c, c))
        s = self.signal_strength
        for cls in range(c):
            mu[cls, cls] = 2.0 * s
            for k, neighbour in enumerate(self.neighbor_map[cls], start=1):
                mu[cls, neighbour] = s / (k + 1)
        return mu


@dataclass(frozen=True)
class SynthBatch:
    logits: LogitMatrix
    labels: LabelVector | None
    regime: str


def _regime_stream(regime: str, sub: int) -> int:
    return REGIMES.index(regime) * _STREAM_BLOCK + sub


def _finish(values: np.ndarray, labels: np.ndarray | None, regime: str, tag: str) -> SynthBatch:
    values = np.ascontiguousarray(values, dtype=np.float64)
    values.setflags(write=False)
    label_vec = None
    if labels is not None:
        labels = np.ascontiguousarray(labels, dtype=np.int64)
        labels.setflags(write=False)
        label_vec = LabelVector(labels=labels)
    return SynthBatch(
        logits=LogitMatrix(values=values, source_tag=tag),
        labels=label_vec,
        regime=regime,
    )


def gen_id(model: SignatureModel, n: int, seed: int | None = None) -> SynthBatch:
    """ID batch with the planted signature. True classes cycle 0, 1, ..., C-1."""
    if n < 1:
        raise EmptyBatch(f"need n >= 1 ID samples, got {n}")
    seed = model.seed if seed is None else seed
    c = model.num_classes
    labels = np.arange(n, dtype=np.int64) % c
    noise = _keyed_normal(seed, _regime_stream("signature_id", _SUB_NOISE), n, c)
    values = model.mean_logits()[labels] + model.noise_scale * noise
    return _finish(values, labels, "signature_id", f"synth:signature_id:seed={seed}")


def gen_ood(
    model: SignatureModel,
    n: int,
    regime: str,
    seed: int | None = None,
    subset_size: int = 3,
) -> SynthBatch:
    """OOD batch without a stable rank signature.

    ``sparse_ood`` boosts ``subset_size`` classes chosen fresh per sample
    by twice the signal strength; ``uniform_ood`` is pure exchangeable
    noise; ``flat_ood`` is uniform_ood shifted per sample so its max logit
    is drawn from the ID max-logit distribution.
    """
    if n < 1:
        raise EmptyBatch(f"need n >= 1 OOD samples, got {n}")
    if regime not in ("sparse_ood", "uniform_ood", "flat_ood"):
        raise ConfigError(
            f"unknown OOD regime {regime!r}; expected sparse_ood, uniform_ood, or flat_ood"
        )
    seed = model.seed if seed is None else seed
    c = model.num_classes
    noise = _keyed_normal(seed, _regime_stream(regime, _SUB_NOISE), n, c)
    values = model.noise_scale * noise

    if regime == "sparse_ood":
        if not 1 <= subset_size < c:
            raise ConfigError(f"subset_size must be in [1, {c}), got {subset_size}")
        picks = _keyed_uniform(
            seed,
            _regime_stream(regime, _SUB_SUBSET),
            np.arange(n, dtype=np.uint64)[:, None],
            np.arange(c, dtype=np.uint64)[None, :],
        )
        chosen = np.argsort(picks, axis=1, kind="stable")[:, :subset_size]
        boost = np.zeros((n, c))
        np.put_along_axis(boost, chosen, 2.0 * model.signal_strength, axis=1)
        values = values + boost
    elif regime == "flat_ood":
        phantom = _keyed_normal(seed, _regime_stream(regime, _SUB_PHANTOM), n, c)
        labels = np.arange(n, dtype=np.int64) % c
        id_like = model.mean_logits()[labels] + model.noise_scale * phantom
        targets = id_like.max(axis=1)
        values = values + (targets - values.max(axis=1))[:, None]

    return _finish(values, None, regime, f"synth:{regime}:seed={seed}")
