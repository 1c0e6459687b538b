"""Per-sample OOD scores: rank score, the fused excel score, and baselines.

Every method emits scores oriented the same way: higher means more
in-distribution. Energy is therefore reported as +T*logsumexp(logits/T)
(negative free energy). All scoring runs in float64 regardless of the
input precision, because rank-score sums of small +-1/(C-1) terms are
cancellation-prone in float32.

Stable method identifiers, usable from the CLI and run configs:
``excel``, ``rankscore``, ``maxlogit``, ``msp``, ``energy``, ``tempscale``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .clm import SmoothedClmSet
from .errors import ConfigError, DimensionMismatch, MissingContext, NonFiniteValue
from .logit_store import LogitMatrix, ScoreVector, as_logit_array
from .ranking import rank_classes_matrix

METHOD_NAMES = ("excel", "rankscore", "maxlogit", "msp", "energy", "tempscale")

DEFAULT_ALPHA = 0.8
DEFAULT_TEMPERATURE_GRID = np.logspace(0.0, 3.0, 41)


@dataclass(frozen=True)
class ExcelParams:
    """Fusion weight between rank score (alpha) and max logit (1 - alpha)."""

    alpha: float = DEFAULT_ALPHA

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")


@dataclass(frozen=True)
class DetectionDecision:
    """Thresholded in/out labels; the boundary score counts as in."""

    threshold: float
    labels: tuple[str, ...]


def _as_vector(logits) -> np.ndarray:
    v = np.asarray(logits, dtype=np.float64)
    if v.ndim != 1:
        raise DimensionMismatch(f"expected a 1-D logit vector, got ndim={v.ndim}")
    if not np.all(np.isfinite(v)):
        raise NonFiniteValue("logit vector contains non-finite entries")
    return v


def _rank_scores(values: np.ndarray, clm_set: SmoothedClmSet) -> np.ndarray:
    n, c = values.shape
    if c != clm_set.num_classes:
        raise DimensionMismatch(
            f"logits have C={c} but the CLM set has C={clm_set.num_classes}"
        )
    perms = rank_classes_matrix(values)
    top = perms[:, 0]
    matched = clm_set.matrices[top[:, None], perms, np.arange(c)[None, :]]
    return matched.sum(axis=1)


def rank_score(logits, clm_set: SmoothedClmSet) -> float:
    """Sum the smoothed likelihoods matched by the input's class ranking.

    The matrix of the top-1 class is selected, and each rank contributes
    the entry of the class observed there (the constant rank-1 term
    included).
    """
    v = _as_vector(logits)
    return float(_rank_scores(v[None, :], clm_set)[0])


def rank_score_trace(one_hot, smoothed) -> float:
    """Rank score in matrix form: trace(smoothed^T @ one_hot).

    Equal to :func:`rank_score` exactly; kept as an independent route for
    verification.
    """
    rho = np.asarray(one_hot, dtype=np.float64)
    mat = np.asarray(smoothed, dtype=np.float64)
    if rho.shape != mat.shape or rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise DimensionMismatch(
            f"shape mismatch: one-hot {rho.shape} vs smoothed {mat.shape}"
        )
    return float(np.sum(np.diagonal(mat.T @ rho)))


def max_logit(logits) -> float:
    """The maximum logit: extreme information only."""
    return float(np.max(_as_vector(logits)))


def excel_score(logits, clm_set: SmoothedClmSet, params: ExcelParams | None = None) -> float:
    """alpha * rank_score + (1 - alpha) * max_logit."""
    params = params or ExcelParams()
    v = _as_vector(logits)
    rs = float(_rank_scores(v[None, :], clm_set)[0])
    return params.alpha * rs + (1.0 - params.alpha) * float(np.max(v))


def msp_score(logits) -> float:
    """Maximum softmax probability, computed overflow-safe."""
    v = _as_vector(logits)
    return float(_msp(v[None, :])[0])


def _msp(values: np.ndarray) -> np.ndarray:
    shifted = values - values.max(axis=1, keepdims=True)
    # exp(0) == 1 at the argmax, so MSP reduces to 1 / sum(exp(shifted))
    return 1.0 / np.exp(shifted).sum(axis=1)


def energy_score(logits, temperature: float = 1.0) -> float:
    """T * log sum exp(logits / T); a smooth upper bound on the max logit."""
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    v = _as_vector(logits)
    return float(temperature * logsumexp(v / temperature))


def tempscale_score(logits, temperature: float) -> float:
    """MSP of temperature-scaled logits."""
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    v = _as_vector(logits)
    return float(_msp(v[None, :] / temperature)[0])


def fit_temperature(logits, labels, grid=None) -> float:
    """Pick the grid temperature minimising validation NLL.

    The default grid is 41 log-spaced points on [1, 1000]. Ties resolve to
    the smallest temperature.
    """
    values = as_logit_array(logits)
    y = np.asarray(labels.labels if hasattr(labels, "labels") else labels, dtype=np.int64)
    if y.shape[0] != values.shape[0]:
        raise DimensionMismatch(
            f"labels length {y.shape[0]} != number of samples {values.shape[0]}"
        )
    grid = DEFAULT_TEMPERATURE_GRID if grid is None else np.asarray(grid, dtype=np.float64)
    rows = np.arange(values.shape[0])
    nlls = []
    for t in grid:
        scaled = values / t
        nll = float(np.mean(logsumexp(scaled, axis=1) - scaled[rows, y]))
        nlls.append(nll)
    return float(grid[int(np.argmin(nlls))])


def score_matrix(
    matrix,
    method: str,
    *,
    clm_set: SmoothedClmSet | None = None,
    excel_params: ExcelParams | None = None,
    temperature: float | None = None,
) -> ScoreVector:
    """Apply a method to every row of a logit matrix, in row order.

    ``excel`` and ``rankscore`` need ``clm_set``; ``tempscale`` needs
    ``temperature``. Scoring is stateless: concatenating two matrices and
    scoring equals concatenating the two score vectors.
    """
    if method not in METHOD_NAMES:
        raise ConfigError(
            f"unknown method {method!r}; expected one of {', '.join(METHOD_NAMES)}"
        )
    values = as_logit_array(matrix)
    if method == "maxlogit":
        scores = values.max(axis=1)
    elif method == "msp":
        scores = _msp(values)
    elif method == "energy":
        t = 1.0 if temperature is None else float(temperature)
        if t <= 0:
            raise ValueError(f"temperature must be positive, got {t}")
        scores = t * logsumexp(values / t, axis=1)
    elif method == "tempscale":
        if temperature is None:
            raise MissingContext("tempscale needs a temperature (set one or fit on validation data)")
        if temperature <= 0:
            raise ValueError(f"temperature must be positive, got {temperature}")
        scores = _msp(values / float(temperature))
    elif method == "rankscore":
        if clm_set is None:
            raise MissingContext("rankscore needs a fitted CLM set")
        scores = _rank_scores(values, clm_set)
    else:  # excel
        if clm_set is None:
            raise MissingContext("excel needs a fitted CLM set")
        params = excel_params or ExcelParams()
        rs = _rank_scores(values, clm_set)
        scores = params.alpha * rs + (1.0 - params.alpha) * values.max(axis=1)
    scores = np.ascontiguousarray(scores, dtype=np.float64)
    if not np.all(np.isfinite(scores)):
        raise NonFiniteValue(f"method {method} produced non-finite scores")
    scores.setflags(write=False)
    return ScoreVector(method=method, scores=scores)


def decide(scores, threshold: float) -> DetectionDecision:
    """Label each sample in/out by comparing its score against a threshold."""
    arr = scores.scores if isinstance(scores, ScoreVector) else np.asarray(scores)
    labels = tuple("in" if s >= threshold else "out" for s in np.asarray(arr, dtype=np.float64))
    return DetectionDecision(threshold=float(threshold), labels=labels)


__all__ = [
    "METHOD_NAMES",
    "DEFAULT_ALPHA",
    "ExcelParams",
    "DetectionDecision",
    "LogitMatrix",
    "ScoreVector",
    "rank_score",
    "rank_score_trace",
    "max_logit",
    "excel_score",
    "msp_score",
    "energy_score",
    "tempscale_score",
    "fit_temperature",
    "score_matrix",
    "decide",
]
