"""Detection metrics for ID-vs-OOD score separation.

Convention: ID samples are the positives. The true positive rate is the
fraction of ID samples accepted, and FPR95 is the fraction of OOD samples
still accepted when 95% of ID samples are. Conventions vary across
libraries; this one is fixed here and everything downstream assumes it.

AUROC uses the rank (Mann-Whitney) formulation with half credit for ties,
so it needs no curve interpolation and is checkable against the O(N^2)
pairwise count. FPR at a TPR target picks the largest observed threshold
that still meets the target (no interpolation), with boundary scores
counting as accepted.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import EmptyInput, ExcelOodWarning
from .logit_store import ScoreVector


@dataclass(frozen=True)
class BinaryEvalInput:
    """Finite, non-empty ID and OOD score vectors."""

    id_scores: np.ndarray
    ood_scores: np.ndarray


@dataclass(frozen=True)
class MetricPair:
    auroc: float
    fpr95: float

    def to_dict(self) -> dict:
        return {"auroc": self.auroc, "fpr95": self.fpr95}


@dataclass(frozen=True)
class DetectionReport:
    """Per-OOD-dataset metrics with near/far/overall aggregates (percent).

    ``overall`` is the mean of the near and far aggregates, not a pooled
    recomputation. Groups without datasets are omitted (None).
    """

    method: str
    per_dataset: dict[str, MetricPair] = field(default_factory=dict)
    near: MetricPair | None = None
    far: MetricPair | None = None
    overall: MetricPair | None = None

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "datasets": {k: v.to_dict() for k, v in self.per_dataset.items()},
            "near": self.near.to_dict() if self.near else None,
            "far": self.far.to_dict() if self.far else None,
            "overall": self.overall.to_dict() if self.overall else None,
        }


@dataclass(frozen=True)
class RankTable:
    """Per-method overall ranks (1 = best, ties averaged) and their mean."""

    methods: tuple[str, ...]
    overall_auroc_rank: dict[str, float]
    overall_fpr95_rank: dict[str, float]
    mean_overall_rank: dict[str, float]

    def to_dict(self) -> dict:
        return {
            "methods": list(self.methods),
            "overall_auroc_rank": self.overall_auroc_rank,
            "overall_fpr95_rank": self.overall_fpr95_rank,
            "mean_overall_rank": self.mean_overall_rank,
        }


def _scores_array(scores, side: str) -> np.ndarray:
    arr = scores.scores if isinstance(scores, ScoreVector) else np.asarray(scores)
    arr = np.asarray(arr, dtype=np.float64)
    if arr.size == 0:
        raise EmptyInput(f"{side} score vector is empty")
    if not np.all(np.isfinite(arr)):
        raise EmptyInput(f"{side} score vector contains non-finite entries")
    return arr.ravel()


def auroc(id_scores, ood_scores) -> float:
    """AUROC in percent: P(id score > ood score) with half credit for ties.

    Computed by ranking, O((N_id + N_ood) log(...)). The two orientations
    sum to exactly 100: the quotient is taken on the smaller side and its
    complement on the other, which keeps the pair of float results exact.
    """
    ids = _scores_array(id_scores, "id")
    oods = _scores_array(ood_scores, "ood")
    n_id, n_ood = ids.size, oods.size
    ranks = rankdata(np.concatenate([ids, oods]))
    wins = float(ranks[:n_id].sum()) - n_id * (n_id + 1) / 2.0
    nm = float(n_id) * float(n_ood)
    if wins <= nm - wins:
        return 100.0 * wins / nm
    return 100.0 - 100.0 * (nm - wins) / nm


def fpr_at_tpr(id_scores, ood_scores, tpr_target: float = 0.95) -> float:
    """FPR (percent) at the largest threshold keeping ID TPR >= target.

    The threshold is chosen among observed score values; scores equal to
    it count as accepted on both sides.
    """
    if not 0.0 < tpr_target <= 1.0:
        raise EmptyInput(f"tpr_target must be in (0, 1], got {tpr_target}")
    ids = _scores_array(id_scores, "id")
    oods = _scores_array(ood_scores, "ood")
    ids_sorted = np.sort(ids)
    candidates = np.unique(ids)[::-1]
    count_ge = ids.size - np.searchsorted(ids_sorted, candidates, side="left")
    tpr = count_ge / ids.size
    passing = candidates[tpr >= tpr_target]
    # tpr at the minimum id score is 1.0, so this never underflows
    threshold = passing[0]
    fp = oods.size - np.searchsorted(np.sort(oods), threshold, side="left")
    return 100.0 * fp / oods.size


def evaluate(
    method: str,
    id_test_scores,
    ood_scores: dict[str, "ScoreVector | np.ndarray"],
    groups: dict[str, str],
    tpr_target: float = 0.95,
) -> DetectionReport:
    """Score every OOD set against the ID test scores and aggregate.

    ``groups`` maps each OOD set name to "near" or "far". A group with no
    datasets is omitted from the report; if either group is missing, the
    overall aggregate is omitted too (with a warning).
    """
    per_dataset: dict[str, MetricPair] = {}
    by_group: dict[str, list[MetricPair]] = {"near": [], "far": []}
    for name, scores in ood_scores.items():
        group = groups.get(name)
        if group not in by_group:
            raise EmptyInput(f"ood set {name!r} has unknown group {group!r}")
        pair = MetricPair(
            auroc=auroc(id_test_scores, scores),
            fpr95=fpr_at_tpr(id_test_scores, scores, tpr_target),
        )
        per_dataset[name] = pair
        by_group[group].append(pair)

    def _mean(pairs: list[MetricPair]) -> MetricPair | None:
        if not pairs:
            return None
        return MetricPair(
            auroc=float(np.mean([p.auroc for p in pairs])),
            fpr95=float(np.mean([p.fpr95 for p in pairs])),
        )

    near = _mean(by_group["near"])
    far = _mean(by_group["far"])
    if near is not None and far is not None:
        overall = MetricPair(
            auroc=(near.auroc + far.auroc) / 2.0,
            fpr95=(near.fpr95 + far.fpr95) / 2.0,
        )
    else:
        overall = None
        missing = "near" if near is None else "far"
        warnings.warn(
            f"method {method!r}: no {missing}-group OOD sets; omitting the "
            "overall aggregate",
            ExcelOodWarning,
            stacklevel=2,
        )
    return DetectionReport(
        method=method, per_dataset=per_dataset, near=near, far=far, overall=overall
    )


def rank_methods(reports: dict[str, DetectionReport]) -> RankTable:
    """Rank methods by overall AUROC (higher better) and FPR95 (lower better).

    Rank 1 is best; ties receive the average of the ranks they span. The
    mean overall rank is the average of a method's two ranks.
    """
    methods = tuple(reports.keys())
    if not methods:
        raise EmptyInput("no reports to rank")
    for name, report in reports.items():
        if report.overall is None:
            raise EmptyInput(f"report for {name!r} has no overall aggregate")
    aurocs = np.array([reports[m].overall.auroc for m in methods])
    fprs = np.array([reports[m].overall.fpr95 for m in methods])
    auroc_ranks = rankdata(-aurocs)
    fpr_ranks = rankdata(fprs)
    return RankTable(
        methods=methods,
        overall_auroc_rank={m: float(r) for m, r in zip(methods, auroc_ranks)},
        overall_fpr95_rank={m: float(r) for m, r in zip(methods, fpr_ranks)},
        mean_overall_rank={
            m: (float(a) + float(f)) / 2.0
            for m, a, f in zip(methods, auroc_ranks, fpr_ranks)
        },
    )


def render_rank_table(reports: dict[str, DetectionReport], table: RankTable) -> str:
    """Aligned text table: near/far/overall AUROC and FPR95 plus mean rank."""
    headers = [
        "Method",
        "AUROC Near",
        "AUROC Far",
        "AUROC Overall",
        "FPR95 Near",
        "FPR95 Far",
        "FPR95 Overall",
        "Mean Rank",
    ]

    def _fmt(pair: MetricPair | None, attr: str) -> str:
        return f"{getattr(pair, attr):.2f}" if pair is not None else "-"

    rows = []
    for m in table.methods:
        rep = reports[m]
        rows.append(
            [
                m,
                _fmt(rep.near, "auroc"),
                _fmt(rep.far, "auroc"),
                _fmt(rep.overall, "auroc"),
                _fmt(rep.near, "fpr95"),
                _fmt(rep.far, "fpr95"),
                _fmt(rep.overall, "fpr95"),
                f"{table.mean_overall_rank[m]:.1f}",
            ]
        )
    widths = [max(len(h), *(len(r[i]) for r in rows)) for i, h in enumerate(headers)]
    lines = [
        "  ".join(h.ljust(w) for h, w in zip(headers, widths)).rstrip(),
        "  ".join("-" * w for w in widths),
    ]
    for r in rows:
        lines.append("  ".join(v.ljust(w) for v, w in zip(r, widths)).rstrip())
    return "\n".join(lines) + "\n"
