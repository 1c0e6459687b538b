"""Post-hoc OOD detection from exported classifier logits.

The engine fuses extreme information (the maximum logit) with collective
information (how predictable the classes below the top prediction are,
captured by per-class likelihood matrices over ranks) into a single score,
and evaluates it against standard logit-space baselines with AUROC and
FPR95. All scores share one orientation: higher means more
in-distribution.
"""

from .clm import (
    ClassLikelihoodMatrix,
    SmoothedClmSet,
    SmoothingParams,
    build_clm,
    fit,
    load_clm_set,
    save_clm_set,
    smooth,
    uniform_clm_set,
    uniform_fallback_probs,
)
from .logit_store import (
    LabelVector,
    LogitMatrix,
    ScoreVector,
    SplitManifest,
    load_labels,
    load_logits,
    load_manifest,
    load_scores,
    save_labels,
    save_logits,
    save_scores,
)
from .metrics import (
    DetectionReport,
    RankTable,
    auroc,
    evaluate,
    fpr_at_tpr,
    rank_methods,
)
from .ranking import rank_classes, to_one_hot
from .scoring import (
    METHOD_NAMES,
    DetectionDecision,
    ExcelParams,
    decide,
    energy_score,
    excel_score,
    fit_temperature,
    max_logit,
    msp_score,
    rank_score,
    rank_score_trace,
    score_matrix,
    tempscale_score,
)
from .synth import REGIMES, SignatureModel, SynthBatch, gen_id, gen_ood
from .tuning import GridSpec, TuneResult, tune

__version__ = "0.1.0"
