"""AUC metric, score ensembling and fusion, folds and cross-validation."""

from .cv import FoldSpec, Report, classifier_cv, cross_validate, fingerprint, make_folds
from .fusion import EnsembleWeights, FusionWeights, ensemble_scores, fuse_scores, grid_search_mu
from .metrics import auc_from_arrays, roc_auc, roc_curve
from .plots import roc_svg, write_roc_svg, write_roc_svg_multi

__all__ = [
    "FoldSpec",
    "Report",
    "classifier_cv",
    "cross_validate",
    "fingerprint",
    "make_folds",
    "roc_svg",
    "write_roc_svg",
    "write_roc_svg_multi",
    "EnsembleWeights",
    "FusionWeights",
    "auc_from_arrays",
    "ensemble_scores",
    "fuse_scores",
    "grid_search_mu",
    "roc_auc",
    "roc_curve",
]
