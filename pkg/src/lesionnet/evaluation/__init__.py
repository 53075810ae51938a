from .mapping import map_gt_cross_schema, map_predictions_cross_schema
from .roc import RocCurve, ScoredSet, UndefinedAUC, auc, merge_fold_curves, roc_curve, trapezoid_auc
from .run import EvalResult, EvaluationError, evaluate_run, pointing_summary, predict, read_curve_csv, write_curve_csv
from .segmentation import PointingResult, downscale_gt, eval_segmentation, pointing_game
from .stats import FoldedMetric, folded_auc, t_test_two_tailed

__all__ = [
    "EvalResult",
    "EvaluationError",
    "FoldedMetric",
    "PointingResult",
    "RocCurve",
    "ScoredSet",
    "UndefinedAUC",
    "auc",
    "downscale_gt",
    "eval_segmentation",
    "evaluate_run",
    "folded_auc",
    "map_gt_cross_schema",
    "map_predictions_cross_schema",
    "merge_fold_curves",
    "pointing_game",
    "pointing_summary",
    "predict",
    "read_curve_csv",
    "roc_curve",
    "t_test_two_tailed",
    "trapezoid_auc",
    "write_curve_csv",
]
