"""Recall-error models for adapted video streams: evaluate, calibrate, plan."""
from .model import (
    AdaptationSetting,
    BrmodaConstants,
    ConstantsError,
    QrmodaConstants,
    Resolution,
    brmoda_eval,
    brmoda_required_bitrate,
    clamp_error,
    qrmoda_eval,
    qrmoda_max_qp_for_error,
    qrmoda_midpoint,
    reference,
    reference_constants,
)
from .metrics import ConfusionCounts, UndefinedMetricError, aggregate, f1, precision, r_squared, recall_error
from .fit import FitConfig, FitPoint, FitResult, analytic_jacobian, fit_brmoda, fit_qrmoda

__version__ = "0.1.0"

__all__ = [
    "AdaptationSetting", "BrmodaConstants", "ConstantsError", "QrmodaConstants", "Resolution",
    "brmoda_eval", "brmoda_required_bitrate", "clamp_error", "qrmoda_eval",
    "qrmoda_max_qp_for_error", "qrmoda_midpoint", "reference", "reference_constants",
    "ConfusionCounts", "UndefinedMetricError", "aggregate", "f1", "precision", "r_squared", "recall_error",
    "FitConfig", "FitPoint", "FitResult", "analytic_jacobian", "fit_brmoda", "fit_qrmoda",
]
