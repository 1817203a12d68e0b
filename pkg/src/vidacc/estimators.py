"""scikit-learn compatible regressors wrapping the calibration routines.

Design matrices have three columns: frame width, frame height, and the
adaptation knob (Qp for :class:`QrmodaRegressor`, actual bitrate for
:class:`BrmodaRegressor`). Targets are observed recall errors.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .fit import FitConfig, FitPoint, fit_brmoda, fit_qrmoda
from .model import QP_MAX, QP_MIN, Resolution, brmoda_eval, clamp_error, qrmoda_eval, qrmoda_midpoint


def check_design(X, y=None, knob="qp"):
    """Validate a (width, height, knob) design matrix; returns float arrays."""
    if y is None:
        X = check_array(X, dtype=np.float64)
    else:
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
    if X.shape[1] != 3:
        raise ValueError(f"expected 3 columns (width, height, knob), got {X.shape[1]}")
    wh = X[:, :2]
    if np.any(wh < 1) or np.any(wh != np.round(wh)):
        raise ValueError("width and height must be positive integers")
    if knob == "qp" and np.any((X[:, 2] < QP_MIN) | (X[:, 2] > QP_MAX)):
        raise ValueError(f"Qp column must lie in [{QP_MIN}, {QP_MAX}]")
    if knob == "bitrate" and np.any(X[:, 2] < 0):
        raise ValueError("bitrate column must be non-negative")
    if y is not None and np.any((y < 0) | (y > 1)):
        raise ValueError("observed errors must lie in [0, 1]")
    return X if y is None else (X, y)


def _points(X, y, unit=None):
    return [FitPoint(Resolution(int(w), int(h)), float(k), float(e), unit) for (w, h, k), e in zip(X, y)]


class _ModelRegressor(RegressorMixin, BaseEstimator):
    _knob = "qp"

    def __init__(self, n_starts=16, max_iterations=200, damping_init=1e-3, damping_scale=10.0,
                 convergence_tol=1e-10, parameter_bounds=None, random_state=0, clip=False):
        self.n_starts = n_starts
        self.max_iterations = max_iterations
        self.damping_init = damping_init
        self.damping_scale = damping_scale
        self.convergence_tol = convergence_tol
        self.parameter_bounds = parameter_bounds
        self.random_state = random_state
        self.clip = clip

    def _config(self):
        if self.random_state is None:
            raise ValueError("random_state must be an integer seed")
        return FitConfig(
            rng_seed=int(self.random_state),
            max_iterations=self.max_iterations,
            damping_init=self.damping_init,
            damping_scale=self.damping_scale,
            convergence_tol=self.convergence_tol,
            n_starts=self.n_starts,
            parameter_bounds=dict(self.parameter_bounds or {}),
        )

    def predict(self, X):
        check_is_fitted(self, "constants_")
        X = check_design(X, knob=self._knob)
        pixels = X[:, 0] * X[:, 1]
        raw = self._evaluate(pixels, X[:, 2])
        return clamp_error(raw) if self.clip else raw


class QrmodaRegressor(_ModelRegressor):
    """Recall error as a logistic function of Qp with a resolution-dependent midpoint.

    Parameters mirror :class:`vidacc.fit.FitConfig`; ``random_state`` seeds the
    multi-start draws. With ``clip=True`` predictions are clamped to [0, 1].

    Attributes
    ----------
    constants_ : QrmodaConstants
    fit_result_ : FitResult
    """

    _knob = "qp"

    def fit(self, X, y):
        X, y = check_design(X, y, knob="qp")
        self.fit_result_ = fit_qrmoda(_points(X, y), self._config())
        self.constants_ = self.fit_result_.constants
        self.n_features_in_ = 3
        return self

    def _evaluate(self, pixels, knob):
        return qrmoda_eval(self.constants_, pixels, knob)

    def midpoint(self, width, height):
        check_is_fitted(self, "constants_")
        return qrmoda_midpoint(self.constants_, Resolution(int(width), int(height)))


class BrmodaRegressor(_ModelRegressor):
    """Recall error as two decaying exponentials of the actual bitrate.

    ``bitrate_unit`` is recorded on the fitted constants.
    """

    _knob = "bitrate"

    def __init__(self, n_starts=16, max_iterations=200, damping_init=1e-3, damping_scale=10.0,
                 convergence_tol=1e-10, parameter_bounds=None, random_state=0, clip=False,
                 bitrate_unit=None):
        super().__init__(n_starts=n_starts, max_iterations=max_iterations, damping_init=damping_init,
                         damping_scale=damping_scale, convergence_tol=convergence_tol,
                         parameter_bounds=parameter_bounds, random_state=random_state, clip=clip)
        self.bitrate_unit = bitrate_unit

    def fit(self, X, y):
        X, y = check_design(X, y, knob="bitrate")
        self.fit_result_ = fit_brmoda(_points(X, y, self.bitrate_unit), self._config())
        self.constants_ = self.fit_result_.constants
        self.n_features_in_ = 3
        return self

    def _evaluate(self, pixels, knob):
        return np.asarray(brmoda_eval(self.constants_, pixels, knob))
