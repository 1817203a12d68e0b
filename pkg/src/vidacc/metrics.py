"""Confusion-count accuracy metrics and the coefficient of determination."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import reduce
from typing import Iterable, Sequence

import numpy as np


class UndefinedMetricError(ValueError):
    """A rate was requested whose denominator is zero."""


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fn: int
    fp: int = 0

    def __post_init__(self):
        for name in ("tp", "fn", "fp"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)):
                raise TypeError(f"{name} must be an integer count, got {v!r}")
            if v < 0:
                raise ValueError(f"{name} must be >= 0, got {v}")
            object.__setattr__(self, name, int(v))

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        if not isinstance(other, ConfusionCounts):
            return NotImplemented
        return ConfusionCounts(self.tp + other.tp, self.fn + other.fn, self.fp + other.fp)


def recall(c: ConfusionCounts) -> float:
    if c.tp + c.fn == 0:
        raise UndefinedMetricError("recall is undefined: no positive ground truth (tp + fn = 0)")
    return c.tp / (c.tp + c.fn)


def recall_error(c: ConfusionCounts) -> float:
    """Fraction of actual faces that were missed, ``1 - tp / (tp + fn)``."""
    return 1.0 - recall(c)


def precision(c: ConfusionCounts) -> float:
    if c.tp + c.fp == 0:
        raise UndefinedMetricError("precision is undefined: nothing predicted positive (tp + fp = 0)")
    return c.tp / (c.tp + c.fp)


def f1(c: ConfusionCounts) -> float:
    """Harmonic mean of precision and recall.

    Both rates must be defined. When both are zero the score is 0 by
    convention rather than an error.
    """
    p, r = precision(c), recall(c)
    if p + r == 0:
        return 0.0
    return 2 * p * r / (p + r)


def aggregate(frames: Iterable[ConfusionCounts]) -> ConfusionCounts:
    """Field-wise sum of per-frame counts.

    Rates computed from the result weight every face equally, which is not
    the same as averaging per-frame rates.
    """
    frames = list(frames)
    if not frames:
        raise ValueError("cannot aggregate an empty list of counts")
    return reduce(lambda a, b: a + b, frames)


@dataclass(frozen=True)
class SeriesPair:
    observed: tuple
    predicted: tuple

    def __init__(self, observed: Sequence[float], predicted: Sequence[float]):
        obs = tuple(float(v) for v in observed)
        pred = tuple(float(v) for v in predicted)
        if len(obs) != len(pred):
            raise ValueError(f"series lengths differ: {len(obs)} vs {len(pred)}")
        if len(obs) < 2:
            raise ValueError("series need at least two points")
        if not all(math.isfinite(v) for v in obs + pred):
            raise ValueError("series values must be finite")
        object.__setattr__(self, "observed", obs)
        object.__setattr__(self, "predicted", pred)


def r_squared(s) -> float:
    """Coefficient of determination ``1 - SS_res / SS_tot``.

    Accepts a :class:`SeriesPair` or an ``(observed, predicted)`` tuple.
    Negative for fits worse than the observed mean.
    """
    if not isinstance(s, SeriesPair):
        s = SeriesPair(*s)
    obs = np.asarray(s.observed)
    pred = np.asarray(s.predicted)
    ss_tot = float(np.sum((obs - obs.mean()) ** 2))
    if ss_tot == 0.0:
        raise UndefinedMetricError("R^2 is undefined: observed series has zero variance")
    ss_res = float(np.sum((obs - pred) ** 2))
    return 1.0 - ss_res / ss_tot
