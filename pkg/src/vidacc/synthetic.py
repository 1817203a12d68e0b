"""Synthetic measurement grids drawn from known constants.

Used to check that calibration recovers a model's predictions and to
produce example measurement files.
"""
from __future__ import annotations

import math

import numpy as np

from .fit import FitPoint
from .model import (
    BrmodaConstants,
    QrmodaConstants,
    Resolution,
    brmoda_eval,
    qrmoda_eval,
)

STANDARD_LADDER = (
    Resolution(160, 120),
    Resolution(320, 240),
    Resolution(480, 360),
    Resolution(640, 480),
    Resolution(800, 600),
    Resolution(960, 720),
)


def truncated_gaussian(rng: np.random.Generator, mean: float, sigma: float,
                       low: float = 0.0, high: float = 1.0, max_tries: int = 100) -> float:
    """``mean + N(0, sigma)`` redrawn until it lands in ``[low, high]``.

    After ``max_tries`` rejected draws the last draw is clamped.
    """
    if sigma == 0:
        return min(max(mean, low), high)
    value = mean
    for _ in range(max_tries):
        value = mean + sigma * rng.standard_normal()
        if low <= value <= high:
            return float(value)
    return float(min(max(value, low), high))


def resolution_for_pixels(pixels: float) -> Resolution:
    """Roughly 4:3 resolution near a target pixel count.

    Small counts are factored exactly so that distinct targets stay distinct.
    """
    n = max(1, round(float(pixels)))
    if n >= 192:
        height = round(math.sqrt(n * 3 / 4))
        return Resolution(round(n / height), height)
    best = None
    for h in range(1, math.isqrt(n) + 1):
        if n % h == 0:
            w = n // h
            score = abs(math.log((w / h) / (4 / 3)))
            if best is None or score < best[0]:
                best = (score, w, h)
    return Resolution(best[1], best[2])


def qrmoda_resolutions(k: QrmodaConstants, n: int = 6, midpoints=(15.0, 51.0)) -> list[Resolution]:
    """Resolutions whose logistic midpoints spread across the Qp range.

    Video-sized resolutions (160x120 up to 8K) are preferred; constants whose
    midpoints only land in the Qp range for tiny pixel counts get tiny
    resolutions. Falls back to the standard ladder when the midpoint does
    not depend on resolution.
    """
    if k.c2 == 0 or k.c1 == 0:
        return list(STANDARD_LADDER[:n])
    for pixel_range in ((160 * 120, 7680 * 4320), (1, 7680 * 4320)):
        reach = sorted(k.c1 * np.asarray(pixel_range, dtype=float) ** k.c2)
        lo, hi = max(midpoints[0], reach[0]), min(midpoints[1], reach[1])
        if hi - lo >= 5.0:
            break
    else:
        lo, hi = reach
    out = []
    for x0 in np.linspace(lo, hi, n):
        res = resolution_for_pixels((x0 / k.c1) ** (1.0 / k.c2))
        if res not in out:
            out.append(res)
    return sorted(out, key=Resolution.pixel_count)


def qrmoda_grid(k: QrmodaConstants, resolutions=None, qps=None, sigma: float = 0.0,
                rng: np.random.Generator | None = None) -> list[FitPoint]:
    resolutions = qrmoda_resolutions(k) if resolutions is None else resolutions
    qps = np.linspace(5, 50, 10) if qps is None else qps
    points = []
    for res in resolutions:
        for qp in qps:
            truth = min(max(qrmoda_eval(k, res, float(qp)), 0.0), 1.0)
            err = truncated_gaussian(rng, truth, sigma) if sigma > 0 else truth
            points.append(FitPoint(res, float(qp), err))
    return points


def brmoda_bitrates(k: BrmodaConstants, resolutions, n: int = 14) -> np.ndarray:
    """Log-spaced bitrates from where the model first drops below 1 to the slow tail."""
    worst = max(resolutions, key=lambda r: brmoda_eval(k, r, 0.0))
    lo = 0.1 / abs(k.cp3)
    if brmoda_eval(k, worst, 0.0) > 0.98:
        r = lo
        while brmoda_eval(k, worst, r) > 0.98:
            r *= 1.1
        lo = r
    hi = max(3.0 / abs(k.cp5), 100 * lo)
    return np.geomspace(lo, hi, n)


def brmoda_grid(k: BrmodaConstants, resolutions=None, bitrates=None, sigma: float = 0.0,
                rng: np.random.Generator | None = None) -> list[FitPoint]:
    resolutions = list(STANDARD_LADDER) if resolutions is None else resolutions
    bitrates = brmoda_bitrates(k, resolutions) if bitrates is None else bitrates
    points = []
    for res in resolutions:
        for r in bitrates:
            truth = min(max(brmoda_eval(k, res, float(r)), 0.0), 1.0)
            err = truncated_gaussian(rng, truth, sigma) if sigma > 0 else truth
            points.append(FitPoint(res, float(r), err, k.bitrate_unit))
    return points


def half_step(values) -> np.ndarray:
    """Midpoints between consecutive grid values (geometric for log grids)."""
    values = np.asarray(values, dtype=float)
    if np.all(values > 0) and values[-1] / values[0] > 50:
        return np.sqrt(values[:-1] * values[1:])
    return 0.5 * (values[:-1] + values[1:])
