"""Calibration of model constants by bounded damped least squares.

The optimizer is a Levenberg-Marquardt iteration with Marquardt diagonal
scaling and projection onto box bounds after every trial step. It runs from
one profiled heuristic start plus ``n_starts`` seeded random starts and keeps
the start with the lowest residual sum of squares.

Internally pixel counts are divided by the geometric mean pixel count of the
data so that ``(NM)**c2`` stays near one; the leading coefficient is mapped
back exactly (``c1 = a * scale**-c2``) on output.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy.special import expit

from .metrics import r_squared, UndefinedMetricError
from .model import (
    BrmodaConstants,
    ModelConstants,
    QrmodaConstants,
    Resolution,
    brmoda_eval,
    qrmoda_eval,
)

QRMODA_NAMES = ("c1", "c2", "c3", "c4", "c5")
BRMODA_NAMES = ("cp1", "cp2", "cp3", "cp4", "cp5")

DEFAULT_BOUNDS = {
    "c1": (1e-12, 1e3),
    "c2": (-2.0, 3.0),
    "c3": (0.0, 2.0),
    "c4": (0.0, 2.0),
    "c5": (-5.0, -1e-6),
    "cp1": (0.0, 2.0),
    "cp2": (-2.0, 3.0),
    "cp3": (-10.0, -1e-12),
    "cp4": (0.0, 2.0),
    "cp5": (-10.0, -1e-12),
}


class FitError(RuntimeError):
    pass


class InsufficientDataError(FitError, ValueError):
    pass


class FitPoint(NamedTuple):
    resolution: Resolution
    knob: float
    error: float
    unit: Optional[str] = None


@dataclass(frozen=True)
class FitConfig:
    rng_seed: int
    max_iterations: int = 200
    damping_init: float = 1e-3
    damping_scale: float = 10.0
    convergence_tol: float = 1e-10
    n_starts: int = 16
    parameter_bounds: dict = field(default_factory=dict)

    def __post_init__(self):
        if isinstance(self.rng_seed, bool) or not isinstance(self.rng_seed, (int, np.integer)):
            raise TypeError("rng_seed must be an integer")
        if not 0 <= self.rng_seed < 2**64:
            raise ValueError("rng_seed must fit in an unsigned 64-bit integer")
        if self.n_starts < 1:
            raise ValueError("n_starts must be >= 1")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not (self.damping_init > 0 and self.damping_scale > 1):
            raise ValueError("damping_init must be > 0 and damping_scale > 1")
        for name, (lo, hi) in self.bounds_for(QRMODA_NAMES + BRMODA_NAMES).items():
            if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
                raise ValueError(f"bounds for {name} must be finite with low < high, got {(lo, hi)}")

    def bounds_for(self, names) -> dict:
        unknown = set(self.parameter_bounds) - set(DEFAULT_BOUNDS)
        if unknown:
            raise ValueError(f"unknown parameter bounds {sorted(unknown)}")
        out = {}
        for n in names:
            lo, hi = self.parameter_bounds.get(n, DEFAULT_BOUNDS[n])
            out[n] = (float(lo), float(hi))
        return out


@dataclass(frozen=True)
class FitResult:
    constants: ModelConstants
    r2: float
    ss_res: float
    residuals: tuple
    converged: bool
    start_index: int
    iterations: int
    n_points: int
    seed: int

    def to_doc(self, source: str = "fit", **extra) -> dict:
        from .model import constants_to_doc

        doc = constants_to_doc(self.constants, source=source, **extra)
        doc["fit"] = {
            "r2": self.r2,
            "ss_res": self.ss_res,
            "converged": self.converged,
            "seed": self.seed,
            "n_points": self.n_points,
        }
        return doc


# -- model values and partial derivatives on raw arrays ----------------------

def _qrmoda_value(theta, pixels, qp):
    c1, c2, c3, c4, c5 = theta
    x0 = c1 * np.exp(c2 * np.log(pixels))
    return c4 * expit(-c5 * (qp - x0)) + c3


def _qrmoda_jac(theta, pixels, qp):
    c1, c2, c3, c4, c5 = theta
    logp = np.log(pixels)
    pw = np.exp(c2 * logp)
    x0 = c1 * pw
    s = expit(-c5 * (qp - x0))
    ds = s * (1.0 - s)
    d_x0 = c4 * c5 * ds
    return np.column_stack([
        d_x0 * pw,
        d_x0 * x0 * logp,
        np.ones_like(s),
        s,
        -c4 * ds * (qp - x0),
    ])


def _brmoda_value(theta, pixels, r):
    p1, p2, p3, p4, p5 = theta
    return p1 * np.exp(p2 * np.log(pixels) + p3 * r) + p4 * np.exp(p5 * r)


def _brmoda_jac(theta, pixels, r):
    p1, p2, p3, p4, p5 = theta
    logp = np.log(pixels)
    base = np.exp(p2 * logp + p3 * r)
    slow = np.exp(p5 * r)
    return np.column_stack([
        base,
        p1 * base * logp,
        p1 * base * r,
        slow,
        p4 * slow * r,
    ])


_VALUE = {"qrmoda": _qrmoda_value, "brmoda": _brmoda_value}
_JAC = {"qrmoda": _qrmoda_jac, "brmoda": _brmoda_jac}


def analytic_jacobian(kind: str, constants: ModelConstants, point) -> np.ndarray:
    """Partial derivatives of the model value with respect to its five constants.

    ``point`` is ``(resolution, knob)``; the knob is Qp for ``"qrmoda"`` and
    the actual bitrate for ``"brmoda"``.
    """
    if kind not in _JAC:
        raise ValueError(f"unknown model kind {kind!r}")
    if constants.kind != kind:
        raise ValueError(f"constants are {constants.kind}, requested {kind}")
    res, knob = point[0], point[1]
    pixels = np.array([float(res.pixel_count())])
    return _JAC[kind](constants.as_array(), pixels, np.array([float(knob)]))[0]


# -- optimizer ----------------------------------------------------------------

@dataclass
class _Run:
    theta: np.ndarray
    ss: float
    converged: bool
    iterations: int


def _levenberg_marquardt(kind, theta0, pixels, knob, y, project, cfg: FitConfig, on_accept=None) -> _Run:
    """Bounded Levenberg-Marquardt; ``on_accept(theta, ss)`` sees every accepted iterate."""
    value, jac = _VALUE[kind], _JAC[kind]
    theta = project(np.asarray(theta0, dtype=float))
    with np.errstate(all="ignore"):
        resid = y - value(theta, pixels, knob)
    ss = float(resid @ resid)
    if not math.isfinite(ss):
        return _Run(theta, math.inf, False, 0)
    lam = cfg.damping_init
    converged = False
    it = 0
    while it < cfg.max_iterations:
        it += 1
        if ss == 0.0:
            converged = True
            break
        with np.errstate(all="ignore"):
            J = jac(theta, pixels, knob)
        if not np.all(np.isfinite(J)):
            break
        A = J.T @ J
        g = J.T @ resid
        diag = np.diag(A).copy()
        diag = np.maximum(diag, 1e-12 * max(float(diag.max()), 1e-300))
        accepted = False
        while lam < 1e16:
            try:
                step = np.linalg.solve(A + lam * np.diag(diag), g)
            except np.linalg.LinAlgError:
                lam *= cfg.damping_scale
                continue
            cand = project(theta + step)
            with np.errstate(all="ignore"):
                cand_resid = y - value(cand, pixels, knob)
            cand_ss = float(cand_resid @ cand_resid)
            if math.isfinite(cand_ss) and cand_ss < ss:
                accepted = True
                break
            lam *= cfg.damping_scale
        if not accepted:
            # no descent direction left at any damping: stationary within bounds
            converged = True
            break
        drop = ss - cand_ss
        theta, resid, ss = cand, cand_resid, cand_ss
        if on_accept is not None:
            on_accept(theta, ss)
        lam = max(lam / cfg.damping_scale, 1e-15)
        if drop <= cfg.convergence_tol * ss or ss < 1e-30:
            converged = True
            break
    return _Run(theta, ss, converged, it)


def _nonneg_pair(a, b, y):
    """Least squares ``y ~ u*a + v*b`` with u, v >= 0."""
    best = (0.0, 0.0, float(y @ y))
    M = np.column_stack([a, b])
    sol, *_ = np.linalg.lstsq(M, y, rcond=None)
    if sol[0] >= 0 and sol[1] >= 0:
        r = y - M @ sol
        return float(sol[0]), float(sol[1]), float(r @ r)
    for col, k in ((a, 0), (b, 1)):
        denom = float(col @ col)
        if denom > 0:
            u = max(float(col @ y) / denom, 0.0)
            r = y - u * col
            ss = float(r @ r)
            if ss < best[2]:
                best = (u, 0.0, ss) if k == 0 else (0.0, u, ss)
    return best


class _Problem:
    """A fitting problem in conditioned coordinates."""

    def __init__(self, kind, points: Sequence[FitPoint], cfg: FitConfig):
        self.kind = kind
        self.cfg = cfg
        self.names = QRMODA_NAMES if kind == "qrmoda" else BRMODA_NAMES
        self.bounds = cfg.bounds_for(self.names)
        pixels = np.array([p.resolution.pixel_count() for p in points], dtype=float)
        self.knob = np.array([p.knob for p in points], dtype=float)
        self.y = np.array([p.error for p in points], dtype=float)
        self.scale = float(np.exp(np.mean(np.log(pixels))))
        self.pixels = pixels / self.scale
        self.lo = np.array([self.bounds[n][0] for n in self.names])
        self.hi = np.array([self.bounds[n][1] for n in self.names])

    def to_external(self, theta):
        out = np.array(theta, dtype=float)
        out[0] = theta[0] * self.scale ** (-theta[1])
        return out

    def to_internal(self, ext):
        out = np.array(ext, dtype=float)
        out[0] = ext[0] * self.scale ** ext[1]
        return out

    def project(self, theta):
        theta = np.where(np.isfinite(theta), theta, 0.5 * (self.lo + self.hi))
        ext = np.array(theta, dtype=float)
        ext[1] = min(max(theta[1], self.lo[1]), self.hi[1])
        with np.errstate(over="ignore"):
            ext[0] = theta[0] * self.scale ** (-ext[1])
        ext = np.clip(np.nan_to_num(ext, nan=self.hi[0], posinf=self.hi[0]), self.lo, self.hi)
        return self.to_internal(ext)

    def heuristic_start(self):
        """Profile the two linear constants over a coarse grid of the others."""
        y, knob, px = self.y, self.knob, self.pixels
        best = None
        if self.kind == "qrmoda":
            kmin, kmax = float(knob.min()), float(knob.max())
            span = max(kmax - kmin, 1.0)
            for a in np.linspace(kmin - 0.25 * span, kmax + 0.25 * span, 17):
                if a <= 0:
                    continue
                for c2 in (-0.5, -0.1, 0.0, 0.05, 0.1, 0.25, 0.5, 1.0, 1.5):
                    x0 = a * np.exp(c2 * np.log(px))
                    for rate in np.geomspace(0.02, 3.0, 12):
                        s = expit(rate * (knob - x0))
                        c4, c3, ss = _nonneg_pair(s, np.ones_like(s), y)
                        if best is None or ss < best[0]:
                            best = (ss, [a, c2, c3, c4, -rate])
        else:
            pos = knob[knob > 0]
            rlo = float(pos.min()) if pos.size else 1.0
            rhi = float(knob.max()) if knob.max() > 0 else 1.0
            rates = np.geomspace(0.1 / rhi, 10.0 / rlo, 15)
            for c2 in (-0.5, 0.0, 0.2, 0.5, 1.0, 1.5):
                pw = np.exp(c2 * np.log(px))
                for fast in rates:
                    col1 = pw * np.exp(-fast * knob)
                    for slow in rates:
                        if slow > fast:
                            continue
                        col2 = np.exp(-slow * knob)
                        a, b, ss = _nonneg_pair(col1, col2, y)
                        if best is None or ss < best[0]:
                            best = (ss, [a, c2, -fast, b, -slow])
        return self.project(np.array(best[1]))

    def random_starts(self, rng: np.random.Generator, n: int):
        y, knob = self.y, self.knob
        ymax = max(float(y.max()), 1e-3)
        starts = []
        for _ in range(n):
            ext = np.empty(5)
            ext[1] = rng.uniform(self.lo[1], self.hi[1])
            if self.kind == "qrmoda":
                a = rng.uniform(max(float(knob.min()), 1e-3), max(float(knob.max()), 1.0))
                ext[2] = rng.uniform(0.0, ymax)
                ext[3] = rng.uniform(0.0, ymax)
                ext[4] = -math.exp(rng.uniform(math.log(0.01), math.log(2.0)))
            else:
                pos = knob[knob > 0]
                rlo = float(pos.min()) if pos.size else 1.0
                rhi = max(float(knob.max()), rlo)
                a = rng.uniform(0.0, ymax)
                ext[2] = -math.exp(rng.uniform(math.log(0.1 / rhi), math.log(10.0 / rlo)))
                ext[3] = rng.uniform(0.0, ymax)
                ext[4] = -math.exp(rng.uniform(math.log(0.01 / rhi), math.log(1.0 / rlo)))
            ext[0] = a * self.scale ** (-ext[1])
            ext = np.clip(ext, self.lo, self.hi)
            starts.append(self.project(self.to_internal(ext)))
        return starts


def _as_points(points) -> list[FitPoint]:
    out = []
    for p in points:
        if isinstance(p, FitPoint):
            out.append(p)
        else:
            out.append(FitPoint(*p))
    return out


def _check_points(points, kind):
    if len(points) < 6:
        raise InsufficientDataError(f"need at least 6 points to fit 5 constants, got {len(points)}")
    if len({p.resolution for p in points}) < 2:
        raise InsufficientDataError("need at least 2 distinct resolutions")
    if len({float(p.knob) for p in points}) < 4:
        label = "Qp values" if kind == "qrmoda" else "bitrates"
        raise InsufficientDataError(f"need at least 4 distinct {label}")
    for p in points:
        if not (math.isfinite(p.knob) and math.isfinite(p.error)):
            raise ValueError(f"non-finite fit point {p}")
        if kind == "brmoda" and p.knob < 0:
            raise ValueError(f"negative bitrate in fit point {p}")


def _fit(kind, points, cfg: FitConfig) -> FitResult:
    problem = _Problem(kind, points, cfg)
    rng = np.random.default_rng(cfg.rng_seed)
    starts = [problem.heuristic_start()] + problem.random_starts(rng, cfg.n_starts)
    best_index, best = None, None
    for index, theta0 in enumerate(starts):
        run = _levenberg_marquardt(kind, theta0, problem.pixels, problem.knob, problem.y,
                                   problem.project, cfg)
        if not math.isfinite(run.ss):
            continue
        if best is None or run.ss < best.ss:
            best_index, best = index, run
    if best is None:
        raise FitError("all starts diverged")

    ext = problem.to_external(best.theta)
    if kind == "qrmoda":
        constants = QrmodaConstants(*ext)
        predicted = np.array([qrmoda_eval(constants, p.resolution, p.knob) for p in points])
    else:
        constants = BrmodaConstants(*ext, bitrate_unit=points[0].unit)
        predicted = np.array([brmoda_eval(constants, p.resolution, p.knob) for p in points])
    observed = problem.y
    residuals = observed - predicted
    ss_res = float(residuals @ residuals)
    try:
        r2 = r_squared((observed, predicted))
    except UndefinedMetricError:
        r2 = float("nan")
    return FitResult(
        constants=constants,
        r2=r2,
        ss_res=ss_res,
        residuals=tuple(float(v) for v in residuals),
        converged=best.converged,
        start_index=best_index,
        iterations=best.iterations,
        n_points=len(points),
        seed=cfg.rng_seed,
    )


def fit_qrmoda(points, cfg: FitConfig) -> FitResult:
    """Fit QRMODA constants to ``(resolution, qp, error)`` points."""
    points = _as_points(points)
    _check_points(points, "qrmoda")
    return _fit("qrmoda", points, cfg)


def fit_brmoda(points, cfg: FitConfig) -> FitResult:
    """Fit BRMODA constants to ``(resolution, actual_bitrate, error, unit)`` points.

    All points must share one bitrate unit; the fitted constants carry it.
    """
    points = _as_points(points)
    units = {p.unit for p in points}
    if len(units) > 1:
        raise ValueError(f"points mix bitrate units {sorted(map(str, units))}; convert first")
    _check_points(points, "brmoda")
    return _fit("brmoda", points, cfg)


# -- reporting ----------------------------------------------------------------

@dataclass(frozen=True)
class CurveRow:
    resolution: Resolution
    knob: float
    observed: float
    predicted: float

    @property
    def residual(self) -> float:
        return self.observed - self.predicted


@dataclass(frozen=True)
class ResolutionCurve:
    resolution: Resolution
    rows: tuple
    r2: Optional[float]


def predict_points(constants: ModelConstants, points) -> np.ndarray:
    points = _as_points(points)
    if isinstance(constants, QrmodaConstants):
        return np.array([qrmoda_eval(constants, p.resolution, p.knob) for p in points])
    return np.array([brmoda_eval(constants, p.resolution, p.knob) for p in points])


def residual_report(result: FitResult, points) -> list[ResolutionCurve]:
    """Observed vs predicted per point, grouped by resolution, with per-resolution R^2.

    R^2 is ``None`` for a resolution whose observations have zero variance.
    """
    points = _as_points(points)
    if len(points) != len(result.residuals):
        raise ValueError(f"result has {len(result.residuals)} residuals but {len(points)} points given")
    predicted = predict_points(result.constants, points)
    observed = np.array([p.error for p in points])
    if not np.allclose(observed - predicted, result.residuals, rtol=0, atol=1e-12):
        raise ValueError("points do not match the residuals stored in the fit result")
    by_res: dict = {}
    for p, pred in zip(points, predicted):
        by_res.setdefault(p.resolution, []).append(CurveRow(p.resolution, float(p.knob), float(p.error), float(pred)))
    curves = []
    for res in sorted(by_res, key=lambda r: (r.pixel_count(), r.width)):
        rows = tuple(sorted(by_res[res], key=lambda row: row.knob))
        try:
            r2 = r_squared(([r.observed for r in rows], [r.predicted for r in rows])) if len(rows) > 1 else None
        except UndefinedMetricError:
            r2 = None
        curves.append(ResolutionCurve(res, rows, r2))
    return curves


def format_report(curves: list[ResolutionCurve]) -> str:
    """Comma-delimited table, one line per point, 12 significant digits."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["width", "height", "knob", "observed", "predicted", "residual", "resolution_r2"])
    for curve in curves:
        r2 = "" if curve.r2 is None else f"{curve.r2:.12g}"
        for row in curve.rows:
            w.writerow([row.resolution.width, row.resolution.height, f"{row.knob:.12g}",
                        f"{row.observed:.12g}", f"{row.predicted:.12g}", f"{row.residual:.12g}", r2])
    return buf.getvalue()
