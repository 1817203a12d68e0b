"""Parametric recall-error models for adapted video streams.

Two model families are provided:

* QRMODA: recall error as a logistic function of the quantization parameter
  whose midpoint moves with the pixel count,
  ``E = c4 / (1 + exp(c5 * (qp - c1 * (N*M)**c2))) + c3``.
* BRMODA: recall error as the sum of two decaying exponentials of the
  *actual* bitrate, ``E = cp1 * (N*M)**cp2 * exp(cp3 * r) + cp4 * exp(cp5 * r)``.

Evaluation functions return raw model values; use :func:`clamp_error` before
reporting a rate.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional, Union

import numpy as np
from scipy.special import expit

QP_MIN = 0
QP_MAX = 51

BITRATE_UNITS = ("bps", "kbps", "mbps")
_UNIT_SCALE = {"bps": 1.0, "kbps": 1e3, "mbps": 1e6}


class ConstantsError(ValueError):
    """Model constants violate a sign or finiteness invariant."""


class ConstantsWarning(UserWarning):
    pass


@dataclass(frozen=True, order=True)
class Resolution:
    width: int
    height: int

    def __post_init__(self):
        for name in ("width", "height"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)):
                raise TypeError(f"{name} must be an integer, got {v!r}")
            if v < 1:
                raise ValueError(f"{name} must be >= 1, got {v}")
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))

    def pixel_count(self) -> int:
        return self.width * self.height

    def __str__(self):
        return f"{self.width}x{self.height}"

    @classmethod
    def parse(cls, text: str) -> "Resolution":
        """Parse ``"640x480"`` (also accepts ``*`` or ``X`` as separator)."""
        parts = text.lower().replace("*", "x").split("x")
        if len(parts) != 2:
            raise ValueError(f"cannot parse resolution {text!r}, expected WxH")
        try:
            return cls(int(parts[0]), int(parts[1]))
        except ValueError as exc:
            raise ValueError(f"cannot parse resolution {text!r}: {exc}") from None


def _check_finite(name, value):
    if isinstance(value, bool) or not isinstance(value, (int, float, np.floating, np.integer)):
        raise ConstantsError(f"{name} must be a real number, got {value!r}")
    if not math.isfinite(value):
        raise ConstantsError(f"{name} must be finite, got {value!r}")
    return float(value)


@dataclass(frozen=True)
class QrmodaConstants:
    """Constants of the quantization/resolution model.

    ``c1, c2`` place the logistic midpoint, ``c3`` is the error floor,
    ``c4`` the logistic amplitude and ``c5`` (negative) its growth rate.
    """

    c1: float
    c2: float
    c3: float
    c4: float
    c5: float
    sum_slack: float = field(default=0.05, compare=False, repr=False)

    def __post_init__(self):
        for name in ("c1", "c2", "c3", "c4", "c5"):
            object.__setattr__(self, name, _check_finite(name, getattr(self, name)))
        if not self.c5 < 0:
            raise ConstantsError(f"c5 must be negative (error grows with Qp), got {self.c5}")
        if self.c3 < 0:
            raise ConstantsError(f"c3 (error floor) must be >= 0, got {self.c3}")
        if self.c4 < 0:
            raise ConstantsError(f"c4 (logistic amplitude) must be >= 0, got {self.c4}")
        if self.c1 < 0:
            raise ConstantsError(f"c1 must be >= 0, got {self.c1}")
        if self.c3 + self.c4 > 1 + self.sum_slack:
            warnings.warn(
                f"c3 + c4 = {self.c3 + self.c4:.6g} exceeds 1 + {self.sum_slack}; "
                "the saturated error is not a plausible rate",
                ConstantsWarning,
                stacklevel=3,
            )

    @property
    def kind(self) -> str:
        return "qrmoda"

    def as_array(self) -> np.ndarray:
        return np.array([self.c1, self.c2, self.c3, self.c4, self.c5])

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("c1", "c2", "c3", "c4", "c5")}


@dataclass(frozen=True)
class BrmodaConstants:
    """Constants of the bitrate/resolution model.

    ``bitrate_unit`` declares the unit of the bitrate axis that ``cp3`` and
    ``cp5`` are expressed in; ``None`` means undeclared.
    """

    cp1: float
    cp2: float
    cp3: float
    cp4: float
    cp5: float
    bitrate_unit: Optional[str] = None

    def __post_init__(self):
        for name in ("cp1", "cp2", "cp3", "cp4", "cp5"):
            object.__setattr__(self, name, _check_finite(name, getattr(self, name)))
        if not self.cp3 < 0:
            raise ConstantsError(f"cp3 must be negative (error falls with bitrate), got {self.cp3}")
        if not self.cp5 < 0:
            raise ConstantsError(f"cp5 must be negative (error falls with bitrate), got {self.cp5}")
        if self.cp1 < 0:
            raise ConstantsError(f"cp1 must be >= 0, got {self.cp1}")
        if self.cp4 < 0:
            raise ConstantsError(f"cp4 must be >= 0, got {self.cp4}")
        if self.bitrate_unit is not None and self.bitrate_unit not in BITRATE_UNITS:
            raise ConstantsError(
                f"bitrate_unit must be one of {BITRATE_UNITS} or null, got {self.bitrate_unit!r}"
            )

    @property
    def kind(self) -> str:
        return "brmoda"

    def as_array(self) -> np.ndarray:
        return np.array([self.cp1, self.cp2, self.cp3, self.cp4, self.cp5])

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("cp1", "cp2", "cp3", "cp4", "cp5")}


ModelConstants = Union[QrmodaConstants, BrmodaConstants]


@dataclass(frozen=True)
class AdaptationSetting:
    """One adaptation point: a resolution plus either a Qp or an actual bitrate."""

    resolution: Resolution
    qp: Optional[float] = None
    bitrate: Optional[float] = None

    def __post_init__(self):
        if (self.qp is None) == (self.bitrate is None):
            raise ValueError("exactly one of qp or bitrate must be given")
        if self.qp is not None:
            if not (QP_MIN <= self.qp <= QP_MAX):
                raise ValueError(f"Qp must lie in [{QP_MIN}, {QP_MAX}], got {self.qp}")
        elif not (math.isfinite(self.bitrate) and self.bitrate > 0):
            raise ValueError(f"bitrate must be positive and finite, got {self.bitrate}")

    @property
    def knob_kind(self) -> str:
        return "qp" if self.qp is not None else "bitrate"

    @property
    def knob(self) -> float:
        return self.qp if self.qp is not None else self.bitrate


def convert_bitrate(value, from_unit: Optional[str], to_unit: Optional[str]):
    """Convert a bitrate between units; a missing unit on either side is a no-op."""
    if from_unit is None or to_unit is None or from_unit == to_unit:
        return value
    for u in (from_unit, to_unit):
        if u not in _UNIT_SCALE:
            raise ValueError(f"unknown bitrate unit {u!r}")
    return value * (_UNIT_SCALE[from_unit] / _UNIT_SCALE[to_unit])


def _pixels(res) -> float:
    if isinstance(res, Resolution):
        return float(res.pixel_count())
    return res


def _power_of_pixels(coeff, exponent, pixels):
    # (NM)**c2 in log space
    return coeff * np.exp(exponent * np.log(pixels))


def qrmoda_midpoint(k: QrmodaConstants, res: Resolution) -> float:
    """Qp at which the logistic term reaches half its amplitude."""
    return float(_power_of_pixels(k.c1, k.c2, _pixels(res)))


def qrmoda_eval(k: QrmodaConstants, res, qp):
    """Raw QRMODA recall error.

    ``res`` may be a :class:`Resolution` or an array of pixel counts
    broadcastable against ``qp``.
    """
    x0 = _power_of_pixels(k.c1, k.c2, _pixels(res))
    value = k.c4 * expit(-k.c5 * (np.asarray(qp, dtype=float) - x0)) + k.c3
    if np.ndim(value) == 0:
        return float(value)
    return value


def brmoda_eval(k: BrmodaConstants, res, r):
    """Raw BRMODA recall error at actual bitrate ``r`` (in ``k.bitrate_unit``)."""
    r = np.asarray(r, dtype=float)
    if np.any(r < 0) or np.any(np.isnan(r)):
        raise ValueError("bitrate must be non-negative")
    with np.errstate(over="ignore", invalid="ignore"):
        scale = _power_of_pixels(k.cp1, k.cp2, _pixels(res))
        value = scale * np.exp(k.cp3 * r) + k.cp4 * np.exp(k.cp5 * r)
    if not np.all(np.isfinite(value)):
        raise OverflowError("BRMODA value is not finite for these constants")
    if value.ndim == 0:
        return float(value)
    return value


def clamp_error(e):
    """Clamp a raw model value to the unit interval."""
    if np.ndim(e) == 0:
        if not math.isfinite(e):
            raise ValueError(f"cannot clamp non-finite error {e!r}")
        return min(max(float(e), 0.0), 1.0)
    e = np.asarray(e, dtype=float)
    if not np.all(np.isfinite(e)):
        raise ValueError("cannot clamp non-finite errors")
    return np.clip(e, 0.0, 1.0)


def _check_target(target):
    if not (0.0 <= target <= 1.0):
        raise ValueError(f"target error must lie in [0, 1], got {target}")


def qrmoda_max_qp_for_error(k: QrmodaConstants, res: Resolution, target: float) -> Optional[int]:
    """Largest integer Qp in [0, 51] whose clamped predicted error is <= ``target``.

    Returns ``None`` when even Qp 0 misses the target.
    """
    _check_target(target)

    def err(q):
        return clamp_error(qrmoda_eval(k, res, q))

    if err(QP_MAX) <= target:
        return QP_MAX
    if err(QP_MIN) > target:
        return None
    lo, hi = float(QP_MIN), float(QP_MAX)
    # err(lo) <= target < err(hi)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if err(mid) <= target:
            lo = mid
        else:
            hi = mid
    qp = int(math.floor(lo))
    while qp + 1 <= QP_MAX and err(qp + 1) <= target:
        qp += 1
    while qp > QP_MIN and err(qp) > target:
        qp -= 1
    return qp


def brmoda_required_bitrate(
    k: BrmodaConstants,
    res: Resolution,
    target: float,
    r_max: float = 1e9,
    rtol: float = 1e-12,
) -> Optional[float]:
    """Smallest bitrate with raw BRMODA error <= ``target``, or ``None``.

    Found by bisection on ``[0, r_max]``; the returned bitrate always meets
    the target and lies within ``rtol`` (relative) of the exact crossing.
    """
    _check_target(target)
    if brmoda_eval(k, res, 0.0) <= target:
        return 0.0
    # both terms stay positive at any finite bitrate; only underflow could reach 0
    if target <= 0.0 and (k.cp1 > 0 or k.cp4 > 0):
        return None
    if brmoda_eval(k, res, r_max) > target:
        return None
    lo, hi = 0.0, float(r_max)
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if brmoda_eval(k, res, mid) <= target:
            hi = mid
        else:
            lo = mid
    return hi


# -- serialization -----------------------------------------------------------

def constants_to_doc(k: ModelConstants, source: str = "", dataset=None, task=None) -> dict:
    doc = {"model": k.kind, "constants": k.to_dict()}
    doc["bitrate_unit"] = k.bitrate_unit if isinstance(k, BrmodaConstants) else None
    doc["source"] = source
    if dataset is not None:
        doc["dataset"] = dataset
    if task is not None:
        doc["task"] = task
    return doc


def constants_from_doc(doc: dict) -> ModelConstants:
    if not isinstance(doc, dict):
        raise ConstantsError("constants document must be a JSON object")
    model = doc.get("model")
    values = doc.get("constants")
    if not isinstance(values, dict):
        raise ConstantsError("missing 'constants' object")
    if model == "qrmoda":
        names = ("c1", "c2", "c3", "c4", "c5")
    elif model == "brmoda":
        names = ("cp1", "cp2", "cp3", "cp4", "cp5")
    else:
        raise ConstantsError(f"unknown model {model!r}, expected 'qrmoda' or 'brmoda'")
    missing = [n for n in names if n not in values]
    extra = sorted(set(values) - set(names))
    if missing or extra:
        raise ConstantsError(f"{model} constants: missing {missing}, unexpected {extra}")
    kwargs = {n: values[n] for n in names}
    if model == "qrmoda":
        return QrmodaConstants(**kwargs)
    return BrmodaConstants(**kwargs, bitrate_unit=doc.get("bitrate_unit"))


@dataclass(frozen=True)
class ReferenceSet:
    model: str
    dataset: str
    task: str
    constants: ModelConstants
    source: str


def reference_constants() -> list[ReferenceSet]:
    """The bundled published constant sets (2 models x 2 datasets x 2 tasks)."""
    text = resources.files("vidacc.data").joinpath("reference_constants.json").read_text(encoding="utf-8")
    out = []
    for doc in json.loads(text):
        out.append(ReferenceSet(doc["model"], doc["dataset"], doc["task"],
                                constants_from_doc(doc), doc["source"]))
    return out


def reference(model: str, dataset: str, task: str) -> ModelConstants:
    for ref in reference_constants():
        if (ref.model, ref.dataset, ref.task) == (model, dataset, task):
            return ref.constants
    known = ", ".join(f"{r.model}/{r.dataset}/{r.task}" for r in reference_constants())
    raise ValueError(f"no bundled constants for {model}/{dataset}/{task}; known: {known}")
