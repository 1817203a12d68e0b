"""Measurement files and constants files.

Measurement files are comma-delimited text with the header::

    dataset,task,width,height,knob_kind,knob_value,unit,tp,fn,fp,observed_error

Each row is one adaptation point. Either the confusion counts ``tp,fn,fp`` or
``observed_error`` (or both, when consistent) must be present. Validation
collects every problem in a file before failing.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

from .fit import FitPoint, InsufficientDataError
from .metrics import ConfusionCounts, UndefinedMetricError, recall_error
from .model import (
    BITRATE_UNITS,
    QP_MAX,
    QP_MIN,
    ConstantsError,
    ModelConstants,
    Resolution,
    constants_from_doc,
    constants_to_doc,
)

COLUMNS = ("dataset", "task", "width", "height", "knob_kind", "knob_value",
           "unit", "tp", "fn", "fp", "observed_error")
TASKS = ("detection", "recognition")
KNOB_KINDS = ("qp", "bitrate")


@dataclass(frozen=True)
class RowError:
    row: int
    column: Optional[str]
    message: str

    def __str__(self):
        where = f"row {self.row}" + (f", column {self.column}" if self.column else "")
        return f"{where}: {self.message}"


class MeasurementError(ValueError):
    """A measurement file failed validation; ``errors`` lists every problem."""

    def __init__(self, errors):
        self.errors = list(errors)
        lines = "\n".join(f"  {e}" for e in self.errors)
        super().__init__(f"{len(self.errors)} error(s) in measurement file:\n{lines}")


@dataclass(frozen=True)
class MeasurementRecord:
    dataset_id: str
    task: str
    resolution: Resolution
    knob_kind: str
    knob_value: float
    unit: Optional[str] = None
    counts: Optional[ConfusionCounts] = None
    observed_error: Optional[float] = None
    row: Optional[int] = None

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.knob_kind not in KNOB_KINDS:
            raise ValueError(f"knob_kind must be one of {KNOB_KINDS}, got {self.knob_kind!r}")
        if not math.isfinite(self.knob_value):
            raise ValueError("knob_value must be finite")
        if self.knob_kind == "qp":
            if not QP_MIN <= self.knob_value <= QP_MAX:
                raise ValueError(f"Qp must lie in [{QP_MIN}, {QP_MAX}], got {self.knob_value}")
            if self.unit is not None:
                raise ValueError("unit must be empty for qp rows")
        else:
            if not self.knob_value > 0:
                raise ValueError(f"bitrate must be > 0, got {self.knob_value}")
            if self.unit not in BITRATE_UNITS:
                raise ValueError(f"bitrate rows need a unit in {BITRATE_UNITS}, got {self.unit!r}")
        if self.counts is None and self.observed_error is None:
            raise ValueError("either counts or observed_error is required")
        if self.observed_error is not None:
            if not (math.isfinite(self.observed_error) and 0.0 <= self.observed_error <= 1.0):
                raise ValueError(f"observed_error must lie in [0, 1], got {self.observed_error}")
            if self.counts is not None and self.counts.tp + self.counts.fn > 0:
                derived = recall_error(self.counts)
                if abs(derived - self.observed_error) >= 1e-9:
                    raise ValueError(
                        f"observed_error {self.observed_error} disagrees with counts (recall error {derived})"
                    )

    @property
    def error(self) -> float:
        """Observed recall error, derived from counts when present."""
        if self.counts is not None:
            return recall_error(self.counts)
        return self.observed_error


@dataclass(frozen=True)
class MeasurementSeries:
    dataset_id: str
    task: str
    knob_kind: str
    unit: Optional[str]
    records: tuple

    @property
    def key(self):
        return (self.dataset_id, self.task, self.knob_kind)

    @property
    def resolutions(self) -> list[Resolution]:
        return sorted({r.resolution for r in self.records})

    @property
    def knob_grid(self) -> list[float]:
        return sorted({r.knob_value for r in self.records})


def _sort_key(rec: MeasurementRecord):
    return (rec.resolution.width, rec.resolution.height, rec.knob_value)


def _parse_int(text, column, row, errors, *, minimum=0):
    try:
        value = int(text)
    except ValueError:
        errors.append(RowError(row, column, f"expected an integer, got {text!r}"))
        return None
    if value < minimum:
        errors.append(RowError(row, column, f"must be >= {minimum}, got {value}"))
        return None
    return value


def _parse_float(text, column, row, errors):
    try:
        value = float(text)
    except ValueError:
        errors.append(RowError(row, column, f"expected a number, got {text!r}"))
        return None
    if not math.isfinite(value):
        errors.append(RowError(row, column, f"must be finite, got {text!r}"))
        return None
    return value


def _parse_row(fields: dict, row: int, errors: list) -> Optional[MeasurementRecord]:
    n_before = len(errors)
    dataset = fields["dataset"].strip()
    if not dataset:
        errors.append(RowError(row, "dataset", "must not be empty"))
    task = fields["task"].strip()
    if task not in TASKS:
        errors.append(RowError(row, "task", f"must be one of {TASKS}, got {task!r}"))
    width = _parse_int(fields["width"].strip(), "width", row, errors, minimum=1)
    height = _parse_int(fields["height"].strip(), "height", row, errors, minimum=1)
    kind = fields["knob_kind"].strip()
    if kind not in KNOB_KINDS:
        errors.append(RowError(row, "knob_kind", f"must be one of {KNOB_KINDS}, got {kind!r}"))
    knob = _parse_float(fields["knob_value"].strip(), "knob_value", row, errors)
    unit = fields["unit"].strip().lower() or None
    if kind == "bitrate":
        if unit is None:
            errors.append(RowError(row, "unit", "required for bitrate rows"))
        elif unit not in BITRATE_UNITS:
            errors.append(RowError(row, "unit", f"must be one of {BITRATE_UNITS}, got {unit!r}"))
        if knob is not None and not knob > 0:
            errors.append(RowError(row, "knob_value", f"bitrate must be > 0, got {knob}"))
    elif kind == "qp":
        if unit is not None:
            errors.append(RowError(row, "unit", "must be empty for qp rows"))
        if knob is not None and not QP_MIN <= knob <= QP_MAX:
            errors.append(RowError(row, "knob_value", f"Qp must lie in [{QP_MIN}, {QP_MAX}], got {knob}"))

    raw_counts = [fields[c].strip() for c in ("tp", "fn", "fp")]
    counts = None
    if any(raw_counts[:2]):
        if not all(raw_counts[:2]):
            errors.append(RowError(row, "tp" if not raw_counts[0] else "fn",
                                   "tp and fn must be given together"))
        else:
            tp = _parse_int(raw_counts[0], "tp", row, errors)
            fn = _parse_int(raw_counts[1], "fn", row, errors)
            fp = _parse_int(raw_counts[2], "fp", row, errors) if raw_counts[2] else 0
            if None not in (tp, fn, fp):
                counts = ConfusionCounts(tp, fn, fp)
    elif raw_counts[2]:
        errors.append(RowError(row, "fp", "fp given without tp and fn"))

    observed = None
    raw_obs = fields["observed_error"].strip()
    if raw_obs:
        observed = _parse_float(raw_obs, "observed_error", row, errors)
        if observed is not None and not 0.0 <= observed <= 1.0:
            errors.append(RowError(row, "observed_error", f"must lie in [0, 1], got {observed}"))
    if counts is None and not raw_obs and not any(raw_counts):
        errors.append(RowError(row, None, "either tp,fn[,fp] or observed_error is required"))

    if len(errors) > n_before:
        return None
    if counts is not None and observed is not None and counts.tp + counts.fn > 0:
        derived = recall_error(counts)
        if abs(derived - observed) >= 1e-9:
            errors.append(RowError(row, "observed_error",
                                   f"disagrees with counts: {observed} vs recall error {derived}"))
            return None
    return MeasurementRecord(dataset, task, Resolution(width, height), kind, knob, unit,
                             counts, observed, row)


def parse_measurements(source: Union[str, os.PathLike, bytes, io.IOBase]) -> list[MeasurementSeries]:
    """Parse and validate a measurement file into series.

    ``source`` is a path, raw bytes, or a binary/text stream. Series are keyed
    by ``(dataset, task, knob_kind)`` and returned sorted by key; records in a
    series are sorted by resolution, then knob value.

    Raises :class:`MeasurementError` listing every problem found.
    """
    if isinstance(source, (bytes, bytearray)):
        data = bytes(source)
    elif isinstance(source, (str, os.PathLike)):
        data = Path(source).read_bytes()
    else:
        data = source.read()
    if isinstance(data, bytes):
        try:
            text = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MeasurementError([RowError(0, None, f"file is not valid UTF-8: {exc}")]) from None
    else:
        text = data

    errors: list[RowError] = []
    try:
        rows = list(csv.reader(io.StringIO(text, newline="")))
    except csv.Error as exc:
        raise MeasurementError([RowError(0, None, f"unreadable delimited text: {exc}")]) from None
    if not rows or not any(cell.strip() for cell in rows[0]):
        raise MeasurementError([RowError(1, None, "missing header row")])
    header = [h.strip() for h in rows[0]]
    if header != list(COLUMNS):
        raise MeasurementError([RowError(1, None, f"header must be {','.join(COLUMNS)}, got {','.join(header)}")])

    records = []
    for row_no, cells in enumerate(rows[1:], start=2):
        if not cells or all(not c.strip() for c in cells):
            continue
        if len(cells) != len(COLUMNS):
            errors.append(RowError(row_no, None, f"expected {len(COLUMNS)} fields, got {len(cells)}"))
            continue
        rec = _parse_row(dict(zip(COLUMNS, cells)), row_no, errors)
        if rec is not None:
            records.append(rec)

    groups: dict = {}
    for rec in records:
        groups.setdefault((rec.dataset_id, rec.task, rec.knob_kind), []).append(rec)

    series = []
    for key in sorted(groups):
        recs = sorted(groups[key], key=_sort_key)
        units = sorted({str(r.unit) for r in recs})
        if len(units) > 1:
            errors.append(RowError(recs[0].row, "unit",
                                   f"series {key} mixes units {units}; one unit per series"))
        seen = {}
        for r in sorted(groups[key], key=lambda r: r.row):
            point = (r.resolution, r.knob_value)
            if point in seen:
                errors.append(RowError(r.row, "knob_value",
                                       f"duplicate point {r.resolution} @ {r.knob_value:g} (first at row {seen[point]})"))
            else:
                seen[point] = r.row
        series.append(MeasurementSeries(key[0], key[1], key[2], recs[0].unit, tuple(recs)))

    if errors:
        raise MeasurementError(sorted(errors, key=lambda e: (e.row, e.column or "")))
    return series


def to_fit_points(series: MeasurementSeries) -> list[FitPoint]:
    """Reduce a series to ``FitPoint`` tuples (resolution, knob, clamped error, unit)."""
    if len(series.resolutions) < 2:
        raise InsufficientDataError(f"series {series.key} has {len(series.resolutions)} resolution(s); need 2")
    if len(series.knob_grid) < 6:
        raise InsufficientDataError(f"series {series.key} has {len(series.knob_grid)} distinct knob values; need 6")
    points = []
    for rec in sorted(series.records, key=_sort_key):
        try:
            err = rec.error
        except UndefinedMetricError as exc:
            raise UndefinedMetricError(f"record at row {rec.row}: {exc}") from None
        points.append(FitPoint(rec.resolution, rec.knob_value, min(max(err, 0.0), 1.0), rec.unit))
    return points


def write_measurements(records, path_or_stream) -> None:
    """Write records in the measurement file schema."""
    own = isinstance(path_or_stream, (str, os.PathLike))
    fh = open(path_or_stream, "w", encoding="utf-8", newline="") if own else path_or_stream
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS)
        for r in records:
            c = r.counts
            w.writerow([
                r.dataset_id, r.task, r.resolution.width, r.resolution.height, r.knob_kind,
                repr(float(r.knob_value)), r.unit or "",
                "" if c is None else c.tp, "" if c is None else c.fn, "" if c is None else c.fp,
                "" if r.observed_error is None else repr(float(r.observed_error)),
            ])
    finally:
        if own:
            fh.close()


# -- constants files ------------------------------------------------------------

def dumps_constants(docs) -> str:
    """Canonical JSON text for a list of constants documents."""
    return json.dumps(list(docs), indent=2, ensure_ascii=False) + "\n"


def load_constant_docs(path) -> list[dict]:
    """Load and validate constants documents, keeping their metadata."""
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConstantsError(f"{path}: invalid JSON: {exc}") from None
    docs = payload if isinstance(payload, list) else [payload]
    for i, doc in enumerate(docs):
        try:
            constants_from_doc(doc)
        except ConstantsError as exc:
            raise ConstantsError(f"{path}: entry {i}: {exc}") from None
    return docs


def load_constants(path) -> list[ModelConstants]:
    """Load constants from a JSON file holding one document or a list of them."""
    return [constants_from_doc(doc) for doc in load_constant_docs(path)]


def save_constants(constants, path, source: str = "") -> None:
    """Write constants (objects or ready-made documents) as canonical JSON."""
    docs = []
    for item in constants:
        docs.append(item if isinstance(item, dict) else constants_to_doc(item, source=source))
    Path(path).write_text(dumps_constants(docs), encoding="utf-8")


def select_constants(docs, model=None, dataset=None, task=None) -> dict:
    """Pick exactly one document matching the given selectors."""
    hits = [d for d in docs
            if (model is None or d.get("model") == model)
            and (dataset is None or d.get("dataset") == dataset)
            and (task is None or d.get("task") == task)]
    if len(hits) != 1:
        raise ConstantsError(
            f"{len(hits)} constant sets match model={model} dataset={dataset} task={task}; need exactly 1"
        )
    return hits[0]
