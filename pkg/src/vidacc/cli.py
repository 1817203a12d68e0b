"""Command-line entry point: ``vidacc <subcommand> ...``.

Results go to stdout (or ``--out``); diagnostics go to stderr. Exit status is
0 on success, 2 on validation or usage errors, 1 on internal errors.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path

from . import ingest
from .fit import FitConfig, fit_brmoda, fit_qrmoda
from .metrics import ConfusionCounts, UndefinedMetricError, aggregate, f1, precision, r_squared, recall, recall_error
from .model import (
    BITRATE_UNITS,
    AdaptationSetting,
    QrmodaConstants,
    Resolution,
    brmoda_eval,
    brmoda_required_bitrate,
    clamp_error,
    constants_from_doc,
    convert_bitrate,
    qrmoda_eval,
    qrmoda_max_qp_for_error,
    qrmoda_midpoint,
)

KNOB_FOR_MODEL = {"qrmoda": "qp", "brmoda": "bitrate"}


class UsageError(ValueError):
    pass


def _num(v):
    """Round to 12 significant digits for stable text output."""
    if v is None or isinstance(v, bool) or isinstance(v, int):
        return v
    if not math.isfinite(v):
        return None
    return float(f"{v:.12g}")


def _round_doc(obj):
    if isinstance(obj, float):
        return _num(obj)
    if isinstance(obj, dict):
        return {k: _round_doc(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_doc(v) for v in obj]
    return obj


def _dump(doc) -> str:
    return json.dumps(_round_doc(doc), indent=2) + "\n"


def _emit(text: str, out=None):
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _seed(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {text!r}") from None
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _resolution(text: str) -> Resolution:
    try:
        return Resolution.parse(text)
    except (ValueError, TypeError) as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _load_one(path, model=None, dataset=None, task=None):
    docs = ingest.load_constant_docs(path)
    if len(docs) == 1 and dataset is None and task is None:
        doc = docs[0]
        if model is not None and doc.get("model") != model:
            raise UsageError(f"{path} holds {doc.get('model')} constants, not {model}")
    else:
        doc = ingest.select_constants(docs, model=model, dataset=dataset, task=task)
    return constants_from_doc(doc)


# -- subcommands ------------------------------------------------------------------

def cmd_predict(args):
    k = _load_one(args.inp, args.model, args.dataset, args.task)
    if isinstance(k, QrmodaConstants):
        if args.qp is None:
            raise UsageError("QRMODA prediction needs --qp")
        AdaptationSetting(args.resolution, qp=args.qp)
        raw = qrmoda_eval(k, args.resolution, args.qp)
        doc = {"model": "qrmoda", "raw": raw, "clamped": clamp_error(raw),
               "midpoint": qrmoda_midpoint(k, args.resolution)}
    else:
        if args.bitrate is None:
            raise UsageError("BRMODA prediction needs --bitrate")
        AdaptationSetting(args.resolution, bitrate=args.bitrate)
        r = convert_bitrate(args.bitrate, args.unit, k.bitrate_unit)
        raw = brmoda_eval(k, args.resolution, r)
        doc = {"model": "brmoda", "raw": raw, "clamped": clamp_error(raw), "bitrate": r,
               "bitrate_unit": k.bitrate_unit or args.unit}
    _emit(_dump(doc), args.out)


def cmd_invert(args):
    k = _load_one(args.inp, args.model, args.dataset, args.task)
    if isinstance(k, QrmodaConstants):
        qp = qrmoda_max_qp_for_error(k, args.resolution, args.target)
        doc = {"model": "qrmoda", "target": args.target, "qp": qp}
    else:
        r = brmoda_required_bitrate(k, args.resolution, args.target, r_max=args.r_max)
        unit = k.bitrate_unit or args.unit
        if args.unit and k.bitrate_unit:
            r = None if r is None else convert_bitrate(r, k.bitrate_unit, args.unit)
            unit = args.unit
        doc = {"model": "brmoda", "target": args.target, "bitrate": r, "bitrate_unit": unit}
    _emit(_dump(doc), args.out)


def _fit_series(series, model, seed, n_starts):
    points = ingest.to_fit_points(series)
    cfg = FitConfig(rng_seed=seed, n_starts=n_starts)
    return points, (fit_qrmoda if model == "qrmoda" else fit_brmoda)(points, cfg)


def _matching_series(path, model, dataset=None, task=None):
    series = ingest.parse_measurements(path)
    knob = KNOB_FOR_MODEL[model]
    chosen = [s for s in series if s.knob_kind == knob
              and (dataset is None or s.dataset_id == dataset)
              and (task is None or s.task == task)]
    if not chosen:
        kinds = sorted({s.knob_kind for s in series})
        raise UsageError(f"no {knob} series for model {model} in {path} (file has knob kinds {kinds})")
    return chosen


def cmd_fit(args):
    docs, summary = [], []
    for s in _matching_series(args.inp, args.model, args.dataset, args.task):
        _, result = _fit_series(s, args.model, args.seed, args.n_starts)
        docs.append(result.to_doc(source=f"fit of {args.inp.name}", dataset=s.dataset_id, task=s.task))
        summary.append((s.dataset_id, s.task, args.model, result.n_points, result.r2))
    text = _dump(docs)
    if args.out:
        _emit(text, args.out)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["dataset", "task", "model", "n_points", "r2"])
        for row in summary:
            w.writerow([*row[:4], f"{row[4]:.12g}"])
        sys.stdout.write(buf.getvalue())
    else:
        sys.stdout.write(text)


def cmd_plot_data(args):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["dataset", "task", "width", "height", "knob", "observed", "predicted"])
    for s in _matching_series(args.inp, args.model, args.dataset, args.task):
        if args.constants:
            docs = ingest.load_constant_docs(args.constants)
            hits = [d for d in docs if d.get("model") == args.model
                    and d.get("dataset", s.dataset_id) == s.dataset_id and d.get("task", s.task) == s.task]
            if len(hits) != 1:
                raise UsageError(f"need exactly one {args.model} constant set for {s.dataset_id}/{s.task}, found {len(hits)}")
            k = constants_from_doc(hits[0])
            points = ingest.to_fit_points(s)
        else:
            if args.seed is None:
                raise UsageError("plot-data needs --constants or --seed (to fit on the fly)")
            points, result = _fit_series(s, args.model, args.seed, args.n_starts)
            k = result.constants
        for p in points:
            if isinstance(k, QrmodaConstants):
                pred = qrmoda_eval(k, p.resolution, p.knob)
            else:
                pred = brmoda_eval(k, p.resolution, convert_bitrate(p.knob, p.unit, k.bitrate_unit))
            w.writerow([s.dataset_id, s.task, p.resolution.width, p.resolution.height,
                        f"{p.knob:.12g}", f"{p.error:.12g}", f"{pred:.12g}"])
    _emit(buf.getvalue(), args.out)


def _plan_config(path, unit_override=None):
    from .planner import CameraProfile
    from .sim import EncoderSurrogate, _res_list, _res_map, camera_constants

    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(doc, dict) or not isinstance(doc.get("cameras"), list) or "budget" not in doc:
        raise UsageError("plan config needs 'budget' and a 'cameras' list")
    unit = unit_override or doc.get("unit")
    enc = doc.get("surrogate", {}) or {}
    encoder = EncoderSurrogate(
        efficiency=_res_map(enc.get("efficiency", {}), "surrogate.efficiency"),
        default_efficiency=float(enc.get("default_efficiency", 1.0)),
        sigma=0.0,
        floor=_res_map(enc.get("floor", {}), "surrogate.floor"),
        ceiling=_res_map(enc.get("ceiling", {}), "surrogate.ceiling"),
    )
    cameras = []
    for i, c in enumerate(doc["cameras"]):
        cid = str(c.get("camera_id", f"cam{i}"))
        try:
            k = camera_constants(c, path.parent, unit)
        except (ValueError, OSError) as exc:
            raise UsageError(f"camera {cid}: {exc}") from None
        cameras.append(CameraProfile(
            camera_id=cid, brmoda=k,
            resolutions=_res_list(c.get("resolutions", doc.get("resolutions", [])), f"camera {cid}"),
            targets=c.get("targets", doc.get("targets", [])),
            weight=float(c.get("weight", 1.0)), unit=unit,
        ))
    quantum = doc.get("quantum")
    return cameras, float(doc["budget"]), None if quantum is None else float(quantum), encoder


def cmd_plan(args):
    from .planner import brute_force_oracle, plan_dp, plan_greedy

    cameras, budget, quantum, encoder = _plan_config(args.inp, args.unit)
    if args.budget is not None:
        budget = args.budget
    if args.method == "dp":
        plan = plan_dp(cameras, budget, quantum, surrogate=encoder.expected)
    elif args.method == "greedy":
        plan = plan_greedy(cameras, budget, surrogate=encoder.expected)
    else:
        plan = brute_force_oracle(cameras, budget, surrogate=encoder.expected)
    if not plan.feasible:
        print(f"warning: no feasible plan within budget {budget}", file=sys.stderr)
    _emit(_dump(plan.to_doc()), args.out)


def cmd_simulate(args):
    from .sim import compare_baselines, load_config, run_calibration_loop

    config = load_config(args.inp, seed=args.seed)
    report = run_calibration_loop(config)
    text = _dump(report.to_doc())
    if args.table:
        Path(args.table).write_text(report.to_table(), encoding="utf-8")
    if args.out:
        _emit(text, args.out)
        sys.stdout.write(compare_baselines(report))
    else:
        sys.stdout.write(text)


def _maybe(fn, c):
    try:
        return fn(c)
    except UndefinedMetricError:
        return None


def cmd_metrics(args):
    if args.inp:
        text = Path(args.inp).read_text(encoding="utf-8")
        rows = list(csv.DictReader(io.StringIO(text)))
        if not rows:
            raise UsageError(f"{args.inp} has no data rows")
        cols = set(rows[0])
        if {"observed", "predicted"} <= cols:
            try:
                obs = [float(r["observed"]) for r in rows]
                pred = [float(r["predicted"]) for r in rows]
            except ValueError as exc:
                raise UsageError(f"{args.inp}: {exc}") from None
            _emit(_dump({"n": len(rows), "r2": r_squared((obs, pred))}), args.out)
            return
        if not {"tp", "fn"} <= cols:
            raise UsageError("metrics input needs tp,fn[,fp] or observed,predicted columns")
        try:
            frames = [ConfusionCounts(int(r["tp"]), int(r["fn"]), int(r.get("fp") or 0)) for r in rows]
        except (ValueError, TypeError) as exc:
            raise UsageError(f"{args.inp}: {exc}") from None
        c = aggregate(frames)
    else:
        if args.tp is None or args.fn is None:
            raise UsageError("metrics needs --tp and --fn (and optionally --fp), or --in")
        c = ConfusionCounts(args.tp, args.fn, args.fp)
    prec = _maybe(precision, c)
    doc = {
        "tp": c.tp, "fn": c.fn, "fp": c.fp,
        "recall": recall(c),
        "recall_error": recall_error(c),
        "precision": prec,
        "f1": None if prec is None else f1(c),
    }
    _emit(_dump(doc), args.out)


# -- parser -------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vidacc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, model_required=False, inp_required=True):
        p.add_argument("--in", dest="inp", type=Path, required=inp_required, help="input file")
        p.add_argument("--out", type=Path, help="write the result here instead of stdout")
        p.add_argument("--model", choices=("qrmoda", "brmoda"), required=model_required)
        p.add_argument("--unit", choices=BITRATE_UNITS)

    def selectors(p):
        p.add_argument("--dataset")
        p.add_argument("--task", choices=ingest.TASKS)

    p = sub.add_parser("predict", help="evaluate a model at one adaptation point")
    common(p)
    selectors(p)
    p.add_argument("--resolution", type=_resolution, required=True, help="WxH, e.g. 640x480")
    p.add_argument("--qp", type=float)
    p.add_argument("--bitrate", type=float)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("invert", help="largest Qp / smallest bitrate meeting an error target")
    common(p)
    selectors(p)
    p.add_argument("--resolution", type=_resolution, required=True)
    p.add_argument("--target", type=float, required=True)
    p.add_argument("--r-max", type=float, default=1e9)
    p.set_defaults(func=cmd_invert)

    p = sub.add_parser("fit", help="calibrate constants from a measurement file")
    common(p, model_required=True)
    selectors(p)
    p.add_argument("--seed", type=_seed, required=True)
    p.add_argument("--n-starts", type=int, default=16)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("plot-data", help="observed vs predicted tables per resolution")
    common(p, model_required=True)
    selectors(p)
    p.add_argument("--constants", type=Path)
    p.add_argument("--seed", type=_seed)
    p.add_argument("--n-starts", type=int, default=16)
    p.set_defaults(func=cmd_plot_data)

    p = sub.add_parser("plan", help="choose per-camera settings under a bandwidth budget")
    common(p)
    p.add_argument("--method", choices=("dp", "greedy", "oracle"), default="dp")
    p.add_argument("--budget", type=float)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("simulate", help="run the closed calibration/planning loop")
    common(p)
    p.add_argument("--seed", type=_seed, required=True)
    p.add_argument("--table", type=Path, help="also write a flat per-strategy table here")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("metrics", help="recall error, precision and F1 from counts, or R^2")
    common(p, inp_required=False)
    p.add_argument("--tp", type=int)
    p.add_argument("--fn", type=int)
    p.add_argument("--fp", type=int, default=0)
    p.set_defaults(func=cmd_metrics)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        args.func(args)
    except ingest.MeasurementError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, TypeError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - internal failure path
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
