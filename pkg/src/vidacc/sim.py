"""Closed-loop simulation of a calibrated multi-camera controller.

Each camera has ground-truth BRMODA constants. A round of the loop:

1. probe the calibration grid through a noisy encoder surrogate and observe
   noisy recall errors,
2. fit BRMODA constants per camera from the probes,
3. plan encodings under the budget with the fitted models,
4. score the plan (and baselines) against the noiseless ground truth.

All randomness comes from per-(round, camera) streams derived from the
master seed, so results do not depend on evaluation order.
"""
from __future__ import annotations

import csv
import io
import json
import math
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .fit import FitConfig, FitError, FitPoint, fit_brmoda
from .ingest import load_constant_docs, select_constants
from .model import (
    BITRATE_UNITS,
    AdaptationSetting,
    BrmodaConstants,
    Resolution,
    brmoda_eval,
    clamp_error,
    constants_from_doc,
    constants_to_doc,
    qrmoda_eval,
    reference,
)
from .planner import CameraProfile, make_plan, plan_dp, plan_greedy
from .synthetic import truncated_gaussian

STRATEGIES = ("planned", "uniform", "max_resolution", "ground_truth_optimal")


class SimConfigError(ValueError):
    pass


class SimPhaseError(RuntimeError):
    def __init__(self, phase, camera_id, cause):
        self.phase = phase
        self.camera_id = camera_id
        super().__init__(f"{phase} phase failed for camera {camera_id}: {cause}")


@dataclass(frozen=True)
class EncoderSurrogate:
    """Maps a target bitrate to the actual bitrate an encoder would produce.

    ``actual = clip(target * efficiency[res] * exp(sigma * z), floor[res], ceiling[res])``
    with ``z`` standard normal.
    """

    efficiency: dict = field(default_factory=dict)
    default_efficiency: float = 1.0
    sigma: float = 0.05
    floor: dict = field(default_factory=dict)
    ceiling: dict = field(default_factory=dict)

    def __post_init__(self):
        for res, eff in list(self.efficiency.items()) + [(None, self.default_efficiency)]:
            if not 0 < eff <= 1.5:
                raise SimConfigError(f"encoder efficiency must lie in (0, 1.5], got {eff} for {res}")
        if self.sigma < 0:
            raise SimConfigError("encoder sigma must be >= 0")
        for res, lo in self.floor.items():
            if not lo > 0:
                raise SimConfigError(f"encoder floor must be > 0 for {res}")
            if res in self.ceiling and self.ceiling[res] < lo:
                raise SimConfigError(f"encoder ceiling below floor for {res}")

    def expected(self, res: Resolution, target: float) -> float:
        actual = target * self.efficiency.get(res, self.default_efficiency)
        return self._clip(res, actual)

    def sample(self, res: Resolution, target: float, rng: np.random.Generator) -> float:
        actual = target * self.efficiency.get(res, self.default_efficiency)
        if self.sigma > 0:
            actual *= math.exp(self.sigma * rng.standard_normal())
        return self._clip(res, actual)

    def _clip(self, res, actual):
        if res in self.floor:
            actual = max(actual, self.floor[res])
        if res in self.ceiling:
            actual = min(actual, self.ceiling[res])
        return float(actual)


@dataclass(frozen=True)
class GroundTruth:
    brmoda: dict = field(default_factory=dict)
    qrmoda: dict = field(default_factory=dict)
    sigma: float = 0.01

    def __post_init__(self):
        if self.sigma < 0:
            raise SimConfigError("observation sigma must be >= 0")


def observe(gt: GroundTruth, camera_id, setting: AdaptationSetting, rng: np.random.Generator) -> float:
    """A noisy recall-error observation for one camera at one setting.

    Noise is Gaussian, redrawn (up to 100 times) until the observation lies
    in [0, 1], then clamped. With ``sigma == 0`` the clamped model value is
    returned exactly.
    """
    if setting.knob_kind == "bitrate":
        k = gt.brmoda.get(camera_id)
        if k is None:
            raise ValueError(f"camera {camera_id} has no BRMODA ground truth for a bitrate setting")
        value = brmoda_eval(k, setting.resolution, setting.bitrate)
    else:
        k = gt.qrmoda.get(camera_id)
        if k is None:
            raise ValueError(f"camera {camera_id} has no QRMODA ground truth for a Qp setting")
        value = qrmoda_eval(k, setting.resolution, setting.qp)
    if gt.sigma == 0:
        return clamp_error(value)
    return clamp_error(truncated_gaussian(rng, value, gt.sigma))


@dataclass(frozen=True)
class SimCamera:
    camera_id: str
    truth: BrmodaConstants
    resolutions: tuple
    targets: tuple
    calibration_resolutions: tuple = ()
    calibration_targets: tuple = ()
    weight: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "resolutions", tuple(self.resolutions))
        object.__setattr__(self, "targets", tuple(float(t) for t in self.targets))
        object.__setattr__(self, "calibration_resolutions",
                           tuple(self.calibration_resolutions) or self.resolutions)
        object.__setattr__(self, "calibration_targets",
                           tuple(float(t) for t in self.calibration_targets) or self.targets)


@dataclass(frozen=True)
class SimConfig:
    cameras: tuple
    budget: float
    seed: int
    unit: str = "kbps"
    quantum: Optional[float] = None
    observation_sigma: float = 0.01
    encoder: EncoderSurrogate = field(default_factory=EncoderSurrogate)
    rounds: int = 1
    fit_starts: int = 16
    fit_max_iterations: int = 200

    def __post_init__(self):
        object.__setattr__(self, "cameras", tuple(self.cameras))
        if not self.cameras:
            raise SimConfigError("simulation needs at least one camera")
        ids = [c.camera_id for c in self.cameras]
        if len(set(ids)) != len(ids):
            raise SimConfigError("camera ids must be unique")
        if not (math.isfinite(self.budget) and self.budget > 0):
            raise SimConfigError("budget must be positive")
        if self.unit not in BITRATE_UNITS:
            raise SimConfigError(f"unit must be one of {BITRATE_UNITS}")
        if self.rounds < 1:
            raise SimConfigError("rounds must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise SimConfigError("seed must be an unsigned 64-bit integer")
        if self.observation_sigma < 0:
            raise SimConfigError("observation_sigma must be >= 0")
        for cam in self.cameras:
            unit = cam.truth.bitrate_unit
            if unit is not None and unit != self.unit:
                raise SimConfigError(f"camera {cam.camera_id}: constants in {unit}, simulation in {self.unit}")

    def with_seed(self, seed: int) -> "SimConfig":
        from dataclasses import replace

        return replace(self, seed=seed)

    def to_doc(self) -> dict:
        enc = self.encoder
        return {
            "seed": self.seed,
            "unit": self.unit,
            "budget": self.budget,
            "quantum": self.quantum,
            "rounds": self.rounds,
            "observation_sigma": self.observation_sigma,
            "fit": {"n_starts": self.fit_starts, "max_iterations": self.fit_max_iterations},
            "encoder": {
                "sigma": enc.sigma,
                "default_efficiency": enc.default_efficiency,
                "efficiency": {str(r): v for r, v in sorted(enc.efficiency.items())},
                "floor": {str(r): v for r, v in sorted(enc.floor.items())},
                "ceiling": {str(r): v for r, v in sorted(enc.ceiling.items())},
            },
            "cameras": [
                {
                    "camera_id": c.camera_id,
                    "weight": c.weight,
                    "constants": constants_to_doc(c.truth, source="ground truth"),
                    "resolutions": [str(r) for r in c.resolutions],
                    "targets": list(c.targets),
                    "calibration": {
                        "resolutions": [str(r) for r in c.calibration_resolutions],
                        "targets": list(c.calibration_targets),
                    },
                }
                for c in self.cameras
            ],
        }


def _res_map(raw, what):
    if not isinstance(raw, dict):
        raise SimConfigError(f"{what} must be an object keyed by WxH")
    try:
        return {Resolution.parse(k): float(v) for k, v in raw.items()}
    except (ValueError, TypeError) as exc:
        raise SimConfigError(f"{what}: {exc}") from None


def _res_list(raw, what):
    try:
        return tuple(Resolution.parse(r) for r in raw)
    except (ValueError, TypeError, AttributeError) as exc:
        raise SimConfigError(f"{what}: {exc}") from None


def camera_constants(entry: dict, base_dir, unit: Optional[str]) -> BrmodaConstants:
    """Resolve a camera's BRMODA constants from a config entry.

    Accepted forms: inline ``constants``; ``constants_file`` plus an optional
    ``select`` of model/dataset/task; or ``reference`` naming a bundled
    dataset/task pair. Constants without a bitrate unit adopt ``unit``.
    """
    if "constants" in entry:
        k = constants_from_doc(entry["constants"])
    elif "constants_file" in entry:
        sel = dict(entry.get("select", {}))
        sel.setdefault("model", "brmoda")
        k = constants_from_doc(select_constants(load_constant_docs(Path(base_dir) / entry["constants_file"]), **sel))
    elif "reference" in entry:
        ref = entry["reference"]
        if not isinstance(ref, dict) or set(ref) - {"dataset", "task"}:
            raise ValueError("'reference' must be an object with dataset and task")
        k = reference("brmoda", ref.get("dataset"), ref.get("task"))
    else:
        raise ValueError("needs 'constants', 'constants_file' or 'reference'")
    if not isinstance(k, BrmodaConstants):
        raise ValueError("constants must be BRMODA constants")
    if k.bitrate_unit is None and unit is not None:
        k = BrmodaConstants(k.cp1, k.cp2, k.cp3, k.cp4, k.cp5, bitrate_unit=unit)
    return k


def config_from_doc(doc: dict, base_dir=None, seed: Optional[int] = None) -> SimConfig:
    """Build a :class:`SimConfig` from its JSON form.

    Cameras give ground-truth constants inline (``constants``) or via
    ``constants_file`` plus an optional ``select`` of model/dataset/task.
    Constants without a declared bitrate unit adopt the simulation unit.
    """
    if not isinstance(doc, dict):
        raise SimConfigError("simulation config must be a JSON object")
    base_dir = Path(base_dir or ".")
    unit = doc.get("unit", "kbps")
    cams_raw = doc.get("cameras")
    if not isinstance(cams_raw, list) or not cams_raw:
        raise SimConfigError("config needs a non-empty 'cameras' list")
    default_res = doc.get("resolutions")
    default_targets = doc.get("targets")
    cameras = []
    for i, c in enumerate(cams_raw):
        cid = str(c.get("camera_id", f"cam{i}"))
        try:
            truth = camera_constants(c, base_dir, unit)
        except (ValueError, OSError) as exc:
            raise SimConfigError(f"camera {cid}: {exc}") from None
        res = c.get("resolutions", default_res)
        targets = c.get("targets", default_targets)
        if not res or not targets:
            raise SimConfigError(f"camera {cid}: needs resolutions and targets")
        cal = c.get("calibration", doc.get("calibration", {})) or {}
        cameras.append(SimCamera(
            camera_id=cid,
            truth=truth,
            resolutions=_res_list(res, f"camera {cid} resolutions"),
            targets=tuple(float(t) for t in targets),
            calibration_resolutions=_res_list(cal.get("resolutions", []), f"camera {cid} calibration"),
            calibration_targets=tuple(float(t) for t in cal.get("targets", [])),
            weight=float(c.get("weight", 1.0)),
        ))
    enc = doc.get("encoder", {}) or {}
    encoder = EncoderSurrogate(
        efficiency=_res_map(enc.get("efficiency", {}), "encoder.efficiency"),
        default_efficiency=float(enc.get("default_efficiency", 1.0)),
        sigma=float(enc.get("sigma", 0.05)),
        floor=_res_map(enc.get("floor", {}), "encoder.floor"),
        ceiling=_res_map(enc.get("ceiling", {}), "encoder.ceiling"),
    )
    if seed is None:
        seed = doc.get("seed")
    if seed is None:
        raise SimConfigError("a seed is required")
    fit = doc.get("fit", {}) or {}
    if "budget" not in doc:
        raise SimConfigError("config needs a 'budget'")
    return SimConfig(
        cameras=tuple(cameras),
        budget=float(doc["budget"]),
        seed=int(seed),
        unit=unit,
        quantum=None if doc.get("quantum") is None else float(doc["quantum"]),
        observation_sigma=float(doc.get("observation_sigma", 0.01)),
        encoder=encoder,
        rounds=int(doc.get("rounds", 1)),
        fit_starts=int(fit.get("n_starts", 16)),
        fit_max_iterations=int(fit.get("max_iterations", 200)),
    )


def load_config(path, seed: Optional[int] = None) -> SimConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SimConfigError(f"{path}: invalid JSON: {exc}") from None
    return config_from_doc(doc, base_dir=path.parent, seed=seed)


# -- the loop -------------------------------------------------------------------

def _stream(seed: int, *key) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=seed, spawn_key=tuple(key))


class _EstimatedEncoder:
    """Actual-bitrate estimates learned from calibration probes."""

    def __init__(self, probes):
        self.by_point = {}
        ratios_by_res = {}
        for res, target, actual in probes:
            self.by_point.setdefault((res, target), []).append(actual)
            ratios_by_res.setdefault(res, []).append(actual / target)
        self.ratio_by_res = {r: statistics.median(v) for r, v in ratios_by_res.items()}
        self.ratio = statistics.median(x for v in ratios_by_res.values() for x in v)

    def __call__(self, res, target):
        seen = self.by_point.get((res, target))
        if seen:
            return float(math.exp(math.fsum(math.log(a) for a in seen) / len(seen)))
        return float(target * self.ratio_by_res.get(res, self.ratio))


def _evaluate(config: SimConfig, plan) -> dict:
    errors, total = [], 0.0
    objective = 0.0
    for cam in config.cameras:
        opt = plan.choice(cam.camera_id)
        actual = config.encoder.expected(opt.resolution, opt.target_bitrate)
        err = clamp_error(brmoda_eval(cam.truth, opt.resolution, actual))
        errors.append(err)
        objective += cam.weight * err
        total += actual
    return {
        "objective": objective,
        "mean_error": math.fsum(errors) / len(errors),
        "total_bitrate": total,
        "utilization": total / config.budget,
        "planned_feasible": plan.feasible,
        "choices": {cid: f"{o.resolution}@{o.target_bitrate:g}" for cid, o in plan.assignments},
    }


def _max_resolution(profile: CameraProfile, option) -> bool:
    top = max(profile.resolutions, key=lambda r: (r.pixel_count(), r.width))
    return option.resolution == top


def _plan_strategies(config: SimConfig, profiles, truth_profiles) -> dict:
    plans = {"planned": plan_dp(profiles, config.budget, config.quantum)}
    share = config.budget / len(profiles)
    chosen = []
    for p in profiles:
        quantum = None if config.quantum is None else min(config.quantum, share)
        chosen.append(plan_dp([p], share, quantum=quantum).assignments[0][1])
    plans["uniform"] = make_plan(profiles, chosen, config.budget, "uniform")
    plans["max_resolution"] = plan_greedy(profiles, config.budget, restrict=_max_resolution)
    plans["ground_truth_optimal"] = plan_dp(truth_profiles, config.budget, config.quantum)
    return plans


def _run_round(config: SimConfig, rnd: int) -> dict:
    gt = GroundTruth(brmoda={c.camera_id: c.truth for c in config.cameras}, sigma=config.observation_sigma)
    profiles, truth_profiles = [], []
    fit_r2, fitted, probes_total = {}, {}, 0
    for i, cam in enumerate(config.cameras):
        probe_ss, fit_ss = _stream(config.seed, rnd, i).spawn(2)
        rng = np.random.default_rng(probe_ss)
        points, probes = [], []
        for res in cam.calibration_resolutions:
            for target in cam.calibration_targets:
                actual = config.encoder.sample(res, target, rng)
                err = observe(gt, cam.camera_id, AdaptationSetting(res, bitrate=actual), rng)
                # a reading pinned at 0 or 1 only bounds the model, so it stays out of the fit
                if 0.0 < err < 1.0:
                    points.append(FitPoint(res, actual, err, config.unit))
                probes.append((res, target, actual))
        probes_total += len(probes)
        cfg = FitConfig(
            rng_seed=int(fit_ss.generate_state(1, dtype=np.uint64)[0]),
            n_starts=config.fit_starts,
            max_iterations=config.fit_max_iterations,
        )
        try:
            result = fit_brmoda(points, cfg)
        except (FitError, ValueError) as exc:
            raise SimPhaseError("fit", cam.camera_id, exc) from exc
        fitted[cam.camera_id] = result.constants.to_dict()
        fit_r2[cam.camera_id] = result.r2
        profiles.append(CameraProfile(cam.camera_id, result.constants, cam.resolutions, cam.targets,
                                      cam.weight, unit=config.unit, surrogate=_EstimatedEncoder(probes)))
        truth_profiles.append(CameraProfile(cam.camera_id, cam.truth, cam.resolutions, cam.targets,
                                            cam.weight, unit=config.unit, surrogate=config.encoder.expected))
    try:
        plans = _plan_strategies(config, profiles, truth_profiles)
    except ValueError as exc:
        raise SimPhaseError("plan", "*", exc) from exc
    return {
        "round": rnd,
        "probes": probes_total,
        "fit_r2": fit_r2,
        "fitted": fitted,
        "strategies": {name: _evaluate(config, plans[name]) for name in STRATEGIES},
    }


@dataclass(frozen=True)
class SimReport:
    seed: int
    rounds: tuple
    config: dict

    def to_doc(self) -> dict:
        return {"seed": self.seed, "rounds": list(self.rounds), "config": self.config}

    def to_json(self) -> str:
        return json.dumps(self.to_doc(), indent=2) + "\n"

    def to_table(self) -> str:
        """Flat comma-delimited table: one row per (round, strategy)."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["round", "strategy", "objective", "mean_error", "total_bitrate", "utilization"])
        for rnd in self.rounds:
            for name in STRATEGIES:
                s = rnd["strategies"][name]
                w.writerow([rnd["round"], name, f"{s['objective']:.12g}", f"{s['mean_error']:.12g}",
                            f"{s['total_bitrate']:.12g}", f"{s['utilization']:.12g}"])
        return buf.getvalue()

    def objective(self, strategy: str, rnd: int = 0) -> float:
        return self.rounds[rnd]["strategies"][strategy]["objective"]


def run_calibration_loop(config: SimConfig) -> SimReport:
    """Run every round of probe -> fit -> plan -> evaluate."""
    rounds = tuple(_run_round(config, r) for r in range(config.rounds))
    return SimReport(seed=config.seed, rounds=rounds, config=config.to_doc())


def compare_baselines(report: SimReport, strategies=STRATEGIES) -> str:
    """Per-strategy means over rounds, as a comma-delimited table."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["strategy", "mean_error", "objective", "utilization", "probes"])
    probes = math.fsum(r["probes"] for r in report.rounds) / len(report.rounds)
    for name in strategies:
        rows = [r["strategies"][name] for r in report.rounds]
        w.writerow([
            name,
            f"{math.fsum(s['mean_error'] for s in rows) / len(rows):.12g}",
            f"{math.fsum(s['objective'] for s in rows) / len(rows):.12g}",
            f"{math.fsum(s['utilization'] for s in rows) / len(rows):.12g}",
            f"{probes:.12g}",
        ])
    return buf.getvalue()
