"""Per-camera encoding selection under a shared bandwidth budget.

Each camera offers a discrete ladder of (resolution, target bitrate) options.
An encoder surrogate maps every target to the bitrate the encoder actually
produces, and the camera's fitted BRMODA constants turn that actual bitrate
into a predicted recall error. The planner picks one option per camera to
minimise the weighted sum of predicted errors with total actual bitrate
within the budget (a multiple-choice knapsack).
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .model import (
    QP_MAX,
    QP_MIN,
    BrmodaConstants,
    QrmodaConstants,
    Resolution,
    brmoda_eval,
    clamp_error,
    qrmoda_eval,
    qrmoda_max_qp_for_error,
)

Surrogate = Callable[[Resolution, float], float]

# slack absorbed before rounding bitrate/quantum up, so exact multiples stay exact
_ROUNDING_EPS = 1e-9
# relative slack on exact budget checks, so float summation noise cannot reject a plan
_BUDGET_RTOL = 1e-12


class InstanceTooLargeError(ValueError):
    pass


def identity_surrogate(resolution: Resolution, target: float) -> float:
    return float(target)


@dataclass(frozen=True)
class CameraProfile:
    camera_id: str
    brmoda: Optional[BrmodaConstants] = None
    resolutions: tuple = ()
    targets: tuple = ()
    weight: float = 1.0
    qrmoda: Optional[QrmodaConstants] = None
    qps: Optional[tuple] = None
    unit: Optional[str] = None
    surrogate: Optional[Surrogate] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "resolutions", tuple(self.resolutions))
        object.__setattr__(self, "targets", tuple(float(t) for t in self.targets))
        if self.qps is not None:
            object.__setattr__(self, "qps", tuple(int(q) for q in self.qps))
        if not self.resolutions:
            raise ValueError(f"camera {self.camera_id}: no allowed resolutions")
        if self.brmoda is None and self.qrmoda is None:
            raise ValueError(f"camera {self.camera_id}: needs BRMODA or QRMODA constants")
        if self.brmoda is not None and not self.targets:
            raise ValueError(f"camera {self.camera_id}: no allowed target bitrates")
        if any(not (math.isfinite(t) and t > 0) for t in self.targets):
            raise ValueError(f"camera {self.camera_id}: target bitrates must be positive")
        if self.qps is not None and (not self.qps or any(not QP_MIN <= q <= QP_MAX for q in self.qps)):
            raise ValueError(f"camera {self.camera_id}: Qp options must be non-empty and within [0, 51]")
        if not (math.isfinite(self.weight) and self.weight >= 0):
            raise ValueError(f"camera {self.camera_id}: weight must be >= 0")
        if (self.brmoda is not None and self.brmoda.bitrate_unit is not None
                and self.unit is not None and self.brmoda.bitrate_unit != self.unit):
            raise ValueError(
                f"camera {self.camera_id}: constants are in {self.brmoda.bitrate_unit}, planner uses {self.unit}"
            )


@dataclass(frozen=True)
class SettingOption:
    resolution: Resolution
    target_bitrate: float
    predicted_actual_bitrate: float
    predicted_error: float
    index: int = 0


@dataclass(frozen=True)
class OptionSet:
    options: tuple
    dominated: tuple


@dataclass(frozen=True)
class AllocationPlan:
    assignments: tuple  # ((camera_id, SettingOption), ...)
    total_bitrate: float
    objective: float
    budget: float
    feasible: bool
    method: str = ""
    diagnostics: dict = field(default_factory=dict)

    def choice(self, camera_id) -> SettingOption:
        for cid, opt in self.assignments:
            if cid == camera_id:
                return opt
        raise KeyError(camera_id)

    def to_doc(self) -> dict:
        doc = {
            "cameras": [
                {
                    "camera_id": cid,
                    "width": opt.resolution.width,
                    "height": opt.resolution.height,
                    "target_bitrate": opt.target_bitrate,
                    "predicted_actual_bitrate": opt.predicted_actual_bitrate,
                    "predicted_error": opt.predicted_error,
                }
                for cid, opt in self.assignments
            ],
            "objective": self.objective,
            "total_bitrate": self.total_bitrate,
            "budget": self.budget,
            "feasible": self.feasible,
        }
        if self.diagnostics:
            doc["diagnostics"] = self.diagnostics
        return doc


def enumerate_options(profile: CameraProfile, surrogate: Surrogate = identity_surrogate) -> OptionSet:
    """Score every (resolution, target) pair and prune dominated ones.

    The profile's own surrogate, when set, takes precedence over
    ``surrogate``. An option is dominated when another costs no more bitrate
    and predicts no more error; among exact ties the lowest index survives.
    """
    surrogate = profile.surrogate or surrogate
    if profile.brmoda is None:
        raise ValueError(f"camera {profile.camera_id}: bitrate planning needs BRMODA constants")
    scored = []
    for index, (res, target) in enumerate(itertools.product(profile.resolutions, profile.targets)):
        try:
            actual = float(surrogate(res, target))
        except Exception as exc:
            raise ValueError(f"camera {profile.camera_id}: surrogate failed at {res} / {target}: {exc}") from exc
        if not (math.isfinite(actual) and actual > 0):
            raise ValueError(f"camera {profile.camera_id}: surrogate gave invalid bitrate {actual} at {res} / {target}")
        err = clamp_error(brmoda_eval(profile.brmoda, res, actual))
        scored.append(SettingOption(res, float(target), actual, err, index))

    kept, dominated = [], []
    for a in scored:
        beaten = False
        for b in scored:
            if b is a:
                continue
            no_worse = b.predicted_actual_bitrate <= a.predicted_actual_bitrate and b.predicted_error <= a.predicted_error
            strictly = b.predicted_actual_bitrate < a.predicted_actual_bitrate or b.predicted_error < a.predicted_error
            if no_worse and (strictly or b.index < a.index):
                beaten = True
                break
        (dominated if beaten else kept).append(a)
    return OptionSet(tuple(kept), tuple(dominated))


def _weighted(profile: CameraProfile, opt: SettingOption) -> float:
    return profile.weight * opt.predicted_error


def _cheapest(options: Sequence[SettingOption]) -> SettingOption:
    return min(options, key=lambda o: (o.predicted_actual_bitrate, o.predicted_error, o.index))


def make_plan(cameras, chosen, budget, method, feasible=True, diagnostics=None) -> AllocationPlan:
    total = math.fsum(o.predicted_actual_bitrate for o in chosen)
    objective = math.fsum(_weighted(c, o) for c, o in zip(cameras, chosen))
    return AllocationPlan(
        assignments=tuple((c.camera_id, o) for c, o in zip(cameras, chosen)),
        total_bitrate=total,
        objective=objective,
        budget=float(budget),
        feasible=feasible,
        method=method,
        diagnostics=diagnostics or {},
    )


def _infeasible(cameras, option_lists, budget, method) -> AllocationPlan:
    cheapest = [_cheapest(opts) for opts in option_lists]
    minima = {c.camera_id: o.predicted_actual_bitrate for c, o in zip(cameras, cheapest)}
    diagnostics = {
        "reason": "cheapest options exceed the budget",
        "min_bitrate_per_camera": minima,
        "min_total_bitrate": math.fsum(minima.values()),
    }
    return make_plan(cameras, cheapest, budget, method, feasible=False, diagnostics=diagnostics)


def _within(total: float, budget: float) -> bool:
    return total <= budget * (1.0 + _BUDGET_RTOL)


def _check_cameras(cameras, budget):
    if not cameras:
        raise ValueError("at least one camera is required")
    ids = [c.camera_id for c in cameras]
    if len(set(ids)) != len(ids):
        raise ValueError("camera ids must be unique")
    if not (math.isfinite(budget) and budget > 0):
        raise ValueError(f"budget must be positive, got {budget}")


def plan_dp(cameras: Sequence[CameraProfile], budget: float, quantum: Optional[float] = None,
            surrogate: Surrogate = identity_surrogate) -> AllocationPlan:
    """Exact optimum of the bitrate-quantized multiple-choice knapsack.

    Bitrates are rounded *up* to multiples of ``quantum`` (default
    ``budget / 10**4``) so a plan found feasible here is feasible at the true
    bitrates. The price is at most one quantum of slack per camera.
    """
    _check_cameras(cameras, budget)
    quantum = budget / 1e4 if quantum is None else float(quantum)
    if not (math.isfinite(quantum) and quantum > 0):
        raise ValueError(f"quantum must be positive, got {quantum}")
    option_lists = [enumerate_options(c, surrogate).options for c in cameras]
    n_states = int(math.floor(budget / quantum + _ROUNDING_EPS))

    costs = [np.array([math.ceil(o.predicted_actual_bitrate / quantum - _ROUNDING_EPS) for o in opts], dtype=np.int64)
             for opts in option_lists]
    if sum(int(c.min()) for c in costs) > n_states:
        return _infeasible(cameras, option_lists, budget, "dp")

    # best[b]: minimum objective of the cameras so far using at most b quanta
    best = np.zeros(n_states + 1)
    choices = []
    for cam, opts, cost in zip(cameras, option_lists, costs):
        new = np.full(n_states + 1, np.inf)
        pick = np.full(n_states + 1, -1, dtype=np.int64)
        for j, (opt, q) in enumerate(zip(opts, cost)):
            if q > n_states:
                continue
            cand = np.full(n_states + 1, np.inf)
            cand[q:] = best[: n_states + 1 - q] + _weighted(cam, opt)
            better = cand < new
            new[better] = cand[better]
            pick[better] = j
        best = new
        choices.append(pick)

    if not np.isfinite(best[n_states]):
        return _infeasible(cameras, option_lists, budget, "dp")
    chosen = []
    b = n_states
    for opts, cost, pick in zip(reversed(option_lists), reversed(costs), reversed(choices)):
        j = int(pick[b])
        chosen.append(opts[j])
        b -= int(cost[j])
    chosen.reverse()
    return make_plan(cameras, chosen, budget, "dp")


def plan_greedy(cameras: Sequence[CameraProfile], budget: float,
                surrogate: Surrogate = identity_surrogate, restrict=None) -> AllocationPlan:
    """Marginal-utility baseline.

    Every camera starts on its cheapest option; the upgrade with the largest
    weighted error reduction per unit of extra bitrate that still fits is
    applied until none fits. ``restrict`` optionally filters each camera's
    options (``restrict(profile, option) -> bool``).
    """
    _check_cameras(cameras, budget)
    option_lists = []
    for cam in cameras:
        res = enumerate_options(cam, surrogate)
        opts = res.options
        if restrict is not None:
            opts = tuple(o for o in res.options + res.dominated if restrict(cam, o)) or opts
        option_lists.append(sorted(opts, key=lambda o: (o.predicted_actual_bitrate, o.predicted_error, o.index)))
    current = [0] * len(cameras)
    total = math.fsum(opts[0].predicted_actual_bitrate for opts in option_lists)
    if not _within(total, budget):
        return _infeasible(cameras, option_lists, budget, "greedy")
    while True:
        best = None
        for ci, (cam, opts) in enumerate(zip(cameras, option_lists)):
            here = opts[current[ci]]
            for j in range(current[ci] + 1, len(opts)):
                nxt = opts[j]
                extra = nxt.predicted_actual_bitrate - here.predicted_actual_bitrate
                gain = _weighted(cam, here) - _weighted(cam, nxt)
                if gain <= 0 or extra <= 0 or not _within(total + extra, budget):
                    continue
                ratio = gain / extra
                if best is None or ratio > best[0]:
                    best = (ratio, ci, j, extra)
        if best is None:
            break
        _, ci, j, extra = best
        current[ci] = j
        total += extra
    chosen = [opts[k] for opts, k in zip(option_lists, current)]
    return make_plan(cameras, chosen, budget, "greedy")


def brute_force_oracle(cameras: Sequence[CameraProfile], budget: float,
                       surrogate: Surrogate = identity_surrogate, limit: int = 10**6) -> AllocationPlan:
    """Exhaustive search over every combination of (unpruned) options."""
    _check_cameras(cameras, budget)
    option_lists = []
    for cam in cameras:
        res = enumerate_options(cam, surrogate)
        option_lists.append(sorted(res.options + res.dominated, key=lambda o: o.index))
    size = math.prod(len(o) for o in option_lists)
    if size > limit:
        raise InstanceTooLargeError(f"{size} combinations exceed the oracle limit of {limit}")
    best, best_obj = None, math.inf
    for combo in itertools.product(*option_lists):
        if not _within(math.fsum(o.predicted_actual_bitrate for o in combo), budget):
            continue
        obj = math.fsum(_weighted(c, o) for c, o in zip(cameras, combo))
        if obj < best_obj:
            best, best_obj = combo, obj
    if best is None:
        return _infeasible(cameras, option_lists, budget, "oracle")
    return make_plan(cameras, list(best), budget, "oracle")


def qp_ladder_select(profile: CameraProfile, error_budget: float) -> Optional[tuple]:
    """Highest Qp meeting ``error_budget`` under QRMODA, ties to the fewest pixels.

    Returns ``(resolution, qp)`` or ``None`` when no allowed pair qualifies.
    """
    if not 0.0 <= error_budget <= 1.0:
        raise ValueError(f"error budget must lie in [0, 1], got {error_budget}")
    if profile.qrmoda is None:
        raise ValueError(f"camera {profile.camera_id}: Qp selection needs QRMODA constants")
    best = None
    for res in sorted(profile.resolutions, key=lambda r: (r.pixel_count(), r.width)):
        if profile.qps is None:
            qp = qrmoda_max_qp_for_error(profile.qrmoda, res, error_budget)
        else:
            ok = [q for q in profile.qps if clamp_error(qrmoda_eval(profile.qrmoda, res, q)) <= error_budget]
            qp = max(ok) if ok else None
        if qp is not None and (best is None or qp > best[1]):
            best = (res, qp)
    return best
