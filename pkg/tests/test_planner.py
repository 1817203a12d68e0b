import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vidacc.model import BrmodaConstants, Resolution, brmoda_eval, clamp_error, qrmoda_eval
from vidacc.planner import (
    CameraProfile,
    InstanceTooLargeError,
    brute_force_oracle,
    enumerate_options,
    identity_surrogate,
    plan_dp,
    plan_greedy,
    qp_ladder_select,
)

SMALL, MID, LARGE = Resolution(160, 120), Resolution(320, 240), Resolution(640, 480)


def cam(cid, k, res=(SMALL, LARGE), targets=(50, 100, 200), **kw):
    return CameraProfile(cid, k, tuple(res), tuple(targets), **kw)


def random_instance(seed, max_cams=4, integer=True):
    rng = np.random.default_rng(seed)
    cams = []
    for i in range(int(rng.integers(1, max_cams + 1))):
        n_res = int(rng.integers(1, 3))
        res = [SMALL, MID, LARGE][: n_res]
        n_tgt = int(rng.integers(1, 5 // n_res + 1))
        targets = sorted({int(t) for t in rng.integers(1, 60, n_tgt)})
        k = BrmodaConstants(10 ** rng.uniform(-3, -0.5), rng.uniform(0, 0.3), -10 ** rng.uniform(-2, -0.5),
                            rng.uniform(0, 0.4), -10 ** rng.uniform(-3, -1))
        cams.append(CameraProfile(f"c{i}", k, res, targets, weight=float(rng.uniform(0.2, 2.0))))
    budget = int(rng.integers(len(cams), 60 * len(cams)))
    return cams, budget


# -- profiles and options ---------------------------------------------------------

def test_profile_validation(honda_rec_b):
    with pytest.raises(ValueError, match="resolutions"):
        CameraProfile("a", honda_rec_b, (), (10,))
    with pytest.raises(ValueError, match="target"):
        CameraProfile("a", honda_rec_b, (SMALL,), ())
    with pytest.raises(ValueError, match="positive"):
        CameraProfile("a", honda_rec_b, (SMALL,), (0,))
    with pytest.raises(ValueError, match="weight"):
        CameraProfile("a", honda_rec_b, (SMALL,), (10,), weight=-1)


def test_profile_unit_must_match_constants():
    k = BrmodaConstants(0.1, 0.1, -0.1, 0.1, -1e-3, bitrate_unit="bps")
    with pytest.raises(ValueError, match="bps"):
        CameraProfile("a", k, (SMALL,), (10,), unit="kbps")


def test_enumerate_cross_product_with_clamped_errors(honda_rec_b):
    p = cam("a", honda_rec_b, res=(SMALL, LARGE), targets=(5, 20, 80))
    opts = enumerate_options(p)
    everything = opts.options + opts.dominated
    assert len(everything) == 6 and len(opts.options) <= 6
    for o in everything:
        assert o.predicted_actual_bitrate == o.target_bitrate
        assert o.predicted_error == clamp_error(brmoda_eval(honda_rec_b, o.resolution, o.target_bitrate))
        assert 0.0 <= o.predicted_error <= 1.0


def test_dominated_option_is_pruned():
    # a single resolution with a decreasing curve: no option dominates another
    k = BrmodaConstants(0.0, 0.0, -0.1, 0.5, -0.01)
    opts = enumerate_options(cam("a", k, res=(SMALL,), targets=(10, 20, 40)))
    assert len(opts.options) == 3 and not opts.dominated

    # with a positive pixel exponent the larger frame costs the same but errs more
    k = BrmodaConstants(0.05, 0.1, -0.01, 0.1, -0.01)
    pruned = enumerate_options(cam("b", k, res=(SMALL, LARGE), targets=(20,)))
    assert [o.resolution for o in pruned.options] == [SMALL]
    assert [o.resolution for o in pruned.dominated] == [LARGE]


def test_surrogate_on_profile_takes_precedence(honda_rec_b):
    p = cam("a", honda_rec_b, targets=(10,), surrogate=lambda r, t: 2 * t)
    assert all(o.predicted_actual_bitrate == 20 for o in enumerate_options(p, identity_surrogate).options)


def test_bad_surrogate_output(honda_rec_b):
    with pytest.raises(ValueError, match="invalid bitrate"):
        enumerate_options(cam("a", honda_rec_b, surrogate=lambda r, t: -1.0))


# -- dynamic programme ----------------------------------------------------------------

def test_single_camera_unconstrained_takes_min_error(honda_rec_b):
    p = cam("a", honda_rec_b)
    plan = plan_dp([p], budget=1000)
    best = min(enumerate_options(p).options, key=lambda o: o.predicted_error)
    assert plan.feasible
    assert plan.choice("a").predicted_error == best.predicted_error


def test_infeasible_when_budget_below_minimum(honda_rec_b, disfa_rec_b):
    cams = [cam("a", honda_rec_b), cam("b", disfa_rec_b)]
    plan = plan_dp(cams, budget=99)
    assert not plan.feasible
    assert plan.diagnostics["min_total_bitrate"] == 100
    assert plan.diagnostics["min_bitrate_per_camera"] == {"a": 50, "b": 50}
    assert not brute_force_oracle(cams, budget=99).feasible
    assert not plan_greedy(cams, budget=99).feasible


def test_three_camera_instance_matches_oracle():
    for seed in range(30):
        cams, budget = random_instance(seed, max_cams=3)
        dp, oracle = plan_dp(cams, budget, quantum=1), brute_force_oracle(cams, budget)
        assert dp.feasible == oracle.feasible
        if dp.feasible:
            assert abs(dp.objective - oracle.objective) <= 1e-9


def test_plan_shape_and_doc(honda_rec_b, disfa_rec_b):
    plan = plan_dp([cam("a", honda_rec_b), cam("b", disfa_rec_b)], budget=250)
    doc = plan.to_doc()
    assert [c["camera_id"] for c in doc["cameras"]] == ["a", "b"]
    assert doc["total_bitrate"] <= 250 and doc["feasible"] is True
    assert doc["objective"] == pytest.approx(sum(c["predicted_error"] for c in doc["cameras"]))


def test_input_validation(honda_rec_b):
    with pytest.raises(ValueError, match="camera"):
        plan_dp([], 100)
    with pytest.raises(ValueError, match="unique"):
        plan_dp([cam("a", honda_rec_b), cam("a", honda_rec_b)], 100)
    with pytest.raises(ValueError, match="budget"):
        plan_dp([cam("a", honda_rec_b)], 0)
    with pytest.raises(ValueError, match="quantum"):
        plan_dp([cam("a", honda_rec_b)], 100, quantum=0)


def test_default_quantum_keeps_plans_feasible():
    for seed in range(40):
        cams, budget = random_instance(seed)
        budget += 0.37
        plan = plan_dp(cams, budget)
        if plan.feasible:
            assert plan.total_bitrate <= budget


# -- greedy and oracle --------------------------------------------------------------

def test_greedy_matches_dp_on_single_camera(honda_rec_b):
    p = cam("a", honda_rec_b, targets=(20, 40, 60, 80, 100))
    for budget in (20, 55, 95, 500):
        assert plan_greedy([p], budget).objective == plan_dp([p], budget, quantum=1).objective


def test_greedy_is_strictly_worse_on_concave_instance():
    # cheap step on B looks better per unit, but then A's big step no longer fits
    a = CameraProfile("A", BrmodaConstants(0.0, 0.0, -1.0, 0.5, -1.0), (SMALL,), (1, 10))
    b = CameraProfile("B", BrmodaConstants(0.0, 0.0, -1.0, 1.0, -0.1), (SMALL,), (1, 2))
    greedy, dp, oracle = plan_greedy([a, b], 11), plan_dp([a, b], 11, quantum=1), brute_force_oracle([a, b], 11)
    assert dp.objective == pytest.approx(oracle.objective, abs=1e-12)
    assert greedy.objective > dp.objective + 0.05
    assert dp.choice("A").target_bitrate == 10 and dp.choice("B").target_bitrate == 1


def test_greedy_matches_dp_on_convex_frontiers():
    # single-term curves at one resolution give convex error-vs-bitrate frontiers
    cams = [CameraProfile(f"c{i}", BrmodaConstants(0.0, 0.0, -1.0, w, rate), (SMALL,), tuple(range(10, 110, 10)))
            for i, (w, rate) in enumerate([(0.5, -0.02), (0.8, -0.01), (0.3, -0.05)])]
    for budget in (30, 90, 150, 210, 300):
        greedy, dp = plan_greedy(cams, budget), plan_dp(cams, budget, quantum=1)
        # with equal steps of 10 the only slack is the unfilled remainder
        assert greedy.objective <= dp.objective + 1e-9 + 0.05 * (budget % 10)
        assert greedy.objective >= dp.objective - 1e-12


def test_oracle_with_one_option_per_camera(honda_rec_b, disfa_rec_b):
    cams = [cam("a", honda_rec_b, res=(SMALL,), targets=(30,)), cam("b", disfa_rec_b, res=(LARGE,), targets=(40,))]
    plan = brute_force_oracle(cams, 100)
    assert plan.feasible and plan.total_bitrate == 70
    assert plan.choice("a").resolution == SMALL and plan.choice("b").resolution == LARGE


def test_oracle_refuses_huge_instances(honda_rec_b):
    cams = [cam(str(i), honda_rec_b, targets=tuple(range(1, 11))) for i in range(4)]
    with pytest.raises(InstanceTooLargeError):
        brute_force_oracle(cams, 100, limit=1000)


# -- properties ----------------------------------------------------------------------

@given(st.integers(0, 10**6))
def test_dp_greedy_cheapest_ordering_and_feasibility(seed):
    cams, budget = random_instance(seed)
    dp, greedy, oracle = plan_dp(cams, budget, quantum=1), plan_greedy(cams, budget), brute_force_oracle(cams, budget)
    assert dp.feasible == oracle.feasible
    if not dp.feasible:
        return
    cheapest = sum(c.weight * min(enumerate_options(c).options,
                                  key=lambda o: (o.predicted_actual_bitrate, o.predicted_error)).predicted_error
                   for c in cams)
    assert abs(dp.objective - oracle.objective) <= 1e-9
    assert dp.objective <= greedy.objective + 1e-12 <= cheapest + 2e-12
    for plan in (dp, greedy, oracle):
        assert plan.total_bitrate <= budget
        assert [cid for cid, _ in plan.assignments] == [c.camera_id for c in cams]


@given(st.integers(0, 10**6), st.integers(1, 40))
def test_enlarging_budget_never_hurts(seed, extra):
    cams, budget = random_instance(seed)
    small, large = plan_dp(cams, budget, quantum=1), plan_dp(cams, budget + extra, quantum=1)
    if small.feasible:
        assert large.feasible and large.objective <= small.objective + 1e-12


@given(st.integers(0, 10**6), st.sampled_from([0.25, 0.5, 2.0, 8.0]))
def test_weight_scaling_keeps_the_plan(seed, factor):
    cams, budget = random_instance(seed)
    scaled = [CameraProfile(c.camera_id, c.brmoda, c.resolutions, c.targets, c.weight * factor) for c in cams]
    a, b = plan_dp(cams, budget, quantum=1), plan_dp(scaled, budget, quantum=1)
    assert [o for _, o in a.assignments] == [o for _, o in b.assignments]


# -- Qp ladder -------------------------------------------------------------------------

def qcam(k, res, qps=None):
    return CameraProfile("q", None, tuple(res), (), qrmoda=k, qps=qps)


def test_qp_ladder_everything_feasible(honda_rec_q):
    assert qp_ladder_select(qcam(honda_rec_q, (LARGE, SMALL)), 0.61 + 0.3838) == (SMALL, 51)


def test_qp_ladder_unreachable(honda_rec_q):
    assert qp_ladder_select(qcam(honda_rec_q, (SMALL, LARGE)), 0.6) is None


def test_qp_ladder_midpoint_example(honda_rec_q):
    target = 0.61 + 0.3838 / 2
    res = Resolution(600, 450)
    scan = max(q for q in range(52) if clamp_error(qrmoda_eval(honda_rec_q, res, q)) <= target)
    assert qp_ladder_select(qcam(honda_rec_q, (res,)), target) == (res, 46) == (res, scan)


def test_qp_ladder_with_explicit_grid(honda_rec_q):
    assert qp_ladder_select(qcam(honda_rec_q, (Resolution(600, 450),), qps=(20, 30, 40, 50)),
                            0.61 + 0.3838 / 2) == (Resolution(600, 450), 40)


def test_qp_ladder_validation(honda_rec_q, honda_rec_b):
    with pytest.raises(ValueError):
        qp_ladder_select(qcam(honda_rec_q, (SMALL,)), 1.5)
    with pytest.raises(ValueError, match="QRMODA"):
        qp_ladder_select(cam("a", honda_rec_b), 0.5)
    with pytest.raises(ValueError, match="Qp"):
        qcam(honda_rec_q, (SMALL,), qps=(10, 60))
