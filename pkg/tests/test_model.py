import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vidacc.model import (
    AdaptationSetting,
    BrmodaConstants,
    ConstantsError,
    ConstantsWarning,
    QrmodaConstants,
    Resolution,
    brmoda_eval,
    brmoda_required_bitrate,
    clamp_error,
    constants_from_doc,
    constants_to_doc,
    convert_bitrate,
    qrmoda_eval,
    qrmoda_max_qp_for_error,
    qrmoda_midpoint,
    reference,
    reference_constants,
)

R600 = Resolution(600, 450)

resolutions = st.builds(Resolution, st.integers(1, 7680), st.integers(1, 4320))
qrmoda_constants = st.builds(
    QrmodaConstants,
    st.floats(0.0, 50.0),
    st.floats(-0.5, 1.0),
    st.floats(0.0, 0.5),
    st.floats(0.0, 0.5),
    st.floats(-3.0, -1e-3),
)
brmoda_constants = st.builds(
    BrmodaConstants,
    st.floats(0.0, 1.0),
    st.floats(0.0, 1.0),
    st.floats(-1.0, -1e-4),
    st.floats(0.0, 0.5),
    st.floats(-1e-2, -1e-7),
)


# -- resolution and constant types --------------------------------------------

def test_resolution_pixel_count_is_exact_up_to_8k():
    assert Resolution(7680, 4320).pixel_count() == 33_177_600
    assert Resolution.parse("640x480") == Resolution(640, 480)
    assert str(Resolution(640, 480)) == "640x480"


@pytest.mark.parametrize("w,h", [(0, 10), (10, 0), (-1, 5)])
def test_resolution_rejects_non_positive(w, h):
    with pytest.raises(ValueError):
        Resolution(w, h)


@pytest.mark.parametrize("text", ["640", "640x", "axb", "640x480x2"])
def test_resolution_parse_rejects_garbage(text):
    with pytest.raises(ValueError):
        Resolution.parse(text)


def test_qrmoda_sign_invariants():
    with pytest.raises(ConstantsError, match="c5"):
        QrmodaConstants(1.0, 0.1, 0.1, 0.1, 0.2)
    with pytest.raises(ConstantsError):
        QrmodaConstants(1.0, 0.1, -0.1, 0.1, -0.2)
    with pytest.raises(ConstantsError):
        QrmodaConstants(1.0, 0.1, 0.1, -0.1, -0.2)


def test_qrmoda_sum_slack_warns_but_accepts():
    with pytest.warns(ConstantsWarning):
        k = QrmodaConstants(1.0, 0.1, 0.7, 0.7, -0.2)
    assert k.c3 == 0.7


def test_brmoda_sign_invariants():
    with pytest.raises(ConstantsError, match="cp3"):
        BrmodaConstants(0.1, 0.1, 0.1, 0.1, -1e-6)
    with pytest.raises(ConstantsError, match="cp5"):
        BrmodaConstants(0.1, 0.1, -0.1, 0.1, 0.0)
    with pytest.raises(ConstantsError):
        BrmodaConstants(-0.1, 0.1, -0.1, 0.1, -1e-6)


def test_adaptation_setting_ranges():
    assert AdaptationSetting(R600, qp=51).knob == 51
    with pytest.raises(ValueError):
        AdaptationSetting(R600, qp=52)
    with pytest.raises(ValueError):
        AdaptationSetting(R600, qp=-1)
    with pytest.raises(ValueError):
        AdaptationSetting(R600, bitrate=0.0)
    with pytest.raises(ValueError):
        AdaptationSetting(R600)


def test_convert_bitrate():
    assert convert_bitrate(1.5, "mbps", "kbps") == pytest.approx(1500.0)
    assert convert_bitrate(2000.0, "bps", "kbps") == pytest.approx(2.0)
    assert convert_bitrate(7.0, None, "kbps") == 7.0
    with pytest.raises(ValueError):
        convert_bitrate(1.0, "gbps", "kbps")


# -- evaluation ------------------------------------------------------------------

def test_midpoint_honda_recognition(honda_rec_q):
    # 24.03 * 270000 ** 0.05211, worked out by hand in log space
    expected = 24.03 * math.exp(0.05211 * math.log(270000))
    assert qrmoda_midpoint(honda_rec_q, R600) == pytest.approx(expected, rel=1e-14)
    assert qrmoda_midpoint(honda_rec_q, R600) == pytest.approx(46.11, abs=0.01)


def test_midpoint_degenerate_cases():
    assert qrmoda_midpoint(QrmodaConstants(7.5, 0.0, 0.1, 0.1, -0.2), Resolution(123, 45)) == 7.5
    for res in (Resolution(1, 1), R600, Resolution(7680, 4320)):
        assert qrmoda_midpoint(QrmodaConstants(0.0, 0.3, 0.1, 0.1, -0.2), res) == 0.0


def test_qrmoda_at_midpoint_is_half_amplitude(honda_rec_q):
    x0 = qrmoda_midpoint(honda_rec_q, R600)
    assert qrmoda_eval(honda_rec_q, R600, x0) == pytest.approx(0.61 + 0.3838 / 2, abs=4 * np.spacing(0.8019))


def test_qrmoda_accepts_pixel_arrays(honda_rec_q):
    qps = np.array([10.0, 30.0, 50.0])
    vec = qrmoda_eval(honda_rec_q, np.full(3, R600.pixel_count()), qps)
    assert np.allclose(vec, [qrmoda_eval(honda_rec_q, R600, q) for q in qps], rtol=0, atol=1e-15)


def test_brmoda_honda_recognition_at_zero(honda_rec_b):
    expected = 0.0363 * 270000 ** 0.292 + 0.273
    assert brmoda_eval(honda_rec_b, R600, 0.0) == pytest.approx(expected, rel=1e-13)
    assert brmoda_eval(honda_rec_b, R600, 0.0) == pytest.approx(1.672, abs=5e-4)


def test_brmoda_single_term_reduction():
    k = BrmodaConstants(0.0, 0.292, -0.054, 0.273, -4.718e-6)
    assert brmoda_eval(k, R600, 0.0) == pytest.approx(0.273, abs=1e-15)


def test_brmoda_rejects_negative_bitrate(honda_rec_b):
    with pytest.raises(ValueError):
        brmoda_eval(honda_rec_b, R600, -1.0)


@pytest.mark.parametrize("value,expected", [(1.672, 1.0), (-0.01, 0.0), (0.43, 0.43), (1.0, 1.0), (0.0, 0.0)])
def test_clamp_error(value, expected):
    assert clamp_error(value) == expected


def test_clamp_error_arrays():
    assert np.array_equal(clamp_error(np.array([-1.0, 0.5, 2.0])), [0.0, 0.5, 1.0])


# -- inversions -------------------------------------------------------------------

def test_max_qp_whole_range_when_target_above_asymptote(honda_rec_q):
    assert qrmoda_max_qp_for_error(honda_rec_q, R600, 0.61 + 0.3838) == 51
    assert qrmoda_max_qp_for_error(honda_rec_q, R600, 1.0) == 51


def test_max_qp_unreachable_below_floor(honda_rec_q):
    assert qrmoda_max_qp_for_error(honda_rec_q, R600, 0.6) is None


def test_max_qp_at_midpoint_matches_scan(honda_rec_q):
    target = 0.61 + 0.3838 / 2
    scan = [q for q in range(52) if clamp_error(qrmoda_eval(honda_rec_q, R600, q)) <= target]
    assert qrmoda_max_qp_for_error(honda_rec_q, R600, target) == max(scan) == 46


def test_required_bitrate_zero_when_already_met(honda_rec_b):
    at_zero = brmoda_eval(honda_rec_b, R600, 0.0)
    assert brmoda_required_bitrate(honda_rec_b, R600, min(at_zero, 1.0)) > 0  # raw value at r=0 is above 1
    k = BrmodaConstants(0.001, 0.292, -0.054, 0.273, -4.718e-6)
    assert brmoda_required_bitrate(k, R600, brmoda_eval(k, R600, 0.0)) == 0.0
    assert brmoda_required_bitrate(k, R600, 0.99) == 0.0


def test_required_bitrate_unreachable_zero_target(honda_rec_b):
    assert brmoda_required_bitrate(honda_rec_b, R600, 0.0) is None


def test_required_bitrate_round_trip(honda_rec_b):
    r = brmoda_required_bitrate(honda_rec_b, R600, 0.5)
    assert abs(brmoda_eval(honda_rec_b, R600, r) - 0.5) <= 1e-9 * 0.5


@pytest.mark.parametrize("target", [-0.1, 1.1, float("nan")])
def test_inversions_reject_bad_targets(honda_rec_q, honda_rec_b, target):
    with pytest.raises(ValueError):
        qrmoda_max_qp_for_error(honda_rec_q, R600, target)
    with pytest.raises(ValueError):
        brmoda_required_bitrate(honda_rec_b, R600, target)


# -- properties -------------------------------------------------------------------

@given(qrmoda_constants, resolutions, st.floats(0, 51), st.floats(0, 51))
def test_qrmoda_non_decreasing_in_qp(k, res, a, b):
    lo, hi = sorted((a, b))
    assert qrmoda_eval(k, res, lo) <= qrmoda_eval(k, res, hi)


@given(brmoda_constants, resolutions, st.floats(0, 1e4), st.floats(1e-3, 1e3))
def test_brmoda_strictly_decreasing_in_bitrate(k, res, r, step):
    if k.cp1 == 0 and k.cp4 == 0:
        return
    a, b = brmoda_eval(k, res, r), brmoda_eval(k, res, r + step)
    # strict where the decay is representable at double precision
    assert b < a or a - b == 0 and a < 1e-300 or b == pytest.approx(a, rel=1e-15)
    assert b <= a


@given(st.floats(0.1, 40), st.floats(0.01, 1.0), st.floats(0, 0.5), st.floats(0, 0.5),
       st.floats(-3, -1e-3), resolutions, resolutions, st.floats(0, 51))
def test_qrmoda_higher_resolution_never_hurts(c1, c2, c3, c4, c5, ra, rb, qp):
    k = QrmodaConstants(c1, c2, c3, c4, c5)
    small, large = sorted((ra, rb), key=Resolution.pixel_count)
    assert qrmoda_eval(k, small, qp) >= qrmoda_eval(k, large, qp) - 1e-15


@given(qrmoda_constants, resolutions, st.floats(0, 1))
def test_max_qp_round_trip(k, res, target):
    qp = qrmoda_max_qp_for_error(k, res, target)
    if qp is None:
        assert clamp_error(qrmoda_eval(k, res, 0)) > target
        return
    assert clamp_error(qrmoda_eval(k, res, qp)) <= target
    if qp < 51:
        assert clamp_error(qrmoda_eval(k, res, qp + 1)) > target


@given(brmoda_constants, resolutions, st.floats(0.01, 0.99))
def test_required_bitrate_round_trip_property(k, res, target):
    r = brmoda_required_bitrate(k, res, target)
    if r is None:
        return
    assert brmoda_eval(k, res, r) <= target * (1 + 1e-9) + 1e-15
    if r > 0:
        assert brmoda_eval(k, res, r * (1 - 1e-6)) > target - 1e-9 * target


# -- serialization and reference data ---------------------------------------------

def test_reference_file_has_eight_sets():
    sets = reference_constants()
    assert len(sets) == 8
    keys = {(s.model, s.dataset, s.task) for s in sets}
    assert keys == {(m, d, t) for m in ("qrmoda", "brmoda") for d in ("honda_ucsd", "disfa")
                    for t in ("detection", "recognition")}


def test_reference_values_spot_check():
    q = reference("qrmoda", "disfa", "recognition")
    assert (q.c1, q.c2, q.c3, q.c4, q.c5) == (1.54, 1.121, 0.003, 0.5913, -0.517)
    b = reference("brmoda", "honda_ucsd", "detection")
    assert (b.cp1, b.cp2, b.cp3, b.cp4, b.cp5) == (0.414, 0.175, -0.126, 0.174, -7.97e-6)


def test_reference_unknown_key():
    with pytest.raises(ValueError, match="no bundled constants"):
        reference("qrmoda", "lfw", "recognition")


def test_constants_doc_round_trip(reference_sets):
    for ref in reference_sets:
        doc = constants_to_doc(ref.constants, source="x", dataset=ref.dataset, task=ref.task)
        assert constants_from_doc(doc) == ref.constants


def test_constants_from_doc_rejects_bad_sign():
    doc = {"model": "qrmoda", "constants": {"c1": 1, "c2": 0.1, "c3": 0.1, "c4": 0.1, "c5": 0.2}}
    with pytest.raises(ConstantsError, match="c5"):
        constants_from_doc(doc)


def test_constants_from_doc_rejects_missing_field():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        with pytest.raises(ValueError):
            constants_from_doc({"model": "brmoda", "constants": {"cp1": 0.1}})
