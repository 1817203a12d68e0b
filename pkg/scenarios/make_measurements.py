"""Write a synthetic measurement file drawn from the bundled constants.

Counts are binomial draws over ``faces`` ground-truth faces per adaptation
point, so the file exercises the count-based path of the ingest layer.

    python3 scenarios/make_measurements.py scenarios/measurements.csv
"""
import sys

import numpy as np

from vidacc.ingest import MeasurementRecord, write_measurements
from vidacc.metrics import ConfusionCounts
from vidacc.model import Resolution, brmoda_eval, clamp_error, qrmoda_eval, reference

SEED = 20240601
FACES = 2000
LADDER = [Resolution(320, 240), Resolution(480, 360), Resolution(640, 480), Resolution(960, 720)]


def records(rng):
    k = reference("qrmoda", "honda_ucsd", "recognition")
    for res in LADDER:
        for qp in range(10, 52, 4):
            e = clamp_error(qrmoda_eval(k, res, qp))
            fn = int(rng.binomial(FACES, e))
            yield MeasurementRecord("honda_ucsd", "recognition", res, "qp", float(qp),
                                    counts=ConfusionCounts(FACES - fn, fn, int(rng.integers(0, 50))))
    k = reference("brmoda", "disfa", "recognition")
    for res in LADDER:
        for r in np.geomspace(2e3, 2e6, 10):
            e = clamp_error(brmoda_eval(k, res, r))
            fn = int(rng.binomial(FACES, e))
            yield MeasurementRecord("disfa", "recognition", res, "bitrate", float(f"{r:.6g}"), unit="bps",
                                    counts=ConfusionCounts(FACES - fn, fn, int(rng.integers(0, 50))))


if __name__ == "__main__":
    write_measurements(list(records(np.random.default_rng(SEED))), sys.argv[1] if len(sys.argv) > 1 else sys.stdout)
