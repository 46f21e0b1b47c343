"""Oracle run that freezes the Ito-residual tolerance of the acceptance suite.

Each calibration trajectory is recorded every T/2000 and subsampled to T/200,
which separates the trapezoid term (C3 Delta^2) from the dt bias (C2 dt) and
the Monte Carlo fluctuation (C1 / sqrt(N)). Calibration seeds are disjoint
from the acceptance seeds.

    python benchmarks/calibrate_ito.py [--seeds 10]
"""

import argparse
import json
import time

import numpy as np

from kinetic_mv import fhn, rng
from kinetic_mv.models import FHN_REFERENCE
from kinetic_mv.simulator import TrajectoryRecord, simulate

CALIBRATION_SEED = 777
N, T, DT = 4000, 10.0, 1e-3
DENSE, COARSE = 2000, 200
Z = 4.0


def subsample(rec, every):
    return TrajectoryRecord(rec.config, rec.times[::every], rec.ensembles[::every], rec.moments[::every], rec.steps)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, default=10)
    args = ap.parse_args()
    dense, coarse, errs = [], [], []
    t0 = time.time()
    for r in range(args.seeds):
        cfg = fhn.fhn_config(FHN_REFERENCE, N, rng.derive_seed(CALIBRATION_SEED, N, r), t_end=T, dt=DT,
                             n_snapshots=DENSE)
        rec = simulate(cfg)
        dense.append(fhn.ito_residuals(rec, FHN_REFERENCE))
        c = subsample(rec, DENSE // COARSE)
        coarse.append(fhn.ito_residuals(c, FHN_REFERENCE))
        errs.append(np.linalg.norm(fhn.estimate(c).theta_hat - FHN_REFERENCE.as_array()))
    dense, coarse = np.array(dense), np.array(coarse)
    delta = T / COARSE
    quad = coarse - dense
    C3 = np.abs(quad.mean(axis=0)) / delta ** 2 + Z * quad.std(axis=0, ddof=1) / delta ** 2
    C2 = np.abs(dense.mean(axis=0)) / DT
    C1 = Z * dense.std(axis=0, ddof=1) * np.sqrt(N)
    out = {"seeds": args.seeds, "N": N, "dt": DT, "delta": delta, "z": Z,
           "C1": C1.tolist(), "C2": C2.tolist(), "C3": C3.tolist(),
           "tol": (C1 / np.sqrt(N) + C2 * DT + C3 * delta ** 2).tolist(),
           "coarse_abs_max": np.abs(coarse).max(axis=0).tolist(),
           "median_theta_error_T200": float(np.median(errs)), "wall_s": time.time() - t0}
    print(json.dumps(out, indent=2))


if __name__ == "__main__":
    main()
