"""Effect of kernel centering and the numerator ridge on MKFSL vs MKSSL rank-1.

    python3 scripts/ridge_ablation.py --seeds 10 --ratio 1/5
"""

import argparse

import numpy as np

from stsub.data import ExperimentConfig, generate_synthetic_crossview
from stsub.evaluation import run_trial


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--ratio", default="1/5")
    ap.add_argument("--ridges", type=float, nargs="+", default=[0.0, 0.01, 0.1, 1.0])
    ap.add_argument("--dim", type=int, default=128)
    args = ap.parse_args()

    data = [generate_synthetic_crossview(100, seed=s, dim=args.dim) for s in range(args.seeds)]
    print(f"{'center':>7}{'ridge':>8}{'mkfsl':>8}{'mkssl':>8}")
    for center in (False, True):
        for ridge in args.ridges:
            r1 = {}
            for method in ("mkfsl", "mkssl"):
                vals = []
                for s, fs in enumerate(data):
                    cfg = ExperimentConfig(ratio=args.ratio, rng_seed=s, center=center, ridge=ridge, track_iterations=False)
                    res = run_trial(fs, cfg, 0, method)
                    vals.append(np.nan if res.error else res.cmc.at(1))
                r1[method] = np.nanmean(vals)
            print(f"{center!s:>7}{ridge:8.2f}{r1['mkfsl']:8.3f}{r1['mkssl']:8.3f}", flush=True)


if __name__ == "__main__":
    main()
