"""Self-training trajectories: iterations to a stable pseudo graph and rank-1 per iteration.

    python3 scripts/convergence_study.py --seeds 20 --ratio 1/3 --method mkssl
"""

import argparse
from collections import Counter

import numpy as np

from stsub.data import ExperimentConfig, generate_synthetic_crossview
from stsub.evaluation import run_trial


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--ratio", default="1/3")
    ap.add_argument("--method", choices=["ssl", "mkssl"], default="mkssl")
    ap.add_argument("--persons", type=int, default=100)
    ap.add_argument("--max-iters", type=int, default=10)
    ap.add_argument("--eta", type=float, default=1.0)
    ap.add_argument("--k", type=int, default=2)
    args = ap.parse_args()

    cfg_kw = dict(ratio=args.ratio, max_iters=args.max_iters, eta=args.eta, k_neighbors=args.k)
    trials = []
    for seed in range(args.seeds):
        fs = generate_synthetic_crossview(args.persons, seed=seed)
        res = run_trial(fs, ExperimentConfig(rng_seed=seed, **cfg_kw), 0, args.method)
        if res.error:
            print(f"seed {seed}: {res.error}")
            continue
        trials.append(res)
        edges = " ".join(str(h.edges_changed) for h in res.history[1:])
        r1 = " ".join(f"{x:.2f}" for x in res.rank1_by_iter)
        print(f"seed {seed:2d}  iters {res.iterations:2d}  stable {res.converged!s:5}  edges changed [{edges}]  rank-1 [{r1}]")

    iters = [t.iterations for t in trials]
    print()
    print(f"stable: {np.mean([bool(t.converged) for t in trials]):.0%}  median iterations: {np.median(iters):g}")
    print("iteration histogram:", dict(sorted(Counter(iters).items())))
    depth = max(len(t.rank1_by_iter) for t in trials)
    # a converged run keeps its last value for later iterations
    padded = np.array([t.rank1_by_iter + [t.rank1_by_iter[-1]] * (depth - len(t.rank1_by_iter)) for t in trials])
    print("mean rank-1 by iteration:", " ".join(f"{x:.3f}" for x in padded.mean(axis=0)))
    print(f"final mean rank-1: {np.mean([t.cmc.at(1) for t in trials]):.3f}")


if __name__ == "__main__":
    main()
