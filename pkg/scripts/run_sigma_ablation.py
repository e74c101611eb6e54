"""Train SAT at each sigma and report AUAC@16 / AUAC@30 per seed.

    python3 scripts/run_sigma_ablation.py --seeds 0 1 2 --out-dir results/ablation
"""
import argparse
import csv
import time
from pathlib import Path

from satrobust.experiments import SIGMAS, sigma_ablation
from satrobust.plotting import plot_curves


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    parser.add_argument("--sigmas", type=float, nargs="+", default=list(SIGMAS))
    parser.add_argument("--out-dir", default="results/ablation")
    args = parser.parse_args()

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for seed in args.seeds:
        start = time.perf_counter()
        res = sigma_ablation(seed, sigmas=args.sigmas)
        for sigma, (curve, a16, a30) in res.items():
            curve.save(out / f"sat_sigma{sigma:g}_seed{seed}.csv")
            rows.append({"seed": seed, "sigma": sigma, "clean": curve.accuracies[0],
                         "auac16": a16, "auac30": a30})
        best = max(res, key=lambda s: res[s][2])
        print(f"seed {seed}: " + "  ".join(f"sigma={s:g} {v[2]:.3f}" for s, v in res.items())
              + f"  best sigma={best:g}  ({time.perf_counter() - start:.0f}s)")
        plot_curves([c for c, _, _ in res.values()], out / f"curves_seed{seed}.svg",
                    f"SAT sigma ablation, seed {seed}")
    with open(out / "auac.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


if __name__ == "__main__":
    main()
