"""Train the five defenses on two moons and compare their robustness curves.

Writes one curve CSV (plus JSON sidecar) per defense, an AUAC table and an
SVG plot into --out-dir.

    python3 scripts/run_comparison.py --seeds 0 1 2 --out-dir results/comparison
"""
import argparse
import csv
import time
from pathlib import Path

from satrobust.experiments import compare_defenses
from satrobust.plotting import plot_curves

KINDS = ("standard", "madry", "mixed", "atda", "sat")


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seeds", type=int, nargs="+", default=[0])
    parser.add_argument("--kinds", nargs="+", default=list(KINDS), choices=KINDS)
    parser.add_argument("--out-dir", default="results/comparison")
    parser.add_argument("--epochs", type=int, help="override the shared recipe")
    args = parser.parse_args()

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    overrides = {}
    if args.epochs:
        overrides = dict(epochs=args.epochs, lr_decay_epochs=(int(0.75 * args.epochs),))
    rows = []
    for seed in args.seeds:
        start = time.perf_counter()
        res = compare_defenses(seed, kinds=args.kinds, **overrides)
        for kind, (curve, a16, a30) in res.items():
            curve.save(out / f"{kind}_seed{seed}.csv")
            rows.append({"seed": seed, "defense": kind, "clean": curve.accuracies[0],
                         "auac16": a16, "auac30": a30})
            print(f"seed {seed} {kind:>8}: clean {curve.accuracies[0]:.3f} "
                  f"AUAC@16 {a16:.3f} AUAC@30 {a30:.3f}")
        print(f"seed {seed} took {time.perf_counter() - start:.0f}s")
        plot_curves([c for c, _, _ in res.values()], out / f"curves_seed{seed}.svg",
                    f"two moons, seed {seed}")
    with open(out / "auac.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


if __name__ == "__main__":
    main()
