"""Directional desk-scale sweep: topology ladder and supervision modes.

Runs the calibrated five-seed comparison (UNet vs U-Next, with and
without multi-level deep supervision) on held-out synthetic scenes rich
in thin-board and column points, and writes the comparison CSV.
"""

import argparse
import sys

from codecforge.ablate import AblationSettings, ablation_csv, arm_means, run_ablation


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs/desk_ablation")
    parser.add_argument("--seeds", type=int, default=5)
    parser.add_argument("--epochs", type=int, default=30)
    args = parser.parse_args()

    settings = AblationSettings(seeds=tuple(range(args.seeds)), epochs=args.epochs)
    results = run_ablation(settings, args.out)
    csv_text = ablation_csv(results)
    csv_path = f"{args.out}/ablation.csv"
    with open(csv_path, "w") as f:
        f.write(csv_text)
    print(csv_text)
    means = arm_means(results)
    unet = means[("unet", "no_ds")]
    unext = means[("unext", "multi_level")]
    unext_nods = means[("unext", "no_ds")]
    print(f"unext(mds) vs unet: {unext - unet:+.4f} mIoU (want >= +0.01)")
    print(f"unext(mds) vs unext(no_ds): {unext - unext_nods:+.4f} mIoU (want >= 0)")
    print(f"csv: {csv_path}")
    ok = unext >= unet + 0.01 and unext >= unext_nods
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
