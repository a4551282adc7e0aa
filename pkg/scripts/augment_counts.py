"""Build a 21-class x 100-image stand-in dataset, split it, augment the training part, count outputs.

    python3 scripts/augment_counts.py --out /tmp/lulc_counts
"""
import argparse
import shutil
from pathlib import Path

from lulc.augment import AugmentPlan, augment_dataset
from lulc.dataset import scan_dataset, split
from lulc.synthetic import write_class_tree


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="lulc_counts")
    ap.add_argument("--size", type=int, default=8, help="stand-in image side in pixels")
    ap.add_argument("--seed", type=int, default=42)
    args = ap.parse_args()

    out = Path(args.out)
    if out.exists():
        shutil.rmtree(out)
    write_class_tree(out / "raw", 21, 100, size=args.size, seed=args.seed)
    index = scan_dataset(out / "raw")
    plan_aug = AugmentPlan.symmetric((5, 10, 30, 40))
    for ratios in ((60, 20, 20), (80, 20, 0)):
        plan = split(index, ratios, args.seed)
        keep = set(plan.paths("train"))
        samples = [(p, index.classes[c]) for p, c in index.samples if p in keep]
        manifest = augment_dataset(samples, plan_aug, out / f"aug_{ratios[0]}")
        print(f"split {'/'.join(map(str, ratios))}: {len(samples)} training images x {plan_aug.multiplier} "
              f"= {len(manifest)} augmented images")


if __name__ == "__main__":
    main()
