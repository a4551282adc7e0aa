"""Fine-tuning and SVM-on-features versus training from scratch, on synthetic textures.

    python3 scripts/transfer_toy.py --seeds 5 --budget 30
"""
import argparse
import time
from dataclasses import replace

import numpy as np

from lulc.experiments import TransferConfig, run_transfer


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--budget", type=int, default=TransferConfig.budget,
                    help="training iterations on the target domain")
    ap.add_argument("--pretrain", type=int, default=TransferConfig.pretrain_iterations)
    args = ap.parse_args()

    cfg = replace(TransferConfig(), budget=args.budget, pretrain_iterations=args.pretrain)
    print(f"{'seed':>4}  {'finetune':>8}  {'svm':>6}  {'scratch':>7}")
    rows = []
    start = time.perf_counter()
    for seed in range(args.seeds):
        r = run_transfer(seed, cfg)
        rows.append((r.finetune, r.svm, r.scratch))
        print(f"{seed:>4}  {r.finetune:8.3f}  {r.svm:6.3f}  {r.scratch:7.3f}")
    ft, sv, sc = np.mean(rows, axis=0)
    print(f"mean  {ft:8.3f}  {sv:6.3f}  {sc:7.3f}   ({time.perf_counter() - start:.1f}s)")
    print(f"gain over scratch: fine-tune {100 * (ft - sc):+.1f} points, svm {100 * (sv - sc):+.1f} points")


if __name__ == "__main__":
    main()
