#!/usr/bin/env python3
"""Sign and decay statistics of the student feedback under both batch pairings.

    python scripts/feedback_stats.py --seeds 5
"""

import argparse

import numpy as np

from ikd import trainer
from ikd.data import gen_blobs, train_test_split
from ikd.trainer import TrainConfig

PAIRINGS = {
    "same-sample (N=M=1, exam=course)": dict(course_batch=1, exam_batch=1, exam_pairing="course"),
    "independent (N=M=4)": dict(course_batch=4, exam_batch=4, exam_pairing="independent"),
}


def stats(history):
    target, other, per_step = [], [], []
    for r in history:
        mask = np.zeros(r.fb.shape, dtype=bool)
        mask[np.arange(len(r.targets)), r.targets] = True
        target.append(r.fb[mask])
        other.append(r.fb[~mask])
        per_step.append(np.abs(r.fb).mean())
    target, other, per_step = np.concatenate(target), np.concatenate(other), np.array(per_step)
    k = max(1, len(per_step) // 10)
    return {
        "target<=0": float((target <= 1e-12).mean()),
        "nontarget>=0": float((other >= -1e-12).mean()),
        "range_ratio": float(np.ptp(target) / np.ptp(other)) if np.ptp(other) else float("nan"),
        "first10%|fb|": float(per_step[:k].mean()),
        "last10%|fb|": float(per_step[-k:].mean()),
    }


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--epochs", type=int, default=3)
    args = p.parse_args()
    for name, pairing in PAIRINGS.items():
        print(name)
        for seed in range(args.seeds):
            data = train_test_split(gen_blobs(3, 5, 50, 0.2, 0.2, seed=seed), 0.2, seed=seed)[0]
            s = stats(trainer.train(TrainConfig(seed=seed, epochs=args.epochs, **pairing), data))
            print(f"  seed {seed}: " + "  ".join(f"{k}={v:.3g}" for k, v in s.items()))


if __name__ == "__main__":
    main()
