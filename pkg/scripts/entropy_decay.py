#!/usr/bin/env python3
"""Per-epoch mean teacher soft-target entropy, IKD vs KD, over several seeds.

    python scripts/entropy_decay.py --seeds 5 --epochs 3
"""

import argparse

from ikd import trainer
from ikd.data import gen_blobs, train_test_split
from ikd.trainer import TrainConfig


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--epochs", type=int, default=3)
    p.add_argument("--label-noise", type=float, default=0.2)
    p.add_argument("--pretrain-lr", type=float, default=0.1)
    args = p.parse_args()

    header = " ".join(f"epoch_{e + 1:<3}" for e in range(args.epochs))
    print(f"{'seed':>4} {'mode':>4}  {header}  decreasing")
    wins = 0
    for seed in range(args.seeds):
        data = train_test_split(gen_blobs(3, 5, 50, 0.2, args.label_noise, seed=seed), 0.2, seed=seed)[0]
        for mode in ("kd", "ikd"):
            cfg = TrainConfig(mode=mode, epochs=args.epochs, seed=seed, teacher_pretrain_lr=args.pretrain_lr)
            ent = trainer.epoch_entropy(trainer.train(cfg, data))
            dec = all(b < a for a, b in zip(ent, ent[1:]))
            wins += mode == "ikd" and dec
            print(f"{seed:>4} {mode:>4}  " + " ".join(f"{e:.5f}  " for e in ent) + f"  {dec}")
    print(f"ikd strictly decreasing in {wins}/{args.seeds} seeds")


if __name__ == "__main__":
    main()
