#!/usr/bin/env python3
"""First-order vs exact (unrolled, finite-difference) teacher meta-gradient across alpha.

    python scripts/approx_error.py --seeds 3
"""

import argparse

from ikd import checks

ALPHAS = (1e-1, 3e-2, 1e-2, 3e-3, 1e-3, 1e-4)


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seeds", type=int, default=3)
    args = p.parse_args()
    print(f"{'seed':>4} {'alpha':>8} {'cosine':>12} {'rel_err':>10}")
    for seed in range(args.seeds):
        res = checks.check_meta_approximation(seed=seed, alphas=ALPHAS)
        for row in res["rows"]:
            print(f"{seed:>4} {row['alpha']:>8.0e} {row['cosine']:>12.8f} {row['rel_err']:>10.2e}")
        print(f"     monotone: {res['monotone']}")


if __name__ == "__main__":
    main()
