"""Lognormal-reference expansion of LN(0, 1.5^2) against LN(0, 1.22^2).

The series converges as K grows, but to a density that differs from the
target while sharing its moments. Writes the per-K table and the K = 16
limit next to the target density.

Usage: python scripts/invalid_convergence.py [--K 16] [--out results/]
"""

import argparse
import csv
import math
from pathlib import Path

import numpy as np
from scipy import integrate

from slnexpand import bench, expand, sln
from slnexpand.orthopoly import Lognormal


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--K", type=int, default=16)
    parser.add_argument("--out", type=Path, default=Path("results"))
    args = parser.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)

    target, ref = Lognormal(0.0, 1.5**2), Lognormal(0.0, 1.22**2)
    rows = bench.lognormal_demo_study(target, ref, range(1, args.K + 1))
    with (args.out / "invalid_convergence.csv").open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["K", "l2_to_target", "l2_step", "sup_to_target"])
        for K, to_target, step, sup in rows:
            writer.writerow([K, repr(to_target), "" if step is None else repr(step), repr(sup)])
            step_txt = "-" if step is None else f"{step:.2e}"
            print(f"K={K:2d}  L2 to target {to_target:.4f}  step {step_txt:>9}  sup {sup:.4f}")

    limit = expand.fhat_lognormal_demo(target, ref, args.K)
    z = np.linspace(-25, 30, 200001)
    x = np.exp(z)
    dens = limit(x) * x
    for j in range(1, 5):
        got = integrate.simpson(x**j * dens, x=z)
        print(f"moment {j}: limit {got:.6g}  target {math.exp(j * j * 2.25 / 2):.6g}")

    xs = np.linspace(0.1, 5.0, 491)
    with (args.out / "invalid_convergence_density.csv").open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["x", "limit", "target"])
        for x_, f_, t_ in zip(xs, limit(xs), sln._lognormal_pdf(xs, target.mu, target.sigma2)):
            writer.writerow([repr(float(x_)), repr(float(f_)), repr(float(t_))])
    print(f"wrote {args.out}/invalid_convergence*.csv")


if __name__ == "__main__":
    main()
