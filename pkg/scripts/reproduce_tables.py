"""Recompute the L2 error tables for the registry cases beside the published values.

Usage: python scripts/reproduce_tables.py [--tests 1 2 3] [--seed 1] [--out results/]
"""

import argparse
import logging
import time
from pathlib import Path

from slnexpand import bench


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--tests", nargs="*", default=[str(i) for i in range(1, 7)])
    parser.add_argument("--seed", type=int, default=1)
    parser.add_argument("--out", type=Path, default=Path("results"))
    args = parser.parse_args()
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args.out.mkdir(parents=True, exist_ok=True)

    rows = []
    print(f"{'test':6} {'estimator':9} {'ours':>10} {'published':>10} {'ratio':>7} {'seconds':>8}")
    for name in args.tests:
        case = bench.get_case(name)
        t0 = time.perf_counter()
        case_rows = bench.run_test(case, None, seed=args.seed, timing=True)
        rows += case_rows
        for row in case_rows:
            paper = case.paper_l2.get(row.estimator)
            ratio = f"{row.l2_error / paper:7.2f}" if paper else "      -"
            paper_txt = f"{paper:10.3g}" if paper else "         -"
            print(f"{case.name:6} {row.estimator:9} {row.l2_error:10.3g} {paper_txt} {ratio}"
                  f" {row.runtime_ms / 1e3:8.1f}")
        print(f"# {case.name} total {time.perf_counter() - t0:.1f} s")
    path = args.out / f"bench_seed{args.seed}.csv"
    path.write_text(bench.rows_to_csv(rows))
    print(f"wrote {path}")


if __name__ == "__main__":
    main()
