"""Print the uniform-refinement rate tables for the smooth-solution study.

Runs both element families at (k, l) = (2, 1) and (3, 2) on a ladder of
centroidal Voronoi meshes and prints one table per run: mesh size, the
relative energy components and the incremental rates.  Sizes are chosen so
the whole script finishes in a few minutes; pass --quick for a small ladder.
"""

import argparse

from platevem.manufactured import format_rate_table, rate_table, smooth_case
from platevem.runner import run_convergence, voronoi_ladder
from platevem.spaces import Family

COUNTS = [25, 100, 400, 1600, 6400]


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--quick", action="store_true", help="stop at 400 cells")
    ap.add_argument("--seed", type=int, default=3)
    args = ap.parse_args()
    counts = COUNTS[:3] if args.quick else COUNTS

    case = smooth_case()
    for k, l, levels in ((2, 1, len(counts)), (3, 2, min(4, len(counts)))):
        meshes = voronoi_ladder(case, counts[:levels], seed=args.seed)
        for family in (Family.CONFORMING, Family.NONCONFORMING):
            results = run_convergence(case, meshes, family, k, l,
                                      with_estimator=False)
            rows = rate_table(
                [r.h for r in results],
                {"err_u_h2": [r.report.err_u_h2 for r in results],
                 "err_p_h1": [r.report.err_p_h1 for r in results],
                 "energy": [r.report.energy for r in results]})
            print(f"\n{family.name.lower()} k={k} l={l}")
            print(format_rate_table(rows))


if __name__ == "__main__":
    main()
