"""Desk-scale simulation summary for the discontinuity design.

Defaults give the n = 10000 row at q = 0.025 with 300 replications and
the package-default 500 subsample draws, about a minute on one core.
The design pays treated units a bonus of 0.1 on top of the complier
effect of 1, so the report carries two coverage columns: cov95 against
the bonus-inclusive effect of 1.1 (negated scale -1.1) and cov95a
against the bare effect of 1 (negated scale -1.0). Estimates center on
the bonus-inclusive target; measured against the bare one they show a
bias of about +0.1 on the original outcome scale.
"""

import argparse
from pathlib import Path

from xqte.cli import write_table_csv
from xqte.inference import SubsampleConfig
from xqte.simulate import McConfig, format_report, run_mc


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, nargs="+", default=[10000])
    ap.add_argument("--q", type=float, nargs="+", default=[0.025])
    ap.add_argument("--reps", type=int, default=300)
    ap.add_argument("--B", dest="draws", type=int, default=500)
    ap.add_argument("--seed", type=int, default=20260815)
    ap.add_argument("--out", type=Path, default=None,
                    help="also write table.csv into this directory")
    args = ap.parse_args()

    cfg = McConfig(
        design="rdd",
        n_list=tuple(args.n),
        q_list=tuple(args.q),
        reps=args.reps,
        seed=args.seed,
        subsample=SubsampleConfig(draws=args.draws),
    )
    report = run_mc(cfg)
    print(format_report(report))
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        write_table_csv(args.out / "table.csv", report)
        print(f"wrote {args.out / 'table.csv'}")


if __name__ == "__main__":
    main()
