"""Grid search of the renewal objective over constant and linear delay families."""
import argparse

from aoi_eh.analysis import lb_feedback, lb_no_feedback, renewal_grid_search

ap = argparse.ArgumentParser(description=__doc__)
ap.add_argument("--p", type=float, action="append", default=None)
args = ap.parse_args()

print(f"{'p':>5} {'family':>9} {'param':>10} {'objective':>14} {'1/(2p)':>10} {'(2-p)/(2p)':>11}")
for p in args.p or [0.2, 0.6, 1.0]:
    rep = renewal_grid_search(p)
    for fam, c in sorted(rep.best_by_family.items()):
        print(f"{p:5.2f} {fam:>9} {c.parameter:10.5f} {c.objective:14.10f} {lb_feedback(p):10.5f} "
              f"{lb_no_feedback(p):11.5f}")
