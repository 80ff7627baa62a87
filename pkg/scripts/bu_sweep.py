"""BU convergence towards the no-feedback bound. Curves land in results/bu_sweep/curve_*.tsv."""
from _common import run

if __name__ == "__main__":
    run("run", "BU convergence towards the no-feedback bound", "bu_sweep.cfg",
        cols=["policy", "T0", "p", "mean", "stderr", "bound", "gap", "checkpoints_below_bound"])
