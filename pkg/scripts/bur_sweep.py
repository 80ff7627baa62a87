"""BUR convergence towards the feedback bound. Curves land in results/bur_sweep/curve_*.tsv."""
from _common import run

if __name__ == "__main__":
    run("run", "BUR convergence towards the feedback bound", "bur_sweep.cfg",
        cols=["policy", "T0", "p", "mean", "stderr", "bound", "gap", "checkpoints_below_bound"])
