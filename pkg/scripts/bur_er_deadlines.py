"""BUR-ER deadlines vs BU and BUR. Curves land in results/bur_er_deadlines/curve_*.tsv."""
from _common import run

if __name__ == "__main__":
    run("run", "BUR-ER deadlines vs BU and BUR", "bur_er_deadlines.cfg",
        cols=["policy", "T0", "p", "mean", "stderr", "bound", "gap", "checkpoints_below_bound"])
