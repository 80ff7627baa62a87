"""BU-ER deadlines vs BU and greedy. Curves land in results/bu_er_deadlines/curve_*.tsv."""
from _common import run

if __name__ == "__main__":
    run("run", "BU-ER deadlines vs BU and greedy", "bu_er_deadlines.cfg",
        cols=["policy", "T0", "p", "mean", "stderr", "bound", "gap", "checkpoints_below_bound"])
