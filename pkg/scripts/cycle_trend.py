"""Stage-one / stage-two moments of the energy-removal cycles as the deadline grows."""
from _common import run

if __name__ == "__main__":
    run("cycles", __doc__, "cycles.cfg",
        cols=["policy", "T0", "n_cycles", "t1_mean", "t1_se", "t2_mean", "t2_se",
              "residual_mean", "geom_relation", "geom_relation_se", "reference_value"])
