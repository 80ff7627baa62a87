"""Path-wise dominance of each energy-removal variant by its parent, on shared randomness."""
from _common import run

if __name__ == "__main__":
    run("paired", __doc__, "paired.cfg")
