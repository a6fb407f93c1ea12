"""Level-set percolation of the Gaussian free field on random regular graphs."""

__version__ = "0.1.0"
