"""Cost planning and empirical validation for decentralised DSVRG training."""

__version__ = "0.1.0"
