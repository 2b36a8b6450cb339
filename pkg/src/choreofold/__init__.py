"""Three-body choreographies, their three-fold bifurcations and folds."""

__version__ = "0.1.0"
