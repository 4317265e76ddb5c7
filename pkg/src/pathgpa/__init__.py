"""Disease-progression dynamics from per-subject pathway graphs.

Stages: graph building, graph regression with pathway sensitivity, graph-level
pseudotime, temporal GCN transition analysis and neural SDE stability and
bifurcation detection.
"""
__version__ = "0.1.0"
