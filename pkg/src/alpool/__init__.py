"""Similarity-driven training data selection for ensemble text classifiers.

Expand confirmed prediction errors into an unlabeled pool via exact
k-nearest-neighbor search under three per-member embedding taps, with
entropy and random baselines, an annotation oracle with out-of-domain
accounting, and a reproducible experiment harness.
"""

__version__ = "0.1.0"
