"""Shared fixtures-in-code for the experiment-level tests."""

import numpy as np

from dkdfmh.features import FeatureSegment


def tiny_segments(n, frames=20, seed=0, n_utts=None):
    """Small random segments whose class signal is a per-class offset."""
    rng = np.random.default_rng(seed)
    n_utts = n_utts or n
    segs = []
    for i in range(n):
        segs.append(FeatureSegment(
            rng.normal(size=(frames, 40)) + 2.0 * (i % 4),
            f"u{i % n_utts}", i % 4, i // n_utts))
    return segs
