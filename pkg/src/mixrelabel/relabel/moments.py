"""Streaming per-coordinate mean and unbiased variance."""

from __future__ import annotations

import numpy as np

from ..exceptions import DataFormatError


class RunningMoments:
    """Running sample mean and sample variance of a stream of vectors.

    After ``count`` vectors, ``mean`` is their average and ``var`` their
    unbiased (``ddof=1``) variance; ``var`` is 0 while ``count == 1``.
    Each new vector ``x`` with new count ``n`` updates

        mean_n = ((n - 1) * mean_{n-1} + x) / n
        var_n  = (n - 2) / (n - 1) * var_{n-1} + (x - mean_{n-1})**2 / n
    """

    def __init__(self, mean, var, count: int):
        if count < 1:
            raise DataFormatError("RunningMoments needs at least one observation")
        self.mean = np.array(mean, dtype=float)
        self.var = np.array(var, dtype=float)
        self.count = int(count)

    @classmethod
    def from_samples(cls, samples) -> "RunningMoments":
        samples = np.asarray(samples, dtype=float)
        if samples.ndim == 1:
            samples = samples[:, None]
        m = samples.shape[0]
        if m < 1:
            raise DataFormatError("RunningMoments needs at least one observation")
        var = samples.var(axis=0, ddof=1) if m > 1 else np.zeros(samples.shape[1])
        return cls(samples.mean(axis=0), var, m)

    def update(self, x) -> "RunningMoments":
        x = np.asarray(x, dtype=float)
        n = self.count + 1
        dev = x - self.mean
        self.var = (n - 2) / (n - 1) * self.var + dev * dev / n
        self.mean = ((n - 1) * self.mean + x) / n
        self.count = n
        return self

    def increment(self, x) -> np.ndarray:
        """Variance vector that :meth:`update` would produce, without committing."""
        n = self.count + 1
        dev = np.asarray(x, dtype=float) - self.mean
        return (n - 2) / (n - 1) * self.var + dev * dev / n

    @property
    def total_variance(self) -> float:
        return float(self.var.sum())

    def copy(self) -> "RunningMoments":
        return RunningMoments(self.mean.copy(), self.var.copy(), self.count)

    def __repr__(self):
        return f"RunningMoments(count={self.count}, total_variance={self.total_variance:.6g})"
