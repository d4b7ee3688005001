"""Shared estimator plumbing for the relabelling algorithms."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ..exceptions import DataFormatError, DimensionError
from ..model import Dataset, Draw, Trace, map_allocation, mixture_logpdf


@dataclass
class RelabelResult:
    """Output of one relabelling run.

    ``permutations[j]`` is the 0-based permutation applied to draw ``j`` of
    the input.  ``relabelled`` holds only the retained draws, so it is
    shorter than the input exactly when ``excluded`` is non-empty.
    """

    method: str
    permutations: np.ndarray
    relabelled: Trace
    excluded: list = field(default_factory=list)
    wall_time: float = 0.0
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.relabelled)


def check_trace(X) -> Trace:
    """Accept a Trace, a sequence of Draws, or an (M, K, block) array of 1-D blocks."""
    if isinstance(X, Trace):
        return X
    if isinstance(X, (list, tuple)) and X and isinstance(X[0], Draw):
        return Trace.from_draws(list(X))
    arr = np.asarray(X, dtype=float)
    if arr.ndim == 3 and arr.shape[-1] == 3:
        return Trace.from_blocks(arr, d=1)
    raise DataFormatError(
        "expected a Trace, a list of Draw, or an (M, K, 3) array of univariate blocks; "
        f"got {type(X).__name__} with shape {getattr(arr, 'shape', None)}")


def check_allocation(z, n: Optional[int], K: int, what: str = "allocation") -> np.ndarray:
    z = np.asarray(z)
    if z.ndim != 1 or not np.issubdtype(z.dtype, np.integer):
        raise DataFormatError(f"{what} must be a 1-D integer vector")
    if n is not None and z.shape[0] != n:
        raise DimensionError(n, z.shape[0], f"{what} length")
    if z.size and (z.min() < 0 or z.max() >= K):
        raise DataFormatError(f"{what} values must lie in 0..{K - 1}")
    return z.astype(np.intp)


def derive_allocation(draw: Draw, data: Dataset) -> np.ndarray:
    """Plug-in allocation of every observation under the draw's parameters."""
    return map_allocation(draw.spec, data.points)


def derive_allocations(trace: Trace, data: Dataset) -> np.ndarray:
    if data.d != trace.d:
        raise DimensionError(trace.d, data.d, "dataset dimension")
    return np.stack([map_allocation(trace.spec(j), data.points) for j in range(len(trace))])


def log_likelihoods(trace: Trace, data: Dataset) -> np.ndarray:
    return np.array([mixture_logpdf(trace.spec(j), data.points).sum() for j in range(len(trace))])


def select_pivot(trace: Trace) -> Draw:
    """Draw with the highest log posterior; earliest draw on ties."""
    if trace.log_posterior is None:
        raise DataFormatError(
            "trace has no log_posterior column; recompute it from the data "
            "(mixrelabel.sampler.attach_log_posterior) before selecting a pivot")
    return trace[int(np.argmax(trace.log_posterior))]


def _pivot_index(trace: Trace, data: Optional[Dataset], meta: dict) -> int:
    if trace.log_posterior is not None:
        meta["pivot_source"] = "log_posterior"
        return int(np.argmax(trace.log_posterior))
    if data is None:
        select_pivot(trace)
    meta["pivot_source"] = "log_likelihood"
    return int(np.argmax(log_likelihoods(trace, data)))


class BaseRelabeller(TransformerMixin, BaseEstimator):
    """Common fit/transform protocol.

    ``fit`` computes one permutation per draw of the given trace;
    ``transform`` applies those permutations to that same trace (and drops
    excluded draws).  ``fit_transform`` does both.
    """

    method = "base"

    def fit(self, X, y=None, data: Optional[Dataset] = None):
        trace = check_trace(X)
        if len(trace) == 0:
            raise DataFormatError("cannot relabel an empty trace")
        self.meta_ = {}
        start = time.perf_counter()
        perms, excluded = self._fit_permutations(trace, data)
        self.wall_time_ = time.perf_counter() - start
        self.permutations_ = np.asarray(perms, dtype=np.intp)
        self.excluded_ = sorted(int(j) for j in excluded)
        self.n_draws_ = len(trace)
        self.n_components_ = trace.K
        return self

    def _fit_permutations(self, trace: Trace, data: Optional[Dataset]):
        raise NotImplementedError

    def transform(self, X):
        check_is_fitted(self, "permutations_")
        trace = check_trace(X)
        if len(trace) != self.n_draws_ or trace.K != self.n_components_:
            raise DimensionError((self.n_draws_, self.n_components_), (len(trace), trace.K),
                                 "trace shape (draws, components) relative to fit")
        out = trace.permute(self.permutations_)
        if self.excluded_:
            keep = np.setdiff1d(np.arange(len(trace)), self.excluded_)
            out = out.subset(keep)
        out.meta["relabel_method"] = self.method
        return out

    def fit_transform(self, X, y=None, data: Optional[Dataset] = None):
        return self.fit(X, data=data).transform(X)

    def result(self, X, data: Optional[Dataset] = None) -> RelabelResult:
        """Fit on ``X`` and package everything into a :class:`RelabelResult`."""
        relabelled = self.fit_transform(X, data=data)
        return RelabelResult(self.method, self.permutations_, relabelled,
                             list(self.excluded_), self.wall_time_, dict(self.meta_))
