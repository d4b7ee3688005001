"""The six relabelling algorithms.

Every algorithm returns, for each draw, a permutation ``nu`` such that
``trace.permute(nu)`` is the relabelled draw.
"""

from __future__ import annotations

import warnings
from typing import Optional

import numpy as np

from ..exceptions import DataFormatError
from ..model import Dataset, Draw, Trace, component_blocks
from .assignment import (MAX_ENUMERATION_K, all_permutations, best_permutations,
                         hungarian)
from .base import (BaseRelabeller, RelabelResult, _pivot_index, check_allocation,
                   derive_allocation, derive_allocations)
from .moments import RunningMoments

SCALE_FLOOR = 1e-12


def _require_enumerable(K: int, method: str) -> None:
    if K > MAX_ENUMERATION_K:
        raise DataFormatError(
            f"{method} searches all K! permutations and is limited to K <= "
            f"{MAX_ENUMERATION_K}; got K={K}. Use marin, cron_west or papastamoulis.")


def _sq_dist_matrix(blocks: np.ndarray, centre: np.ndarray, weight=None) -> np.ndarray:
    """D[k, c] = sum over coordinates of (blocks[c] - centre[k])**2 (* weight[k])."""
    diff = blocks[None, :, :] - centre[:, None, :]
    sq = diff * diff
    if weight is not None:
        sq = sq * weight[:, None, :]
    return sq.sum(axis=-1)


def scalar_product_permutations(blocks: np.ndarray, pivot_blocks: np.ndarray,
                                direction: str = "max") -> np.ndarray:
    """Per-draw permutation optimising <permuted draw, pivot> over R^q.

    The inner product is separable over component blocks, so the search
    reduces to an assignment on ``G[k, c] = <pivot_k, block_c>``.
    """
    if direction not in ("max", "min"):
        raise DataFormatError(f"direction must be 'max' or 'min', got {direction!r}")
    G = np.einsum("kp,jcp->jkc", pivot_blocks, blocks)
    return best_permutations(G, maximize=(direction == "max"))


def match_counts(reference: np.ndarray, allocations: np.ndarray, K: int) -> np.ndarray:
    """N[j, h, c] = #{i : reference_i = h and allocations[j, i] = c}."""
    M = allocations.shape[0]
    codes = reference[None, :] * K + allocations + (K * K) * np.arange(M)[:, None]
    return np.bincount(codes.ravel(), minlength=M * K * K).reshape(M, K, K)


# --------------------------------------------------------------------------
# sequential full-parameter methods
# --------------------------------------------------------------------------

class CeleuxRelabeller(BaseRelabeller):
    """Sequential scaled-distance relabelling against running location/scale.

    The first ``m`` draws seed the per-coordinate location and scale and
    keep their labels.  Each later draw takes the permutation minimising
    ``sum_i (phi_i - loc_i)**2 / scale_i**2`` (scale is the running standard
    deviation), then the running moments absorb the relabelled draw.

    Parameters
    ----------
    m : int, default=100
        Number of initial draws assumed free of label switching.
    """

    method = "celeux"

    def __init__(self, m: int = 100):
        self.m = m

    def _fit_permutations(self, trace, data):
        M, K = len(trace), trace.K
        m = self.m
        if not 2 <= m < M:
            raise DataFormatError(f"celeux needs 2 <= m < M, got m={m}, M={M}")
        _require_enumerable(K, self.method)
        blocks = trace.blocks()
        p = blocks.shape[-1]
        P = all_permutations(K)
        rows = np.arange(K)
        perms = np.tile(np.arange(K, dtype=np.intp), (M, 1))
        stats = RunningMoments.from_samples(blocks[:m].reshape(m, -1))
        floored = 0
        for j in range(m, M):
            var = stats.var
            small = var < SCALE_FLOOR
            if small.any():
                floored += int(small.sum())
                var = np.where(small, SCALE_FLOOR, var)
            D = _sq_dist_matrix(blocks[j], stats.mean.reshape(K, p), 1.0 / var.reshape(K, p))
            nu = P[int(np.argmin(D[rows, P].sum(axis=1)))]
            perms[j] = nu
            stats.update(blocks[j][nu].reshape(-1))
        self.n_scale_floored_ = floored
        self.moments_ = stats
        self.meta_["scale_floor_events"] = floored
        if floored:
            warnings.warn(f"celeux: {floored} zero-variance scale entries floored at "
                          f"{SCALE_FLOOR}", RuntimeWarning, stacklevel=3)
        return perms, []


class MinimumVarianceRelabeller(BaseRelabeller):
    """Relabel each draw to minimise the running total posterior variance.

    Step 1 takes ``m`` reference draws from the modal region and seeds the
    running mean and variance with them.  Step 2 visits the remaining draws
    in order and commits, for each, the permutation minimising the total
    variance of all draws seen so far.  Because the previously committed
    variance enters that total with a permutation-free factor, the argmin
    is that of ``sum_i (phi_nu,i - running_mean_i)**2``.

    Parameters
    ----------
    m : int, default=100
        Size of the reference set.
    window : {"auto", "first"}, default="auto"
        ``"auto"`` picks the reference window with :func:`reference_window`;
        ``"first"`` uses draws ``0..m-1``.
    align_reference : bool, default=True
        Align reference draws to the window's best draw with the
        scalar-product rule before seeding, so a window that is not
        switch-free still yields consistent reference labels.  With a
        stable window this is the identity.
    """

    method = "minvar"

    def __init__(self, m: int = 100, window: str = "auto", align_reference: bool = True,
                 reference_mean=None):
        self.m = m
        self.window = window
        self.align_reference = align_reference
        self.reference_mean = reference_mean

    def _fit_permutations(self, trace, data):
        M, K = len(trace), trace.K
        m = self.m
        if m < 2:
            raise DataFormatError(f"minvar needs m >= 2 (variance undefined), got m={m}")
        if m >= M:
            raise DataFormatError(f"minvar needs m < M, got m={m}, M={M}")
        _require_enumerable(K, self.method)
        if self.window == "first" or trace.log_posterior is None:
            start, stable = 0, None
        elif self.window == "auto":
            start, stable = reference_window(trace, m, return_status=True)
        else:
            raise DataFormatError(f"window must be 'auto' or 'first', got {self.window!r}")
        blocks = trace.blocks()
        p = blocks.shape[-1]
        perms = np.tile(np.arange(K, dtype=np.intp), (M, 1))
        ref = np.arange(start, start + m)
        if self.align_reference and stable is False:
            lp = trace.log_posterior
            pivot = start if lp is None else start + int(np.argmax(lp[ref]))
            perms[ref] = scalar_product_permutations(blocks[ref], blocks[pivot])
        if self.reference_mean is not None:
            # Put the whole reference set onto an external labelling (used to
            # align parallel chains) before seeding.
            target = np.asarray(self.reference_mean, dtype=float).reshape(K, p)
            seeded = blocks[ref][np.arange(m)[:, None], perms[ref]].mean(axis=0)
            glob = best_permutations(_sq_dist_matrix(seeded, target)[None])[0]
            perms[ref] = perms[ref][:, glob]
        ref_blocks = blocks[ref][np.arange(m)[:, None], perms[ref]]
        stats = RunningMoments.from_samples(ref_blocks.reshape(m, -1))
        P = all_permutations(K)
        rows = np.arange(K)
        order = np.concatenate([np.arange(start + m, M), np.arange(0, start)])
        for j in order:
            D = _sq_dist_matrix(blocks[j], stats.mean.reshape(K, p))
            nu = P[int(np.argmin(D[rows, P].sum(axis=1)))]
            perms[j] = nu
            stats.update(blocks[j][nu].reshape(-1))
        self.reference_start_ = int(start)
        self.reference_stable_ = stable
        self.processing_order_ = order
        self.moments_ = stats
        self.meta_.update(reference_start=int(start), reference_stable=stable,
                          total_variance=stats.total_variance)
        return perms, []


# --------------------------------------------------------------------------
# pivot-based methods
# --------------------------------------------------------------------------

class MarinRelabeller(BaseRelabeller):
    """Align every draw to a pivot draw by the canonical scalar product.

    Parameters
    ----------
    pivot : Draw, optional
        Defaults to the draw with the highest log posterior.
    direction : {"max", "min"}, default="max"
        ``"max"`` picks the permutation with the largest inner product with
        the pivot (the closest in Euclidean distance); ``"min"`` keeps the
        literal argmin reading for comparison.
    """

    method = "marin"

    def __init__(self, pivot: Optional[Draw] = None, direction: str = "max"):
        self.pivot = pivot
        self.direction = direction

    def _fit_permutations(self, trace, data):
        if self.pivot is None:
            pivot_blocks = trace.blocks()[_pivot_index(trace, data, self.meta_)]
        else:
            if (self.pivot.spec.K, self.pivot.spec.d) != (trace.K, trace.d):
                raise DataFormatError("pivot is not structurally compatible with the trace")
            pivot_blocks = component_blocks(self.pivot.spec)
        self.pivot_blocks_ = pivot_blocks
        return scalar_product_permutations(trace.blocks(), pivot_blocks, self.direction), []


class _AllocationRelabeller(BaseRelabeller):

    def _allocations(self, trace: Trace, data: Optional[Dataset]) -> np.ndarray:
        if trace.allocations is not None:
            return trace.allocations
        if data is None:
            raise DataFormatError(
                f"{self.method} needs allocations: the trace has none and no dataset was "
                "given to derive them from")
        self.meta_["allocations"] = "derived"
        return derive_allocations(trace, data)

    def _reference(self, trace, data, allocations) -> np.ndarray:
        if self.reference_allocation is not None:
            return check_allocation(self.reference_allocation, allocations.shape[1], trace.K,
                                    "reference allocation")
        j = _pivot_index(trace, data, self.meta_)
        self.meta_["pivot_index"] = j
        if data is not None:
            self.meta_["reference_source"] = "plug-in allocation of pivot"
            return derive_allocation(trace[j], data)
        self.meta_["reference_source"] = "stored allocation of pivot"
        return allocations[j]


class CronWestRelabeller(_AllocationRelabeller):
    """Minimise the trace of the misclassification cost matrix.

    For each draw, ``C[h, c]`` counts observations with reference label
    ``h`` whose draw label is not ``c``; the assignment solver returns the
    label permutation with the smallest total cost.

    Parameters
    ----------
    reference_allocation : array of int, optional
        0-based reference labels.  Defaults to the plug-in allocation of the
        pivot draw when a dataset is passed to ``fit``, else the pivot's
        stored allocation.
    """

    method = "cron_west"

    def __init__(self, reference_allocation=None):
        self.reference_allocation = reference_allocation

    def _fit_permutations(self, trace, data):
        z = self._allocations(trace, data)
        ref = self._reference(trace, data, z)
        self.reference_allocation_ = ref
        N = match_counts(ref, z, trace.K)
        C = N.sum(axis=2, keepdims=True) - N
        self.cost_matrices_ = C
        return np.stack([hungarian(C[j]) for j in range(len(trace))]), []


class PapastamoulisRelabeller(_AllocationRelabeller):
    """Maximise agreement ``S(z, z*) = #{i : z_i = z*_i}`` with a pivot allocation.

    Parameters
    ----------
    reference_allocation : array of int, optional
        The pivot allocation ``z*``; same default as Cron-West.
    """

    method = "papastamoulis"

    def __init__(self, reference_allocation=None):
        self.reference_allocation = reference_allocation

    def _fit_permutations(self, trace, data):
        z = self._allocations(trace, data)
        ref = self._reference(trace, data, z)
        self.reference_allocation_ = ref
        return best_permutations(match_counts(ref, z, trace.K), maximize=True), []


# --------------------------------------------------------------------------
# k-means
# --------------------------------------------------------------------------

def lloyd_kmeans(X: np.ndarray, init: np.ndarray, max_iter: int = 300):
    """Lloyd iterations from fixed initial centroids.

    An empty cluster is re-seeded at the point farthest from its current
    centroid (lowest index on ties), which keeps the procedure deterministic.
    Returns ``(labels, centroids, n_iter)``.
    """
    centroids = np.array(init, dtype=float)
    K = centroids.shape[0]
    labels = None
    x_sq = np.einsum("ij,ij->i", X, X)
    for it in range(1, max_iter + 1):
        d2 = x_sq[:, None] - 2.0 * X @ centroids.T + np.einsum("kj,kj->k", centroids, centroids)
        new = np.argmin(d2, axis=1)
        counts = np.bincount(new, minlength=K)
        for k in np.flatnonzero(counts == 0):
            far = int(np.argmax(d2[np.arange(len(X)), new]))
            new[far] = k
            d2[far, :] = -np.inf
            counts = np.bincount(new, minlength=K)
        if labels is not None and np.array_equal(new, labels):
            return labels, centroids, it
        labels = new
        sums = np.zeros_like(centroids)
        np.add.at(sums, labels, X)
        centroids = sums / counts[:, None]
    return labels, centroids, max_iter


class FruhwirthSchnatterRelabeller(BaseRelabeller):
    """k-means clustering of all component vectors, initialised at the pivot.

    Every coordinate is standardised over the pooled ``M * K`` component
    vectors.  A draw whose K vectors land in K distinct clusters takes the
    induced permutation; any other draw is excluded.

    Parameters
    ----------
    max_iter : int, default=300
    pivot : Draw, optional
        Initial centroids; defaults to the highest-log-posterior draw.
    """

    method = "fs"

    def __init__(self, max_iter: int = 300, pivot: Optional[Draw] = None):
        self.max_iter = max_iter
        self.pivot = pivot

    def _fit_permutations(self, trace, data):
        M, K = len(trace), trace.K
        blocks = trace.blocks()
        p = blocks.shape[-1]
        pts = blocks.reshape(M * K, p)
        centre = pts.mean(axis=0)
        spread = pts.std(axis=0)
        spread[spread == 0] = 1.0
        Z = (pts - centre) / spread
        if self.pivot is None:
            init = Z.reshape(M, K, p)[_pivot_index(trace, data, self.meta_)]
        else:
            init = (component_blocks(self.pivot.spec) - centre) / spread
        labels, centroids, n_iter = lloyd_kmeans(Z, init, self.max_iter)
        labels = labels.reshape(M, K)
        ok = np.all(np.sort(labels, axis=1) == np.arange(K), axis=1)
        perms = np.tile(np.arange(K, dtype=np.intp), (M, 1))
        perms[ok] = np.argsort(labels[ok], axis=1)
        excluded = np.flatnonzero(~ok).tolist()
        self.labels_ = labels
        self.n_iter_ = n_iter
        self.meta_.update(kmeans_iterations=n_iter, excluded_fraction=len(excluded) / M)
        return perms, excluded


# --------------------------------------------------------------------------
# reference window
# --------------------------------------------------------------------------

def reference_window(trace: Trace, m: int, max_windows: Optional[int] = 500,
                     return_status: bool = False):
    """Start index of a length-``m`` window of modal, switch-free draws.

    Windows are tried in decreasing order of mean log posterior (at most
    ``max_windows`` of them).  A window passes when scalar-product
    alignment to its own best draw leaves every draw in it unpermuted.  If
    none passes, the top window is returned with a warning.
    """
    M = len(trace)
    if not 1 <= m <= M:
        raise DataFormatError(f"window length must satisfy 1 <= m <= M, got m={m}, M={M}")
    lp = trace.log_posterior
    if lp is None:
        warnings.warn("no log posterior available; using the first window", RuntimeWarning,
                      stacklevel=2)
        return (0, False) if return_status else 0
    csum = np.concatenate([[0.0], np.cumsum(lp)])
    means = (csum[m:] - csum[:-m]) / m
    order = np.argsort(-means, kind="stable")
    if max_windows is not None:
        order = order[:max_windows]
    blocks = trace.blocks()
    identity = np.arange(trace.K)
    for start in order:
        w = slice(int(start), int(start) + m)
        pivot = int(start) + int(np.argmax(lp[w]))
        perms = scalar_product_permutations(blocks[w], blocks[pivot])
        if np.all(perms == identity):
            return (int(start), True) if return_status else int(start)
    warnings.warn("no switch-free reference window found; falling back to the window "
                  "with the highest mean log posterior", RuntimeWarning, stacklevel=2)
    return (int(order[0]), False) if return_status else int(order[0])


# --------------------------------------------------------------------------
# functional interface
# --------------------------------------------------------------------------

def relabel_celeux(trace, m: int = 100) -> RelabelResult:
    return CeleuxRelabeller(m=m).result(trace)


def relabel_fs(trace, data: Optional[Dataset] = None) -> RelabelResult:
    return FruhwirthSchnatterRelabeller().result(trace, data=data)


def relabel_marin(trace, pivot: Optional[Draw] = None, direction: str = "max",
                  data: Optional[Dataset] = None) -> RelabelResult:
    return MarinRelabeller(pivot=pivot, direction=direction).result(trace, data=data)


def relabel_cron_west(trace, reference_allocation=None,
                      data: Optional[Dataset] = None) -> RelabelResult:
    return CronWestRelabeller(reference_allocation).result(trace, data=data)


def relabel_papastamoulis(trace, pivot_allocation=None,
                          data: Optional[Dataset] = None) -> RelabelResult:
    return PapastamoulisRelabeller(pivot_allocation).result(trace, data=data)


def relabel_minvar(trace, m: int = 100, window: str = "auto") -> RelabelResult:
    return MinimumVarianceRelabeller(m=m, window=window).result(trace)


RELABELLERS = {
    "celeux": CeleuxRelabeller,
    "fs": FruhwirthSchnatterRelabeller,
    "marin": MarinRelabeller,
    "cron_west": CronWestRelabeller,
    "papastamoulis": PapastamoulisRelabeller,
    "minvar": MinimumVarianceRelabeller,
}


def make_relabeller(method: str, m: int = 100, marin_direction: str = "max") -> BaseRelabeller:
    """Build a relabeller by registry name with the CLI's settings."""
    if method not in RELABELLERS:
        raise DataFormatError(f"unknown method {method!r}; choose from {', '.join(RELABELLERS)}")
    if method in ("celeux", "minvar"):
        return RELABELLERS[method](m=m)
    if method == "marin":
        return MarinRelabeller(direction=marin_direction)
    return RELABELLERS[method]()
