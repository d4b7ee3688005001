"""Comparison metrics for relabelled traces and the Gelman-Rubin monitor."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import trapezoid

from .exceptions import DataFormatError, DimensionError, NumericalError
from .model import Dataset, MixtureSpec, Trace, block_size, mixture_logpdf
from .relabel.assignment import hungarian
from .relabel.base import RelabelResult, derive_allocations
from .relabel.moments import RunningMoments
from .sampler import draw_points, make_rng

LOG_Q_FLOOR = np.log(1e-300)


def _as_trace(result) -> Trace:
    if isinstance(result, RelabelResult):
        return result.relabelled
    if isinstance(result, Trace):
        return result
    raise DataFormatError(f"expected RelabelResult or Trace, got {type(result).__name__}")


# --------------------------------------------------------------------------
# posterior summaries
# --------------------------------------------------------------------------

@dataclass
class PosteriorSummary:
    """Coordinate-wise posterior mean and sample variance of a relabelled trace."""

    K: int
    d: int
    mean: np.ndarray
    var: np.ndarray
    count: int

    @property
    def total_variance(self) -> float:
        return float(self.var.sum())

    def block_means(self) -> np.ndarray:
        return self.mean.reshape(self.K, block_size(self.d))

    def block_vars(self) -> np.ndarray:
        return self.var.reshape(self.K, block_size(self.d))

    def mean_spec(self) -> MixtureSpec:
        """Mixture at the posterior mean parameters (weights renormalised)."""
        b = self.block_means()
        d = self.d
        w = b[:, 0] / b[:, 0].sum()
        rows, cols = np.tril_indices(d)
        covs = np.zeros((self.K, d, d))
        covs[:, rows, cols] = b[:, 1 + d:]
        covs[:, cols, rows] = b[:, 1 + d:]
        return MixtureSpec(w, b[:, 1:1 + d], covs)


def posterior_summary(result, streaming: bool = False) -> PosteriorSummary:
    """Mean and unbiased variance of every flattened coordinate over retained draws.

    ``streaming=True`` accumulates with :class:`RunningMoments` instead of
    the two-pass formula; both agree to rounding error.
    """
    trace = _as_trace(result)
    if len(trace) == 0:
        raise DataFormatError("cannot summarise an empty trace")
    flat = trace.flat()
    if streaming:
        acc = RunningMoments.from_samples(flat[:1])
        for row in flat[1:]:
            acc.update(row)
        mean, var = acc.mean, acc.var
    else:
        mean = flat.mean(axis=0)
        var = flat.var(axis=0, ddof=1) if len(flat) > 1 else np.zeros(flat.shape[1])
    return PosteriorSummary(trace.K, trace.d, mean, var, len(flat))


def match_to_reference(estimate: MixtureSpec, reference: MixtureSpec) -> np.ndarray:
    """Label permutation aligning ``estimate``'s components with ``reference``'s.

    Returns ``nu`` such that estimate component ``nu[k]`` is matched with
    reference component ``k``, minimising the summed squared distance
    between component means.
    """
    if (estimate.K, estimate.d) != (reference.K, reference.d):
        raise DimensionError((reference.K, reference.d), (estimate.K, estimate.d),
                             "(components, dimension)")
    diff = reference.means[:, None, :] - estimate.means[None, :, :]
    return hungarian((diff ** 2).sum(axis=-1))


# --------------------------------------------------------------------------
# misclassification
# --------------------------------------------------------------------------

@dataclass
class Misclassification:
    """Confusion counts with inferred labels matched to the true ones.

    ``matrix[i, j]`` counts observations of true component ``i`` assigned to
    the inferred label matched with true component ``j`` (extra inferred
    labels, if any, follow the matched ones).  ``label_map[j]`` is the
    original inferred label shown in column ``j``.
    """

    matrix: np.ndarray
    rate: float
    label_map: np.ndarray
    point_labels: np.ndarray


def majority_labels(allocations: np.ndarray, K: int) -> np.ndarray:
    """Most frequent label per observation across draws; lowest label on ties."""
    M, n = allocations.shape
    counts = np.zeros((n, K), dtype=np.int64)
    for k in range(K):
        counts[:, k] = (allocations == k).sum(axis=0)
    return np.argmax(counts, axis=1).astype(np.intp)


def confusion(true_labels: np.ndarray, labels: np.ndarray, K_true: int,
              K: int) -> Misclassification:
    raw = np.zeros((K_true, K), dtype=np.int64)
    np.add.at(raw, (true_labels, labels), 1)
    size = max(K_true, K)
    padded = np.zeros((size, size))
    padded[:K_true, :K] = raw
    nu = hungarian(-padded)
    matched_cols = [c for c in nu if c < K]
    rest = [c for c in range(K) if c not in matched_cols]
    order = np.array(matched_cols + rest, dtype=np.intp)
    matrix = raw[:, order]
    diag = sum(int(matrix[i, i]) for i in range(min(K_true, K)))
    n = int(raw.sum())
    return Misclassification(matrix, 1.0 - diag / n, order, labels)


def misclassification(result, data: Dataset) -> Misclassification:
    """Majority-vote classification of each observation, matched to the truth."""
    if data.true_allocation is None:
        raise DataFormatError("dataset has no true allocation; misclassification undefined")
    trace = _as_trace(result)
    z = trace.allocations
    if z is None:
        z = derive_allocations(trace, data)
    if z.shape[1] != data.n:
        raise DimensionError(data.n, z.shape[1], "allocation length")
    labels = majority_labels(z, trace.K)
    return confusion(data.true_allocation, labels, data.K_true, trace.K)


# --------------------------------------------------------------------------
# KL distance
# --------------------------------------------------------------------------

@dataclass
class KLConfig:
    grid_points: int = 10001
    grid_width: float = 5.0
    mc_draws: int = 100000
    seed: int = 0


def _grid(p: MixtureSpec, q: MixtureSpec, cfg: KLConfig) -> np.ndarray:
    means = np.concatenate([p.means[:, 0], q.means[:, 0]])
    sd = np.sqrt(max(p.covs.max(), q.covs.max()))
    return np.linspace(means.min() - cfg.grid_width * sd, means.max() + cfg.grid_width * sd,
                       cfg.grid_points)


def kl_distance(reference: MixtureSpec, estimate: MixtureSpec,
                config: Optional[KLConfig] = None) -> float:
    """KL(reference || estimate).

    Univariate: trapezoid rule of ``p log(p/q)`` on a uniform grid covering
    every component mean +- ``grid_width`` largest standard deviations.
    Multivariate: Monte Carlo average of ``log p - log q`` over seeded
    draws from the reference.  ``q`` is floored at 1e-300 inside the log.
    """
    cfg = config or KLConfig()
    if reference.d != estimate.d:
        raise DimensionError(reference.d, estimate.d, "density dimension")
    if reference.d == 1:
        x = _grid(reference, estimate, cfg)
        logp = mixture_logpdf(reference, x)
        logq = np.maximum(mixture_logpdf(estimate, x), LOG_Q_FLOOR)
        p = np.exp(logp)
        value = float(trapezoid(p * (logp - logq), x))
    else:
        rng = make_rng(cfg.seed)
        z = rng.choice(reference.K, size=cfg.mc_draws, p=reference.weights)
        X = draw_points(reference, z.astype(np.intp), rng)
        logq = np.maximum(mixture_logpdf(estimate, X), LOG_Q_FLOOR)
        value = float(np.mean(mixture_logpdf(reference, X) - logq))
    if not np.isfinite(value):
        raise NumericalError("KL estimate is not finite")
    if value < -1e-9:
        raise NumericalError(f"KL estimate {value:.3g} is negative beyond quadrature error")
    return max(value, 0.0)


def density_curves(specs: dict, x) -> dict:
    """Evaluate several univariate mixture densities on a common grid."""
    x = np.asarray(x, dtype=float)
    return {name: np.exp(mixture_logpdf(spec, x)) for name, spec in specs.items()}


# --------------------------------------------------------------------------
# Gelman-Rubin
# --------------------------------------------------------------------------

@dataclass
class RhatReport:
    W: np.ndarray
    B: np.ndarray
    var_hat: np.ndarray
    rhat: np.ndarray
    n_chains: int
    chain_length: int
    coordinates: np.ndarray = field(default=None)

    @property
    def max_rhat(self) -> float:
        finite = self.rhat[np.isfinite(self.rhat)]
        return float(finite.max()) if finite.size else float("nan")


def _chain_moments(chain):
    if isinstance(chain, RunningMoments):
        return chain.mean, chain.var, chain.count
    if isinstance(chain, (RelabelResult, Trace)):
        flat = _as_trace(chain).flat()
    else:
        flat = np.asarray(chain, dtype=float)
        if flat.ndim == 1:
            flat = flat[:, None]
    return flat.mean(axis=0), flat.var(axis=0, ddof=1), flat.shape[0]


def gelman_rubin(chains: Sequence, coordinates=None) -> RhatReport:
    """Potential scale reduction factor per coordinate.

    ``chains`` may hold RelabelResults, Traces, (M, q) arrays or
    RunningMoments.  With chain length ``M`` and ``J`` chains::

        W = mean of within-chain variances
        B = M / (J - 1) * sum_j (chain mean_j - grand mean)**2
        var_hat = (M - 1) / M * W + B / M
        R = sqrt(var_hat / W)

    Coordinates with ``W == 0`` get ``R = nan``.
    """
    if len(chains) < 2:
        raise DataFormatError(f"Gelman-Rubin needs at least 2 chains, got {len(chains)}")
    stats = [_chain_moments(c) for c in chains]
    lengths = {s[2] for s in stats}
    if len(lengths) != 1:
        raise DataFormatError(f"chains must have equal lengths, got {sorted(lengths)}")
    M = lengths.pop()
    means = np.stack([s[0] for s in stats])
    variances = np.stack([s[1] for s in stats])
    if coordinates is not None:
        coordinates = np.asarray(coordinates)
        means, variances = means[:, coordinates], variances[:, coordinates]
    J = len(chains)
    W = variances.mean(axis=0)
    B = M / (J - 1) * ((means - means.mean(axis=0)) ** 2).sum(axis=0)
    var_hat = (M - 1) / M * W + B / M
    with np.errstate(divide="ignore", invalid="ignore"):
        rhat = np.where(W > 0, np.sqrt(var_hat / W), np.nan)
    coords = np.arange(means.shape[1]) if coordinates is None else coordinates
    return RhatReport(W, B, var_hat, rhat, J, M, coords)


# --------------------------------------------------------------------------
# timing and reports
# --------------------------------------------------------------------------

def timing(fn: Callable, *args, **kwargs):
    """Call ``fn`` and return ``(value, seconds)`` from a monotonic clock."""
    start = time.perf_counter()
    value = fn(*args, **kwargs)
    return value, time.perf_counter() - start


@dataclass
class DiagnosticsReport:
    method: str
    kl: float
    misclassification_rate: float
    total_variance: float
    time_seconds: float
    summary: PosteriorSummary
    misclassification: Optional[Misclassification] = None
    excluded_fraction: float = 0.0


def diagnose(result: RelabelResult, data: Optional[Dataset] = None,
             reference: Optional[MixtureSpec] = None,
             kl_config: Optional[KLConfig] = None) -> DiagnosticsReport:
    """All Table-style metrics for one relabelling result.

    ``reference`` is the density KL is measured from; it defaults to the
    dataset's true mixture.  Metrics that need missing inputs are NaN.
    """
    summary = posterior_summary(result)
    if reference is None and data is not None:
        reference = data.true_spec
    kl = float("nan")
    if reference is not None:
        kl = kl_distance(reference, summary.mean_spec(), kl_config)
    mis = None
    rate = float("nan")
    if data is not None and data.true_allocation is not None:
        mis = misclassification(result, data)
        rate = mis.rate
    n_in = len(result.permutations)
    excl = len(result.excluded) / n_in if n_in else 0.0
    return DiagnosticsReport(result.method, kl, rate, summary.total_variance,
                             result.wall_time, summary, mis, excl)
