"""Finite Gaussian mixtures, MCMC draws and traces.

Permutations are 0-based integer arrays ``nu`` of length K.  Applying ``nu``
to a draw puts the input's component block ``nu[k]`` at output position
``k``; allocation values move through the inverse so that parameters and
memberships stay consistent.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from .exceptions import DataFormatError, DimensionError, NumericalError

SPD_TOL = 1e-10
WEIGHT_TOL = 1e-12
LOG_2PI = np.log(2.0 * np.pi)


# --------------------------------------------------------------------------
# permutations
# --------------------------------------------------------------------------

def check_permutation(nu, K: Optional[int] = None) -> np.ndarray:
    nu = np.asarray(nu)
    if nu.ndim != 1 or not np.issubdtype(nu.dtype, np.integer):
        raise DataFormatError(f"permutation must be a 1-D integer vector, got {nu!r}")
    if K is not None and nu.shape[0] != K:
        raise DimensionError(K, nu.shape[0], "permutation length")
    if not np.array_equal(np.sort(nu), np.arange(nu.shape[0])):
        raise DataFormatError(f"{nu.tolist()} is not a permutation of 0..{nu.shape[0] - 1}")
    return nu.astype(np.intp)


def identity_permutation(K: int) -> np.ndarray:
    return np.arange(K, dtype=np.intp)


def inverse(nu) -> np.ndarray:
    return np.argsort(check_permutation(nu)).astype(np.intp)


def compose(rho, nu) -> np.ndarray:
    """Permutation equivalent to applying ``nu`` first and then ``rho``."""
    rho = check_permutation(rho)
    nu = check_permutation(nu, rho.shape[0])
    return nu[rho]


# --------------------------------------------------------------------------
# mixture specification
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ComponentParams:
    """Mean and scale of one normal component.

    ``scale`` is the variance when ``d == 1`` and the covariance matrix
    otherwise.
    """

    mean: np.ndarray
    scale: object

    @property
    def d(self) -> int:
        return int(np.asarray(self.mean).reshape(-1).shape[0])

    def covariance(self) -> np.ndarray:
        return np.asarray(self.scale, dtype=float).reshape(self.d, self.d)


def _check_covariances(covs: np.ndarray, where: str = "") -> None:
    if not np.all(np.isfinite(covs)):
        raise DataFormatError(f"non-finite covariance entries{where}")
    if not np.allclose(covs, np.swapaxes(covs, -1, -2), rtol=0.0, atol=1e-12):
        raise DataFormatError(f"covariance matrices must be symmetric{where}")
    eig = np.linalg.eigvalsh(covs)
    bad = eig.min(axis=-1) <= SPD_TOL
    if np.any(bad):
        idx = np.argwhere(bad)
        raise DataFormatError(
            f"covariance not positive definite (min eigenvalue <= {SPD_TOL}) "
            f"at index {tuple(idx[0])}{where}")


@dataclass(frozen=True, eq=False)
class MixtureSpec:
    """Weights, means (K, d) and covariances (K, d, d) of a normal mixture."""

    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).reshape(-1)
        means = np.array(self.means, dtype=float)
        K = w.shape[0]
        if K < 1:
            raise DataFormatError("a mixture needs at least one component")
        if means.ndim == 1:
            means = means.reshape(K, -1)
        if means.shape[0] != K:
            raise DimensionError(K, means.shape[0], "number of component means")
        d = means.shape[1]
        covs = np.array(self.covs, dtype=float)
        if d == 1 and covs.size == K:
            covs = covs.reshape(K, 1, 1)
        if covs.shape != (K, d, d):
            raise DimensionError((K, d, d), covs.shape, "covariance shape")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise DataFormatError(f"weights must be finite and non-negative, got {w}")
        if abs(w.sum() - 1.0) > WEIGHT_TOL:
            raise DataFormatError(f"weights must sum to 1, got sum {w.sum()!r}")
        if not np.all(np.isfinite(means)):
            raise DataFormatError("non-finite component means")
        _check_covariances(covs)
        for name, arr in (("weights", w), ("means", means), ("covs", covs)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def univariate(cls, weights, means, variances) -> "MixtureSpec":
        return cls(weights, np.asarray(means, float).reshape(-1, 1), variances)

    @classmethod
    def from_components(cls, weights, components: Sequence[ComponentParams]) -> "MixtureSpec":
        ds = {c.d for c in components}
        if len(ds) != 1:
            raise DataFormatError(f"components disagree on dimension: {sorted(ds)}")
        means = np.stack([np.asarray(c.mean, float).reshape(-1) for c in components])
        covs = np.stack([c.covariance() for c in components])
        return cls(weights, means, covs)

    @property
    def K(self) -> int:
        return self.weights.shape[0]

    @property
    def d(self) -> int:
        return self.means.shape[1]

    @property
    def components(self) -> list:
        if self.d == 1:
            return [ComponentParams(m.copy(), float(c[0, 0]))
                    for m, c in zip(self.means, self.covs)]
        return [ComponentParams(m.copy(), c.copy()) for m, c in zip(self.means, self.covs)]

    @property
    def n_params(self) -> int:
        return self.K * block_size(self.d)

    def __eq__(self, other):
        if not isinstance(other, MixtureSpec):
            return NotImplemented
        return (np.array_equal(self.weights, other.weights)
                and np.array_equal(self.means, other.means)
                and np.array_equal(self.covs, other.covs))

    __hash__ = None

    def __repr__(self):
        return f"MixtureSpec(K={self.K}, d={self.d}, weights={np.round(self.weights, 4).tolist()})"


# --------------------------------------------------------------------------
# flattening
# --------------------------------------------------------------------------

def n_scale_entries(d: int) -> int:
    return d * (d + 1) // 2


def block_size(d: int) -> int:
    """Length of one flattened (weight, mean, lower-triangle) block."""
    return 1 + d + n_scale_entries(d)


def _blocks_from_arrays(weights, means, covs) -> np.ndarray:
    d = means.shape[-1]
    rows, cols = np.tril_indices(d)
    tri = covs[..., rows, cols]
    return np.concatenate([weights[..., None], means, tri], axis=-1)


def _arrays_from_blocks(blocks: np.ndarray, d: int):
    blocks = np.asarray(blocks, dtype=float)
    if blocks.shape[-1] != block_size(d):
        raise DimensionError(block_size(d), blocks.shape[-1], "block length")
    weights = blocks[..., 0]
    means = blocks[..., 1:1 + d]
    tri = blocks[..., 1 + d:]
    covs = np.zeros(blocks.shape[:-1] + (d, d))
    rows, cols = np.tril_indices(d)
    covs[..., rows, cols] = tri
    covs[..., cols, rows] = tri
    return weights, means, covs


def component_blocks(spec: MixtureSpec) -> np.ndarray:
    """(K, block_size) matrix whose rows are the flattened components."""
    return _blocks_from_arrays(spec.weights, spec.means, spec.covs)


def flatten(spec: MixtureSpec) -> np.ndarray:
    return component_blocks(spec).reshape(-1)


def unflatten(vector, K: int, d: int) -> MixtureSpec:
    vector = np.asarray(vector, dtype=float)
    if vector.shape != (K * block_size(d),):
        raise DimensionError(K * block_size(d), vector.shape, "flattened length")
    w, m, c = _arrays_from_blocks(vector.reshape(K, block_size(d)), d)
    return MixtureSpec(w, m, c)


# --------------------------------------------------------------------------
# densities
# --------------------------------------------------------------------------

def as_points(x, d: int):
    """Coerce ``x`` to an (n, d) array; also report whether it was one point."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        if d != 1:
            raise DimensionError(d, 1)
        return arr.reshape(1, 1), True
    if arr.ndim == 1:
        if d == 1:
            return arr.reshape(-1, 1), False
        if arr.shape[0] != d:
            raise DimensionError(d, arr.shape[0])
        return arr.reshape(1, d), True
    if arr.ndim == 2:
        if arr.shape[1] != d:
            raise DimensionError(d, arr.shape[1])
        return arr, False
    raise DataFormatError(f"points must be at most 2-D, got shape {arr.shape}")


def normal_logpdf(X: np.ndarray, means: np.ndarray, covs: np.ndarray) -> np.ndarray:
    """Log normal densities of points X (n, d) under K components -> (n, K)."""
    d = X.shape[1]
    chol = np.linalg.cholesky(covs)
    logdet = 2.0 * np.log(np.diagonal(chol, axis1=-2, axis2=-1)).sum(axis=-1)
    diff = X[None, :, :] - means[:, None, :]                    # (K, n, d)
    sol = np.linalg.solve(chol, np.swapaxes(diff, 1, 2))        # (K, d, n)
    maha = np.einsum("kdn,kdn->kn", sol, sol)
    return (-0.5 * (d * LOG_2PI + logdet[:, None] + maha)).T


def weighted_log_densities(spec: MixtureSpec, X: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        logw = np.log(spec.weights)
    return normal_logpdf(X, spec.means, spec.covs) + logw[None, :]


def mixture_logpdf(spec: MixtureSpec, x):
    X, single = as_points(x, spec.d)
    out = logsumexp(weighted_log_densities(spec, X), axis=1)
    return float(out[0]) if single else out


def mixture_pdf(spec: MixtureSpec, x):
    """Mixture density at one point (returns float) or at each row of ``x``."""
    out = np.exp(mixture_logpdf(spec, x))
    return float(out) if np.ndim(out) == 0 else out


def allocation_probabilities(spec: MixtureSpec, x) -> np.ndarray:
    """Posterior membership probabilities, computed in log space.

    Returns a length-K vector for a single point, else an (n, K) matrix.
    """
    X, single = as_points(x, spec.d)
    if not np.all(np.isfinite(X)):
        raise NumericalError("non-finite observation; membership probabilities undefined")
    logp = weighted_log_densities(spec, X)
    top = logp.max(axis=1, keepdims=True)
    if not np.all(np.isfinite(top)):
        raise NumericalError(
            "all component densities vanished; evaluate in log space with a wider "
            "floating range or check the inputs")
    p = np.exp(logp - top)
    p /= p.sum(axis=1, keepdims=True)
    return p[0] if single else p


def map_allocation(spec: MixtureSpec, X) -> np.ndarray:
    """Plug-in allocation: most probable component per point, lowest index on ties."""
    X, _ = as_points(X, spec.d)
    return np.argmax(allocation_probabilities(spec, X), axis=1).astype(np.intp)


# --------------------------------------------------------------------------
# draws, traces, datasets
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Draw:
    iter: int
    spec: MixtureSpec
    allocation: Optional[np.ndarray] = None
    log_posterior: Optional[float] = None

    def __post_init__(self):
        if self.allocation is not None:
            z = np.array(self.allocation, dtype=np.intp).reshape(-1)
            if z.size and (z.min() < 0 or z.max() >= self.spec.K):
                raise DataFormatError(f"allocation values must lie in 0..{self.spec.K - 1}")
            z.setflags(write=False)
            object.__setattr__(self, "allocation", z)

    def __eq__(self, other):
        if not isinstance(other, Draw):
            return NotImplemented
        za, zb = self.allocation, other.allocation
        same_z = (za is None and zb is None) or (
            za is not None and zb is not None and np.array_equal(za, zb))
        return (self.iter == other.iter and self.spec == other.spec and same_z
                and self.log_posterior == other.log_posterior)

    __hash__ = None


def apply_permutation(draw: Draw, nu) -> Draw:
    nu = check_permutation(nu, draw.spec.K)
    spec = draw.spec
    new_spec = MixtureSpec(spec.weights[nu], spec.means[nu], spec.covs[nu])
    z = None if draw.allocation is None else inverse(nu)[draw.allocation]
    return Draw(draw.iter, new_spec, z, draw.log_posterior)


@dataclass(eq=False)
class Trace:
    """Sequence of M mixture draws stored as stacked arrays.

    Parameters
    ----------
    weights : (M, K) array
    means : (M, K, d) array
    covs : (M, K, d, d) array
    allocations : (M, n) integer array, optional
        0-based component memberships.
    log_posterior : (M,) array, optional
    iters : (M,) integer array, optional
        Defaults to ``0..M-1``.
    """

    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    allocations: Optional[np.ndarray] = None
    log_posterior: Optional[np.ndarray] = None
    iters: Optional[np.ndarray] = None
    dataset_id: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.ndim != 2:
            raise DataFormatError(f"weights must be (M, K), got shape {self.weights.shape}")
        M, K = self.weights.shape
        self.means = np.asarray(self.means, dtype=float)
        if self.means.ndim == 2:
            self.means = self.means[..., None]
        d = self.means.shape[-1]
        if self.means.shape != (M, K, d):
            raise DimensionError((M, K, d), self.means.shape, "means shape")
        covs = np.asarray(self.covs, dtype=float)
        if d == 1 and covs.shape == (M, K):
            covs = covs[..., None, None]
        if covs.shape != (M, K, d, d):
            raise DimensionError((M, K, d, d), covs.shape, "covariance shape")
        self.covs = covs
        if self.allocations is not None:
            z = np.asarray(self.allocations)
            if z.ndim != 2 or z.shape[0] != M:
                raise DimensionError((M, "n"), z.shape, "allocations shape")
            if z.size and (z.min() < 0 or z.max() >= K):
                raise DataFormatError(f"allocation values must lie in 0..{K - 1}")
            self.allocations = z.astype(np.intp)
        if self.log_posterior is not None:
            self.log_posterior = np.asarray(self.log_posterior, dtype=float).reshape(-1)
            if self.log_posterior.shape != (M,):
                raise DimensionError(M, self.log_posterior.shape[0], "log_posterior length")
        if self.iters is None:
            self.iters = np.arange(M, dtype=np.int64)
        else:
            self.iters = np.asarray(self.iters, dtype=np.int64).reshape(-1)
            if self.iters.shape != (M,):
                raise DimensionError(M, self.iters.shape[0], "iters length")
            if M > 1 and np.any(np.diff(self.iters) <= 0):
                raise DataFormatError("trace iterations must be strictly increasing")

    def validate(self) -> "Trace":
        """Check weights and covariances of every draw; raises on the first bad one."""
        bad = np.abs(self.weights.sum(axis=1) - 1.0) > 1e-9
        if np.any(bad) or np.any(self.weights < 0):
            j = int(np.argmax(bad | np.any(self.weights < 0, axis=1)))
            raise DataFormatError(
                f"draw {j} (iter {self.iters[j]}): invalid weights {self.weights[j]}")
        if len(self):
            _check_covariances(self.covs, " in trace")
        return self

    # shape ---------------------------------------------------------------
    def __len__(self) -> int:
        return self.weights.shape[0]

    @property
    def M(self) -> int:
        return len(self)

    @property
    def K(self) -> int:
        return self.weights.shape[1]

    @property
    def d(self) -> int:
        return self.means.shape[2]

    @property
    def n(self) -> Optional[int]:
        return None if self.allocations is None else self.allocations.shape[1]

    @property
    def q(self) -> int:
        return self.K * block_size(self.d)

    # access --------------------------------------------------------------
    def spec(self, j: int) -> MixtureSpec:
        return MixtureSpec(self.weights[j], self.means[j], self.covs[j])

    def __getitem__(self, j: int) -> Draw:
        z = None if self.allocations is None else self.allocations[j]
        lp = None if self.log_posterior is None else float(self.log_posterior[j])
        return Draw(int(self.iters[j]), self.spec(j), z, lp)

    def __iter__(self) -> Iterator[Draw]:
        for j in range(len(self)):
            yield self[j]

    @property
    def draws(self) -> list:
        return list(self)

    def blocks(self) -> np.ndarray:
        """(M, K, block_size) flattened component blocks."""
        return _blocks_from_arrays(self.weights, self.means, self.covs)

    def flat(self) -> np.ndarray:
        """(M, q) flattened parameter vectors."""
        return self.blocks().reshape(len(self), -1)

    # construction --------------------------------------------------------
    @classmethod
    def from_draws(cls, draws: Sequence[Draw], dataset_id: str = "", meta=None) -> "Trace":
        if not draws:
            raise DataFormatError("cannot build a trace from zero draws")
        zs = [dr.allocation for dr in draws]
        if any(z is None for z in zs) and not all(z is None for z in zs):
            raise DataFormatError("draws disagree on whether allocations are present")
        lps = [dr.log_posterior for dr in draws]
        if any(lp is None for lp in lps) and not all(lp is None for lp in lps):
            raise DataFormatError("draws disagree on whether log posteriors are present")
        shapes = {(dr.spec.K, dr.spec.d) for dr in draws}
        if len(shapes) != 1:
            raise DataFormatError(f"draws are not structurally homogeneous: {sorted(shapes)}")
        return cls(
            weights=np.stack([dr.spec.weights for dr in draws]),
            means=np.stack([dr.spec.means for dr in draws]),
            covs=np.stack([dr.spec.covs for dr in draws]),
            allocations=None if zs[0] is None else np.stack(zs),
            log_posterior=None if lps[0] is None else np.array(lps, dtype=float),
            iters=np.array([dr.iter for dr in draws]),
            dataset_id=dataset_id,
            meta=dict(meta or {}),
        )

    @classmethod
    def from_blocks(cls, blocks, d: int, **kwargs) -> "Trace":
        w, m, c = _arrays_from_blocks(blocks, d)
        return cls(w, m, c, **kwargs)

    def _replace(self, **changes) -> "Trace":
        fields = dict(weights=self.weights, means=self.means, covs=self.covs,
                      allocations=self.allocations, log_posterior=self.log_posterior,
                      iters=self.iters, dataset_id=self.dataset_id, meta=dict(self.meta))
        fields.update(changes)
        return Trace(**fields)

    def subset(self, index) -> "Trace":
        index = np.asarray(index)
        return self._replace(
            weights=self.weights[index], means=self.means[index], covs=self.covs[index],
            allocations=None if self.allocations is None else self.allocations[index],
            log_posterior=None if self.log_posterior is None else self.log_posterior[index],
            iters=self.iters[index])

    def permute(self, perms) -> "Trace":
        """Apply one permutation per draw; ``perms`` is (M, K) or a single (K,)."""
        perms = np.asarray(perms, dtype=np.intp)
        M, K = self.weights.shape
        if perms.shape == (K,):
            perms = np.broadcast_to(perms, (M, K))
        if perms.shape != (M, K):
            raise DimensionError((M, K), perms.shape, "permutation array shape")
        if not np.all(np.sort(perms, axis=1) == np.arange(K)):
            raise DataFormatError("every row of perms must be a permutation of 0..K-1")
        rows = np.arange(M)[:, None]
        z = self.allocations
        if z is not None:
            z = np.take_along_axis(np.argsort(perms, axis=1), z, axis=1)
        return self._replace(weights=self.weights[rows, perms], means=self.means[rows, perms],
                             covs=self.covs[rows, perms], allocations=z)

    def with_allocations(self, allocations) -> "Trace":
        return self._replace(allocations=allocations)


@dataclass(eq=False)
class Dataset:
    """Observations (n, d) with optional ground truth."""

    points: np.ndarray
    true_allocation: Optional[np.ndarray] = None
    true_spec: Optional[MixtureSpec] = None
    dataset_id: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1)
        if pts.ndim != 2 or pts.shape[1] < 1:
            raise DataFormatError(f"points must be an (n, d) array, got shape {pts.shape}")
        self.points = pts
        if self.true_spec is not None and self.true_spec.d != pts.shape[1]:
            raise DimensionError(pts.shape[1], self.true_spec.d, "true spec dimension")
        if self.true_allocation is not None:
            z = np.asarray(self.true_allocation, dtype=np.intp).reshape(-1)
            if z.shape[0] != pts.shape[0]:
                raise DimensionError(pts.shape[0], z.shape[0], "true allocation length")
            too_big = self.true_spec is not None and z.max() >= self.true_spec.K
            if z.size and (z.min() < 0 or too_big):
                raise DataFormatError("true allocation values out of range")
            self.true_allocation = z

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    @property
    def K_true(self) -> Optional[int]:
        if self.true_spec is not None:
            return self.true_spec.K
        if self.true_allocation is not None:
            return int(self.true_allocation.max()) + 1
        return None
