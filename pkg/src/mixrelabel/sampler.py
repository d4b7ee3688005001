"""Data generators and data-augmentation Gibbs samplers for normal mixtures.

All randomness comes from a Philox counter-based generator seeded
explicitly, so every function here is a deterministic function of its
arguments.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.special import gammaln
from scipy.stats import invwishart
from sklearn.base import BaseEstimator

from .exceptions import DataFormatError
from .model import Dataset, MixtureSpec, Trace, normal_logpdf

logger = logging.getLogger(__name__)


def make_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(seed))


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------

@dataclass
class PriorSpec:
    """Hyperparameters for one of the two supported prior families.

    ``univariate-RG``: ``mu_k ~ N(xi, 1/kappa)``, ``1/sigma_k^2 ~ Gamma(alpha, beta)``,
    ``beta ~ Gamma(g, h)``, ``w ~ Dirichlet(delta)`` (rates, not scales).

    ``multivariate-conjugate``: ``mu_k | Sigma_k ~ N(0, tau Sigma_k)``,
    ``Sigma_k ~ IW(nu0, psi)``, ``w ~ Dirichlet(delta)``.
    """

    family: str
    xi: float = 0.0
    kappa: float = 1.0
    alpha: float = 2.0
    g: float = 0.2
    h: float = 10.0
    tau: float = 100.0
    nu0: float = 3.0
    psi: Optional[np.ndarray] = None
    delta: float = 1.0

    def __post_init__(self):
        if self.family not in ("univariate-RG", "multivariate-conjugate"):
            raise DataFormatError(f"unknown prior family {self.family!r}")
        if self.delta <= 0:
            raise DataFormatError("Dirichlet parameter must be positive")
        if self.family == "univariate-RG":
            if min(self.kappa, self.alpha, self.g, self.h) <= 0:
                raise DataFormatError("kappa, alpha, g and h must be positive")
        else:
            if self.tau <= 0:
                raise DataFormatError("tau must be positive")
            if self.psi is None:
                raise DataFormatError("multivariate prior needs a scale matrix psi")
            self.psi = np.atleast_2d(np.asarray(self.psi, dtype=float))
            d = self.psi.shape[0]
            if self.nu0 <= d - 1:
                raise DataFormatError(f"inverse-Wishart degrees {self.nu0} must exceed d-1={d - 1}")
            if np.linalg.eigvalsh(self.psi).min() <= 0:
                raise DataFormatError("psi must be symmetric positive definite")

    @classmethod
    def richardson_green(cls, points, **overrides) -> "PriorSpec":
        """Data-range defaults: xi = midrange, kappa = 1/R^2, h = 10/R^2."""
        x = np.asarray(points, dtype=float).reshape(-1)
        R = float(x.max() - x.min()) or 1.0
        params = dict(xi=float(x.min() + x.max()) / 2, kappa=1.0 / R ** 2, alpha=2.0,
                      g=0.2, h=10.0 / R ** 2, delta=1.0)
        params.update(overrides)
        return cls("univariate-RG", **params)

    @classmethod
    def conjugate(cls, d: int, tau: float = 100.0, nu0: float = 3.0, psi_scale: float = 1.5,
                  delta: float = 1.0) -> "PriorSpec":
        return cls("multivariate-conjugate", tau=tau, nu0=nu0,
                   psi=psi_scale * np.eye(d), delta=delta)

    def as_meta(self) -> dict:
        if self.family == "univariate-RG":
            keys = ("xi", "kappa", "alpha", "g", "h", "delta")
            return {"prior": self.family, **{f"prior_{k}": getattr(self, k) for k in keys}}
        return {"prior": self.family, "prior_tau": self.tau, "prior_nu0": self.nu0,
                "prior_psi": " ".join(repr(float(v)) for v in self.psi.ravel()),
                "prior_delta": self.delta}

    @classmethod
    def from_meta(cls, meta: dict) -> "PriorSpec":
        family = meta["prior"]
        if family == "univariate-RG":
            return cls(family, **{k: float(meta[f"prior_{k}"])
                                  for k in ("xi", "kappa", "alpha", "g", "h", "delta")})
        psi = np.array([float(v) for v in str(meta["prior_psi"]).split()])
        d = int(round(np.sqrt(psi.size)))
        return cls(family, tau=float(meta["prior_tau"]), nu0=float(meta["prior_nu0"]),
                   psi=psi.reshape(d, d), delta=float(meta["prior_delta"]))


@dataclass
class SamplerConfig:
    iterations: int
    burn_in: int
    seed: int
    K: int
    switch_injection: bool = False
    potts_kappa: Optional[float] = None
    lattice_dims: Optional[Tuple[int, int, int]] = None

    def __post_init__(self):
        if self.K < 1:
            raise DataFormatError("K must be at least 1")
        if not 0 <= self.burn_in < self.iterations:
            raise DataFormatError(
                f"need 0 <= burn_in < iterations, got burn_in={self.burn_in}, "
                f"iterations={self.iterations}")


@dataclass
class PottsConfig:
    dims: Tuple[int, int, int]
    K: int
    kappa: float
    sweeps: int
    seed: int = 0

    def __post_init__(self):
        self.dims = tuple(int(v) for v in self.dims)
        if len(self.dims) != 3 or min(self.dims) < 1:
            raise DataFormatError(f"lattice dims must be three positive integers, got {self.dims}")
        if self.kappa < 0:
            raise DataFormatError("kappa must be non-negative")
        if self.K < 1 or self.sweeps < 0:
            raise DataFormatError("need K >= 1 and sweeps >= 0")


# --------------------------------------------------------------------------
# data generation
# --------------------------------------------------------------------------

def _exact_counts(weights: np.ndarray, n: int) -> np.ndarray:
    raw = weights * n
    counts = np.floor(raw).astype(int)
    short = n - counts.sum()
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[:short]] += 1
    return counts


def draw_points(spec: MixtureSpec, z: np.ndarray, rng) -> np.ndarray:
    chol = np.linalg.cholesky(spec.covs)
    eps = rng.standard_normal((z.shape[0], spec.d))
    return spec.means[z] + np.einsum("nij,nj->ni", chol[z], eps)


def simulate_dataset(spec: MixtureSpec, n: int, seed=0, exact_counts: bool = False,
                     dataset_id: str = "") -> Dataset:
    """``n`` iid observations from ``spec`` with their true memberships.

    With ``exact_counts=True`` the component counts are fixed at the rounded
    expected counts ``w * n`` (largest remainder) and only their order and
    the observation values are random.
    """
    if n < 1:
        raise DataFormatError(f"need at least one observation, got n={n}")
    rng = make_rng(seed)
    if exact_counts:
        z = rng.permutation(np.repeat(np.arange(spec.K), _exact_counts(spec.weights, n)))
    else:
        z = rng.choice(spec.K, size=n, p=spec.weights)
    z = z.astype(np.intp)
    return Dataset(draw_points(spec, z, rng), z, spec, dataset_id,
                   {"seed": seed, "exact_counts": exact_counts})


def _neighbour_counts(z: np.ndarray, K: int) -> np.ndarray:
    """counts[..., k] = number of the 6 lattice neighbours carrying label k."""
    onehot = (z[..., None] == np.arange(K)).astype(np.int64)
    counts = np.zeros_like(onehot)
    for axis in range(3):
        lo = [slice(None)] * 4
        hi = [slice(None)] * 4
        lo[axis] = slice(0, -1)
        hi[axis] = slice(1, None)
        counts[tuple(lo)] += onehot[tuple(hi)]
        counts[tuple(hi)] += onehot[tuple(lo)]
    return counts


def _checkerboard(dims) -> np.ndarray:
    i, j, k = np.indices(dims)
    return (i + j + k) % 2


def _categorical(logits: np.ndarray, rng) -> np.ndarray:
    p = np.exp(logits - logits.max(axis=-1, keepdims=True))
    c = np.cumsum(p, axis=-1)
    u = rng.random(logits.shape[:-1] + (1,)) * c[..., -1:]
    return np.minimum((c < u).sum(axis=-1), logits.shape[-1] - 1)


def potts_sweep(z: np.ndarray, K: int, kappa: float, rng, log_lik=None) -> np.ndarray:
    """One full single-site Gibbs sweep, updating the two checkerboard colours in turn.

    Sites of one colour share no neighbours, so updating them together is
    the same as visiting them one at a time.  ``log_lik`` (dims + (K,))
    adds per-site data terms to the full conditional.
    """
    colour = _checkerboard(z.shape)
    for c in (0, 1):
        logits = kappa * _neighbour_counts(z, K)
        if log_lik is not None:
            logits = logits + log_lik
        mask = colour == c
        z[mask] = _categorical(logits[mask], rng)
    return z


def simulate_potts_allocation(cfg: PottsConfig) -> np.ndarray:
    """Labels on a 3-D lattice after ``cfg.sweeps`` Gibbs sweeps of the Potts model.

    Starts from iid uniform labels; neighbourhoods are the 6 face-adjacent
    sites with free boundaries.
    """
    rng = make_rng(cfg.seed)
    z = rng.integers(0, cfg.K, size=cfg.dims).astype(np.intp)
    for _ in range(cfg.sweeps):
        potts_sweep(z, cfg.K, cfg.kappa, rng)
    return z


def neighbour_agreement(z: np.ndarray) -> float:
    """Fraction of face-adjacent site pairs that share a label."""
    same = total = 0
    for axis in range(3):
        a = np.take(z, np.arange(z.shape[axis] - 1), axis=axis)
        b = np.take(z, np.arange(1, z.shape[axis]), axis=axis)
        same += int((a == b).sum())
        total += a.size
    return same / total if total else float("nan")


def simulate_spatial_dataset(spec: MixtureSpec, dims, kappa: float = 0.3, sweeps: int = 200,
                             seed=0, dataset_id: str = "") -> Dataset:
    """Potts-correlated labels on a lattice, then normal observations per site."""
    rng = make_rng(seed)
    lattice_seed = int(rng.integers(2 ** 63))
    z = simulate_potts_allocation(PottsConfig(dims, spec.K, kappa, sweeps, lattice_seed))
    z = z.reshape(-1)
    pts = draw_points(spec, z, rng)
    return Dataset(pts, z, spec, dataset_id,
                   {"seed": seed, "lattice_dims": ",".join(map(str, dims)), "kappa": kappa,
                    "sweeps": sweeps})


# --------------------------------------------------------------------------
# label-switch injection
# --------------------------------------------------------------------------

def random_permutations(M: int, K: int, seed) -> np.ndarray:
    rng = make_rng(seed)
    return np.argsort(rng.random((M, K)), axis=1).astype(np.intp)


def inject_label_switching(trace: Trace, seed=0, return_permutations: bool = False):
    """Apply an independent uniformly random permutation to every draw."""
    perms = random_permutations(len(trace), trace.K, seed)
    out = trace.permute(perms)
    out.meta["switch_injection_seed"] = seed
    return (out, perms) if return_permutations else out


# --------------------------------------------------------------------------
# log posteriors
# --------------------------------------------------------------------------

def _log_dirichlet(w: np.ndarray, delta: float) -> float:
    K = w.shape[-1]
    with np.errstate(divide="ignore"):
        return float(gammaln(K * delta) - K * gammaln(delta) + ((delta - 1) * np.log(w)).sum())


def _log_gamma_pdf(x, shape, rate):
    return shape * np.log(rate) - gammaln(shape) + (shape - 1) * np.log(x) - rate * x


def _loglik(X, weights, means, covs) -> float:
    with np.errstate(divide="ignore"):
        logw = np.log(weights)
    if X.shape[1] == 1:
        var = covs.reshape(-1)
        a = logw - 0.5 * np.log(2 * np.pi * var) - 0.5 * (X - means.reshape(-1)) ** 2 / var
    else:
        a = normal_logpdf(X, means, covs) + logw
    top = a.max(axis=1, keepdims=True)
    return float((top[:, 0] + np.log(np.exp(a - top).sum(axis=1))).sum())


def log_posterior_univariate(X, weights, means, variances, prior: PriorSpec,
                             beta: Optional[float] = None) -> float:
    """Unnormalised log posterior; ``beta`` defaults to its prior mean g/h."""
    if beta is None:
        beta = prior.g / prior.h
    means = np.asarray(means, float).reshape(-1)
    variances = np.asarray(variances, float).reshape(-1)
    lp = 0.0 if X is None or len(X) == 0 else _loglik(
        X, weights, means[:, None], variances[:, None, None])
    lp += _log_dirichlet(weights, prior.delta)
    lp += float((0.5 * np.log(prior.kappa / (2 * np.pi))
                 - 0.5 * prior.kappa * (means - prior.xi) ** 2).sum())
    lp += float(_log_gamma_pdf(1.0 / variances, prior.alpha, beta).sum())
    lp += float(_log_gamma_pdf(beta, prior.g, prior.h))
    return lp


def log_posterior_multivariate(X, weights, means, covs, prior: PriorSpec) -> float:
    lp = 0.0 if X is None or len(X) == 0 else _loglik(X, weights, means, covs)
    lp += _log_dirichlet(weights, prior.delta)
    d = means.shape[1]
    for mu, cov in zip(means, covs):
        lp += float(normal_logpdf(mu[None, :], np.zeros((1, d)), prior.tau * cov[None])[0, 0])
        lp += float(invwishart.logpdf(cov, df=prior.nu0, scale=prior.psi))
    return lp


def attach_log_posterior(trace: Trace, data: Dataset, prior: Optional[PriorSpec] = None) -> Trace:
    """Fill in ``log_posterior`` for a trace that lacks it.

    Uses the unnormalised log posterior when a prior is supplied, else the
    log likelihood; the choice is recorded in ``trace.meta``.
    """
    X = data.points
    if prior is None:
        lp = [_loglik(X, trace.weights[j], trace.means[j], trace.covs[j])
              for j in range(len(trace))]
        source = "log_likelihood"
    elif prior.family == "univariate-RG":
        lp = [log_posterior_univariate(X, trace.weights[j], trace.means[j], trace.covs[j],
                                       prior) for j in range(len(trace))]
        source = "log_posterior"
    else:
        lp = [log_posterior_multivariate(X, trace.weights[j], trace.means[j], trace.covs[j],
                                         prior) for j in range(len(trace))]
        source = "log_posterior"
    out = trace._replace(log_posterior=np.array(lp))
    out.meta["log_posterior_source"] = source
    return out


# --------------------------------------------------------------------------
# Gibbs samplers
# --------------------------------------------------------------------------

def _sample_allocation(logp: np.ndarray, rng) -> np.ndarray:
    return _categorical(logp, rng).astype(np.intp)


def _finish(cfg: SamplerConfig, data: Dataset, prior: PriorSpec, W, MU, COV, Z, LP,
            sampler: str) -> Trace:
    meta = {"sampler": sampler, "seed": cfg.seed, "iterations": cfg.iterations,
            "burn_in": cfg.burn_in, "K": cfg.K, **prior.as_meta()}
    trace = Trace(np.array(W), np.array(MU), np.array(COV), np.array(Z), np.array(LP),
                  np.arange(cfg.burn_in, cfg.iterations), data.dataset_id, meta)
    if cfg.switch_injection:
        trace = inject_label_switching(trace, seed=make_rng(cfg.seed).integers(2 ** 63))
    return trace


def gibbs_univariate(data: Dataset, prior: Optional[PriorSpec], cfg: SamplerConfig) -> Trace:
    """Data-augmentation Gibbs sampler for a K-component univariate normal mixture.

    One sweep updates allocations, weights, means, precisions and the
    precision hyperparameter ``beta`` from their full conditionals.  No
    ordering constraint is imposed, so the chain is free to switch labels.
    Components that lose all observations are refreshed from the prior.
    """
    if data.d != 1:
        raise DataFormatError(f"gibbs_univariate needs d = 1, got d = {data.d}")
    if prior is None:
        prior = PriorSpec.richardson_green(data.points)
    if prior.family != "univariate-RG":
        raise DataFormatError("gibbs_univariate needs a univariate-RG prior")
    rng = make_rng(cfg.seed)
    x = data.points[:, 0]
    n, K = x.shape[0], cfg.K

    if n:
        mu = np.quantile(x, (np.arange(K) + 0.5) / K)
        var = np.full(K, max(float(np.var(x)), 1e-6))
    else:
        mu = np.full(K, prior.xi)
        var = np.full(K, 1.0)
    w = np.full(K, 1.0 / K)
    beta = prior.g / prior.h
    keep = cfg.iterations - cfg.burn_in
    W = np.empty((keep, K))
    MU = np.empty((keep, K, 1))
    COV = np.empty((keep, K, 1, 1))
    Z = np.empty((keep, n), dtype=np.intp)
    LP = np.empty(keep)

    for it in range(cfg.iterations):
        if n:
            logp = (np.log(w) - 0.5 * np.log(2 * np.pi * var)
                    - 0.5 * (x[:, None] - mu) ** 2 / var)
            z = _sample_allocation(logp, rng)
        else:
            z = np.zeros(0, dtype=np.intp)
        counts = np.bincount(z, minlength=K)
        sums = np.bincount(z, weights=x, minlength=K)
        w = rng.dirichlet(prior.delta + counts)
        w = np.maximum(w, np.finfo(float).tiny)
        w /= w.sum()
        prec = 1.0 / var
        post_prec = prec * counts + prior.kappa
        post_mean = (prec * sums + prior.kappa * prior.xi) / post_prec
        mu = post_mean + rng.standard_normal(K) / np.sqrt(post_prec)
        ss = np.bincount(z, weights=(x - mu[z]) ** 2, minlength=K)
        prec = rng.gamma(prior.alpha + 0.5 * counts, 1.0 / (beta + 0.5 * ss))
        prec = np.maximum(prec, np.finfo(float).tiny)
        var = 1.0 / prec
        beta = rng.gamma(prior.g + K * prior.alpha, 1.0 / (prior.h + prec.sum()))
        if it >= cfg.burn_in:
            r = it - cfg.burn_in
            W[r] = w
            MU[r, :, 0] = mu
            COV[r, :, 0, 0] = var
            Z[r] = z
            LP[r] = log_posterior_univariate(data.points if n else None, w, mu, var, prior, beta)
    return _finish(cfg, data, prior, W, MU, COV, Z, LP, "gibbs_univariate")


def _sample_niw(rng, counts, sums, scatter, prior: PriorSpec, d: int):
    kappa0 = 1.0 / prior.tau
    K = counts.shape[0]
    means = np.empty((K, d))
    covs = np.empty((K, d, d))
    for k in range(K):
        nk = counts[k]
        kn = kappa0 + nk
        if nk > 0:
            xbar = sums[k] / nk
            S = scatter[k] - nk * np.outer(xbar, xbar)
            psi_n = prior.psi + S + (kappa0 * nk / kn) * np.outer(xbar, xbar)
            mn = nk * xbar / kn
        else:
            psi_n = prior.psi
            mn = np.zeros(d)
        psi_n = 0.5 * (psi_n + psi_n.T)
        cov = np.atleast_2d(invwishart.rvs(df=prior.nu0 + nk, scale=psi_n, random_state=rng))
        cov = 0.5 * (cov + cov.T)
        covs[k] = cov
        means[k] = rng.multivariate_normal(mn, cov / kn, method="cholesky")
    return means, covs


def gibbs_multivariate(data: Dataset, prior: Optional[PriorSpec], cfg: SamplerConfig) -> Trace:
    """Conjugate Gibbs sampler for a K-component multivariate normal mixture.

    Each sweep draws allocations, weights, then ``(mu_k, Sigma_k)`` jointly
    from their normal-inverse-Wishart full conditional.  When
    ``cfg.potts_kappa`` and ``cfg.lattice_dims`` are set, allocations are
    instead drawn by a Potts-prior Gibbs sweep with fixed interaction; the
    weights are still sampled and then just summarise label proportions.
    """
    if data.d < 2:
        raise DataFormatError(f"gibbs_multivariate needs d >= 2, got d = {data.d}")
    d = data.d
    if prior is None:
        prior = PriorSpec.conjugate(d)
    if prior.family != "multivariate-conjugate" or prior.psi.shape != (d, d):
        raise DataFormatError(
            "gibbs_multivariate needs a multivariate-conjugate prior of matching d")
    potts = cfg.potts_kappa is not None
    if potts:
        if cfg.lattice_dims is None or int(np.prod(cfg.lattice_dims)) != data.n:
            raise DataFormatError("Potts allocation update needs lattice_dims matching n")
    rng = make_rng(cfg.seed)
    X = data.points
    n, K = X.shape[0], cfg.K
    if n:
        order = np.argsort(X.sum(axis=1), kind="stable")
        cuts = np.array_split(order, K)
        means = np.stack([X[c].mean(axis=0) if len(c) else X.mean(axis=0) for c in cuts])
        base = np.cov(X.T) if n > d else np.eye(d)
        covs = np.repeat((base + 1e-6 * np.eye(d))[None], K, axis=0)
    else:
        means = np.zeros((K, d))
        covs = np.repeat(prior.psi[None], K, axis=0)
    w = np.full(K, 1.0 / K)
    z_lat = None
    keep = cfg.iterations - cfg.burn_in
    W = np.empty((keep, K))
    MU = np.empty((keep, K, d))
    COV = np.empty((keep, K, d, d))
    Z = np.empty((keep, n), dtype=np.intp)
    LP = np.empty(keep)

    for it in range(cfg.iterations):
        if n:
            loglik = normal_logpdf(X, means, covs)
            if potts:
                if z_lat is None:
                    z_lat = np.argmax(loglik, axis=1).reshape(cfg.lattice_dims)
                potts_sweep(z_lat, K, cfg.potts_kappa, rng,
                            loglik.reshape(tuple(cfg.lattice_dims) + (K,)))
                z = z_lat.reshape(-1).astype(np.intp)
            else:
                z = _sample_allocation(loglik + np.log(w), rng)
        else:
            z = np.zeros(0, dtype=np.intp)
        counts = np.bincount(z, minlength=K)
        w = rng.dirichlet(prior.delta + counts)
        w = np.maximum(w, np.finfo(float).tiny)
        w /= w.sum()
        sums = np.zeros((K, d))
        np.add.at(sums, z, X)
        scatter = np.zeros((K, d, d))
        np.add.at(scatter, z, X[:, :, None] * X[:, None, :])
        means, covs = _sample_niw(rng, counts, sums, scatter, prior, d)
        if it >= cfg.burn_in:
            r = it - cfg.burn_in
            W[r] = w
            MU[r] = means
            COV[r] = covs
            Z[r] = z
            LP[r] = log_posterior_multivariate(X if n else None, w, means, covs, prior)
    trace = _finish(cfg, data, prior, W, MU, COV, Z, LP, "gibbs_multivariate")
    if potts:
        trace.meta.update(potts_kappa=cfg.potts_kappa,
                          lattice_dims=",".join(map(str, cfg.lattice_dims)))
    return trace


def run_gibbs(data: Dataset, cfg: SamplerConfig, prior: Optional[PriorSpec] = None) -> Trace:
    """Dispatch to the univariate or multivariate sampler by data dimension."""
    sampler = gibbs_univariate if data.d == 1 else gibbs_multivariate
    logger.info("running %s: %d iterations, %d burn-in, K=%d, seed=%s",
                sampler.__name__, cfg.iterations, cfg.burn_in, cfg.K, cfg.seed)
    return sampler(data, prior, cfg)


class GibbsMixtureSampler(BaseEstimator):
    """Estimator wrapper: ``fit(X)`` runs the Gibbs sampler and keeps ``trace_``.

    Parameters
    ----------
    n_components : int
    iterations, burn_in : int
    random_state : int
    prior : PriorSpec, optional
        Defaults to the data-range univariate prior or the conjugate
        multivariate prior.
    switch_injection : bool
        Randomly permute every retained draw after sampling.
    """

    def __init__(self, n_components: int = 2, iterations: int = 10000, burn_in: int = 2000,
                 random_state: int = 0, prior: Optional[PriorSpec] = None,
                 switch_injection: bool = False):
        self.n_components = n_components
        self.iterations = iterations
        self.burn_in = burn_in
        self.random_state = random_state
        self.prior = prior
        self.switch_injection = switch_injection

    def fit(self, X, y=None):
        data = X if isinstance(X, Dataset) else Dataset(np.asarray(X, dtype=float))
        cfg = SamplerConfig(self.iterations, self.burn_in, self.random_state,
                            self.n_components, self.switch_injection)
        self.trace_ = run_gibbs(data, cfg, self.prior)
        self.n_features_in_ = data.d
        return self
