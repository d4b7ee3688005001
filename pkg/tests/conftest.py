import numpy as np
import pytest
from hypothesis import settings

from mixrelabel.model import MixtureSpec, Trace

settings.register_profile("default", max_examples=50, deadline=None)
settings.load_profile("default")

# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


def synthetic_trace(spec: MixtureSpec, M: int, seed: int = 0, noise: float = 0.05,
                    n: int = 0, log_posterior: bool = True) -> Trace:
    """Draws jittered around ``spec`` with no label switching.

    Means get additive noise, weights and variances multiplicative noise;
    with ``n > 0`` allocations are drawn from the true weights.
    """
    rng = np.random.default_rng(seed)
    K, d = spec.K, spec.d
    w = spec.weights * np.exp(noise * rng.standard_normal((M, K)))
    w /= w.sum(axis=1, keepdims=True)
    means = spec.means + noise * rng.standard_normal((M, K, d))
    scale = np.exp(noise * rng.standard_normal((M, K)))
    covs = spec.covs[None] * scale[..., None, None]
    z = rng.choice(K, size=(M, n), p=spec.weights) if n else None
    lp = -np.sum((means - spec.means) ** 2, axis=(1, 2)) if log_posterior else None
    return Trace(w, means, covs, z, lp)


@pytest.fixture
def separated_spec():
    return MixtureSpec.univariate([0.2, 0.3, 0.5], [-20.0, 0.0, 20.0], [1.0, 2.0, 0.5])


@pytest.fixture
def separated_trace(separated_spec):
    return synthetic_trace(separated_spec, 300, seed=1, n=12)


@pytest.fixture(scope="session")
def eq7_desk_timed():
    """The 3-component experiment at desk scale: 25,000 iterations, 5,000 burn-in, seed 0.

    Returns ``(data, trace, sampler_seconds)``.
    """
    import time
    from mixrelabel.fixtures import get_experiment
    from mixrelabel.sampler import SamplerConfig, run_gibbs
    exp = get_experiment("eq7")
    data = exp.dataset(seed=0)
    start = time.perf_counter()
    trace = run_gibbs(data, SamplerConfig(exp.iterations, exp.burn_in, 0, exp.K))
    return data, trace, time.perf_counter() - start


@pytest.fixture(scope="session")
def eq7_desk_run(eq7_desk_timed):
    return eq7_desk_timed[:2]
