"""Built-in experiment fixtures."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .exceptions import DataFormatError
from .model import Dataset, MixtureSpec
from .sampler import simulate_dataset, simulate_spatial_dataset

EQ7 = MixtureSpec.univariate([0.10, 0.65, 0.25], [-20.0, 20.0, 21.0], [1.0, 3.0, 0.5])

EQ8 = MixtureSpec.univariate([0.20, 0.20, 0.25, 0.20, 0.15],
                             [19.0, 19.0, 23.0, 29.0, 33.0],
                             [5.0, 1.0, 1.0, 0.5, 3.0])

_CORR_1 = np.array([[1.00, 0.80, 0.64], [0.80, 1.00, 0.80], [0.64, 0.80, 1.00]])
_CORR_2 = np.array([[1.00, 0.50, 0.25], [0.50, 1.00, 0.50], [0.25, 0.50, 1.00]])

SPATIAL = MixtureSpec([0.5, 0.5], [[4.0, 5.0, 6.0], [6.0, 7.0, 8.0]],
                      np.stack([0.5 * _CORR_1, 0.5 * _CORR_2]))

WELL_SEPARATED = MixtureSpec.univariate([1 / 3, 1 / 3, 1 / 3], [-20.0, 0.0, 20.0], [1.0, 1.0, 1.0])

# Velocities (1000 km/s) of 82 galaxies in the Corona Borealis region.
GALAXY_VELOCITIES = np.array([
    9.172, 9.350, 9.483, 9.558, 9.775, 10.227, 10.406, 16.084, 16.170, 18.419,
    18.552, 18.600, 18.927, 19.052, 19.070, 19.330, 19.343, 19.349, 19.440, 19.473,
    19.529, 19.541, 19.547, 19.663, 19.846, 19.856, 19.863, 19.914, 19.918, 19.973,
    19.989, 20.166, 20.175, 20.179, 20.196, 20.215, 20.221, 20.415, 20.629, 20.795,
    20.821, 20.846, 20.875, 20.986, 21.137, 21.492, 21.701, 21.814, 21.921, 21.960,
    22.185, 22.209, 22.242, 22.249, 22.314, 22.374, 22.495, 22.746, 22.747, 22.888,
    22.914, 23.206, 23.241, 23.263, 23.484, 23.538, 23.542, 23.666, 23.706, 23.711,
    24.129, 24.285, 24.289, 24.366, 24.717, 24.990, 25.633, 26.690, 26.995, 32.065,
    32.789, 34.279,
])


@dataclass(frozen=True)
class Experiment:
    """Defaults for one of the built-in experiments."""

    name: str
    K: int
    n: Optional[int]
    iterations: int
    burn_in: int
    spec: Optional[MixtureSpec] = None
    dims: Optional[Tuple[int, int, int]] = None
    kappa: float = 0.3
    switch_injection: bool = False

    def dataset(self, seed: int = 0, n: Optional[int] = None, dims=None,
                exact_counts: bool = True) -> Dataset:
        if self.name == "galaxy":
            return Dataset(GALAXY_VELOCITIES.reshape(-1, 1), dataset_id="galaxy",
                           meta={"source": "galaxy velocities, 82 observations"})
        if self.name == "spatial":
            dims = tuple(dims or self.dims)
            return simulate_spatial_dataset(self.spec, dims, self.kappa, seed=seed,
                                            dataset_id="spatial")
        if self.spec is None:
            raise DataFormatError(f"experiment {self.name!r} has no generating mixture")
        n = self.n if n is None else n
        return simulate_dataset(self.spec, n, seed=seed, exact_counts=exact_counts,
                                dataset_id=self.name)


EXPERIMENTS = {
    "eq7": Experiment("eq7", K=3, n=100, iterations=25000, burn_in=5000, spec=EQ7),
    "eq8": Experiment("eq8", K=5, n=100, iterations=25000, burn_in=5000, spec=EQ8),
    "galaxy": Experiment("galaxy", K=6, n=82, iterations=25000, burn_in=5000),
    "spatial": Experiment("spatial", K=2, n=None, iterations=6000, burn_in=1000, spec=SPATIAL,
                          dims=(10, 10, 4), kappa=0.3, switch_injection=True),
    "separated": Experiment("separated", K=3, n=150, iterations=6000, burn_in=1000,
                            spec=WELL_SEPARATED),
}


def get_experiment(name: str) -> Experiment:
    try:
        return EXPERIMENTS[name]
    except KeyError:
        raise DataFormatError(
            f"unknown experiment {name!r}; choose from {', '.join(EXPERIMENTS)} or custom"
        ) from None
