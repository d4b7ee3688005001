"""Relabelling algorithms for label switching in Bayesian mixture MCMC output.

Submodules
----------
model
    Mixture parameters, densities, permutations and traces.
sampler
    Gibbs samplers, data simulation (including Potts lattices) and
    label-switch injection.
relabel
    Six relabelling algorithms behind a scikit-learn style interface.
diagnostics
    KL distance, misclassification matrices, posterior summaries and the
    Gelman-Rubin statistic.
cli
    The ``mixrelabel`` command-line tool.
"""

from .exceptions import DataFormatError, DimensionError, MixRelabelError, NumericalError
from .model import Dataset, Draw, MixtureSpec, Trace, apply_permutation, mixture_pdf
from .relabel import (RELABELLERS, CeleuxRelabeller, CronWestRelabeller,
                      FruhwirthSchnatterRelabeller, MarinRelabeller, MinimumVarianceRelabeller,
                      PapastamoulisRelabeller, RelabelResult, make_relabeller, relabel_celeux,
                      relabel_cron_west, relabel_fs, relabel_marin, relabel_minvar,
                      relabel_papastamoulis)
from .sampler import SamplerConfig, inject_label_switching, run_gibbs, simulate_dataset

__version__ = "0.1.0"

__all__ = [
    "CeleuxRelabeller", "CronWestRelabeller", "FruhwirthSchnatterRelabeller",
    "MarinRelabeller", "MinimumVarianceRelabeller", "PapastamoulisRelabeller",
    "SamplerConfig", "inject_label_switching", "run_gibbs", "simulate_dataset",
    "DataFormatError", "Dataset", "DimensionError", "Draw", "MixRelabelError", "MixtureSpec",
    "NumericalError", "RELABELLERS", "RelabelResult", "Trace", "apply_permutation",
    "make_relabeller", "mixture_pdf", "relabel_celeux", "relabel_cron_west", "relabel_fs",
    "relabel_marin", "relabel_minvar", "relabel_papastamoulis",
]
