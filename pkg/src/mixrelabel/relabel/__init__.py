"""Relabelling algorithms for label-switched mixture MCMC output."""

from .assignment import all_permutations, assignment_cost, best_permutations, hungarian
from .base import (BaseRelabeller, RelabelResult, check_trace, derive_allocation,
                   derive_allocations, select_pivot)
from .methods import (RELABELLERS, CeleuxRelabeller, CronWestRelabeller,
                      FruhwirthSchnatterRelabeller, MarinRelabeller,
                      MinimumVarianceRelabeller, PapastamoulisRelabeller, lloyd_kmeans,
                      make_relabeller, match_counts, reference_window, relabel_celeux,
                      relabel_cron_west, relabel_fs, relabel_marin, relabel_minvar,
                      relabel_papastamoulis, scalar_product_permutations)
from .moments import RunningMoments

__all__ = [
    "BaseRelabeller", "CeleuxRelabeller", "CronWestRelabeller",
    "FruhwirthSchnatterRelabeller", "MarinRelabeller", "MinimumVarianceRelabeller",
    "PapastamoulisRelabeller", "RELABELLERS", "RelabelResult", "RunningMoments",
    "all_permutations", "assignment_cost", "best_permutations", "check_trace",
    "derive_allocation", "derive_allocations", "hungarian", "lloyd_kmeans",
    "make_relabeller", "match_counts", "reference_window", "relabel_celeux",
    "relabel_cron_west", "relabel_fs", "relabel_marin", "relabel_minvar",
    "relabel_papastamoulis", "scalar_product_permutations", "select_pivot",
]
