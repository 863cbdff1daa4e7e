"""Statistical certification of candidate viable initial sets.

Importance sampling from a defensive mixture over a GP-learned failure set,
with empirical Bernstein bounds for the weighted losses and a binomial tail
inversion baseline.
"""

from .bounds import (CertBound, SampleStats, binomial_tail_inversion, empirical_bernstein,
                     pair_variance, weighted_pac_bound)
from .distributions import (DefensiveMixture, LikelihoodRatio, TruncatedGaussianBox, UniformDensity,
                            likelihood_ratio)
from .geometry import FailureSet, HyperRect, Polytope2D, PolytopeCross, area, clip_to_box, contains, convex_hull
from .pipeline import (CertReport, build_problem, build_surrogate, certify_is, certify_mc,
                       convergence_study, run_alg1)

__version__ = "0.1.0"
