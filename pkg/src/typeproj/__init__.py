"""Method-of-types combinatorics, I-/L-projections, finite-grid posteriors and
estimating-equation estimators (EL, EMME, MaxMaxEnt)."""
from .core import (Alphabet, EmpiricalType, Pmf, Sample, i_divergence, l_divergence,
                   shannon_entropy, total_variation)
from .errors import (AlphabetMismatchError, ConvergenceError, InfeasibleError,
                     ResourceCapError, TypeprojError, ValidationError)
from .projections import (ConstraintRegion, ProjectionResult, feasibility_check,
                          i_projection, l_projection)
from .typespace import (RegionPredicate, FunctionPredicate, Always, clln_ball_mass,
                        enumerate_types, log_type_prob, maxprob_types, mean_type,
                        prob_of_set, sanov_rate_curve)
from .bayes import PriorGrid, blln_ball_mass, bst_rate, log_likelihood, posterior
from .estimators import (EEModel, el_estimate, emme_estimate, lprojection_estimate,
                         maxmaxent_estimate)

__version__ = "0.1.0"
