"""Jump-time and supremum-of-jump laws for multi-type CBI processes."""

from .measure import (AtomicLevyMeasure, BallComplement, Box, Difference, FullSpace, Intersection,
                      JumpSet, Points, Predicate, Rectangle, Union, complement, jumpset_from_dict,
                      measure_vector)
from .params import (CBIParams, DerivedDrift, ModifiedParams, NotApplicable, ValidationReport,
                     derive_drift, embed_2d, irreducibility_radius, is_irreducible, modify_for_set,
                     validate)
from .mechanisms import ConvergenceError, Mechanism, ModifiedMechanism
from .ode import (LimitResult, LimitStatus, OdeControl, OdeFailure, OdeSolution, RhsKind,
                  limit_vtilde, solve_v, solve_vtilde, solve_vtilde_A)
from .analytics import (FirstJumpLaw, RectVerdict, TauVerdict, check_prop53_hypotheses,
                        expected_jump_count, global_sup_constant, laplace_intX, laplace_X,
                        lower_bound_pi, matrix_exp, mean, prob_tau_infinite, rect_sup_is_null,
                        sup_jump_norm_cdf, sup_jump_zero_prob, survival_tau)
from .fixtures import load_fixture

AdmissibleParams = CBIParams

__version__ = "0.1.0"
