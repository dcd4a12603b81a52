"""Minimal-time feeding of fed-batch reactors with multi-peaked growth:
singular-arc feedback synthesis, a smoothed extremal-field method, and the
geometric post-processing that compares candidate arcs globally."""

from .backend import backend_name
from .dynamics import (BangPolicy, ConstantFlow, Event, FullState,
                       PiecewiseConstantFlow, PlanarState, ProcessParams,
                       QsFeedback, SingularSynthesis, Trajectory, biomass_X,
                       conserved_M, full_vector_field, planar_vector_field,
                       simulate)
from .errors import (ConfigError, ControlError, DegenerateAdjointError,
                     DomainError, FedbatchError, NumericalError,
                     StiffnessError, TargetTimeoutError)
from .growth import (CriticalPoint, CriticalPointSet, GrowthModel,
                     HaldaneTerm, check_assumption1, check_assumption2,
                     eval_mu, eval_mu_prime, eval_mu_second,
                     find_local_maxima)
from .pmp import (Adjoint, SingularArc, adjoint_field, batch_time_quadrature,
                  check_assumption3, classify_fold, hamiltonian, phi_rate,
                  sigma_curve, singular_flow_Qs, singular_volume,
                  switching_function, time_to_target)
from .regularized import (AugmentedControls, Extremal, ExtremalConfig,
                          approximate_min_time, backward_extremal,
                          control_field_G1, control_field_G2,
                          default_alpha_grid, drift_F, drift_jacobian,
                          extremal_field, maximizing_controls,
                          terminal_costate)

__version__ = "0.1.0"
