"""Innovations-loss gradient descent for steady-state linear filters.

The loss is the trace of the steady-state innovation covariance of the filter
``xhat <- A xhat + L (y - C A xhat)``. Its gradient is available in closed
form, and plain descent on it recovers the Kalman gain when (A, CA) is
observable.
"""
from .errors import (ConsistencyError, DimensionError, DomainError, EmptyProbeError,
                     InnovGradError, InstabilityError, NotPSDError, NumericalError,
                     PreconditionError, SamplingError, StallError, ValidationError)
from .matrix_ops import solve_dare_predictive, solve_dlyap, spectral_radius
from .model import (GainAnalysis, SystemModel, analyze, check_assumptions,
                    innov_loss, innov_loss_gradient, pred_loss, loss_difference)
from .descent import (DescentConfig, DescentTrajectory, RateCertificate,
                      coercivity_probe, descend, estimate_c_local,
                      estimate_kappa_levelset, rate_certificate)
from .montecarlo import MonteCarloEstimate, SimConfig, fd_gradient, simulate
from .systems import nilpotent_example, random_system

__version__ = "0.1.0"
