"""chnslab: a desk-scale laboratory for controlled Cahn-Hilliard/Navier-Stokes flows.

Periodic pseudo-spectral simulation of a coupled phase-field/flow system with
divergence-free forcing, a quadratic cost functional, derivative-free value
estimation with a dynamic-programming residual check, the closed-form
Hamiltonian with its feedback law, and numerical audits of the underlying
a-priori estimates.
"""

__version__ = "0.1.0"

from .grid import (GridSpec, ScalarField, VelocityField, dealias, div, grad,
                   inner, l2_norm, laplacian, leray_project)
from .operators import Params, PotentialSpec, double_well, energy, lyapunov
from .integrator import (BlowUpError, SchemeConfig, State, Trajectory,
                         read_snapshot, rest_state, simulate, spinodal_state,
                         step, write_snapshot)
from .control import (ControlSignal, CostBreakdown, OptimizerConfig,
                      ValueEstimate, dpp_residual, evaluate_cost,
                      feedback_control, hamiltonian_brute_force,
                      hamiltonian_closed_form, project_to_ball, value_estimate)
from .audits import (AuditReport, audit_continuous_dependence,
                     audit_energy_law, audit_functional_inequalities,
                     audit_mass_conservation, audit_time_continuity,
                     audit_value_continuity)
