"""Feedback stabilization of Fokker-Planck equations on 2D boxes.

Discretize the controlled equation, decouple the conserved mass, compute
leading spectra, synthesize control shapes, solve the projected Riccati and
Lyapunov equations, and integrate the nonlinear closed loop.
"""

from .closed_loop import (DiagnosticsReport, FeedbackLaw, SpectrumShiftReport,
                          TrajectoryRecord, closed_loop_spectrum, diagnostics,
                          fitted_decay_rate, initial_condition, integrate,
                          lyapunov_control, lyapunov_law, riccati_control,
                          riccati_law)
from .config import CONTROLLERS, SCENARIOS, ExperimentConfig, load_config, save_config
from .experiments import (AssembledSystem, Comparison, RunBundle,
                          assemble_system, compare_runs,
                          lifted_riccati_certificates, reproduce_paper,
                          run_experiment, time_to_fraction, write_bundle)
from .grid import (Grid2D, build_grid, h1_gram, make_potential, phi_field,
                   stationary_state, weighted_inner, weighted_norm)
from .linop import LinOp, as_matrix
from .matrix_equations import (LyapunovSolution, RiccatiSolution,
                               care_residual, lift_riccati, lyap_residual,
                               lyapunov_kron_oracle, solve_care,
                               solve_lyapunov, stabilizing_initial_gain)
from .operators import (assemble_adjoint_generator, assemble_control_operator,
                        control_vector, discrete_stationary,
                        export_matrix_market, generator_from_adjoint,
                        neumann_laplacian)
from .reduction import (IdentityReport, ReducedSystem, ReductionMap, build_R,
                        reduce_system, verify_identities)
from .shapes import (HautusReport, ShapeProblem, elliptic_operator,
                     hautus_margins, lyapunov_rhs, riccati_rhs, rotate_shape,
                     shape_to_csv, solve_shape)
from .spectral import (SpectralData, choose_delta, choose_mu,
                       leading_eigenpairs, mu_probe_margin)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
