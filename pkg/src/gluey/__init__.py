"""Gluey-contact particle dynamics.

Rigid spheres interact through a vanishing-viscosity lubrication limit:
velocities are projected onto an admissible set that forbids overlap
and, for glued pairs, forbids separation until their adhesion potential
returns to zero.
"""

__version__ = "0.1.0"

from .config import (ConfigError, PlaneScenarioConfig, ScenarioConfig,
                     build_initial_state, build_obstacles, parse_config)
from .geometry import (CoincidentCenters, ParticleState, SparseGradientRow,
                       contact_normal, distance_gradient, signed_distance)
from .lubrication import (GapTrajectory, StepUnderflow,
                          integrate_lubrication_ode,
                          macroscopic_contact_times, quasistatic_reference)
from .neighbors import (GluedPairLost, GridParams, NeighborSet,
                        brute_force_neighbors, carry_gammas, find_neighbors)
from .obstacles import (HalfSpace, ObstacleSet, ParticleInsideObstacle,
                        RotationLaw, SphereAssembly, SphereObstacle)
from .plane import (PiecewiseConstantForce, PlaneState, PlaneTrajectory,
                    RoughParams, admissible_project_scalar,
                    pushpull_closed_form, pushpull_force, run_plane_scenario,
                    step_plane)
from .projection import (ConstraintRow, InfeasibleConstraintsError, KktReport,
                         ProjectionResult, RowKind, SolverOptions,
                         UzawaConvergenceError, assemble_constraints,
                         brute_force_project, evaluate_obstacle_constraint,
                         kkt_residuals, m_norm, project_velocities)
from .sim import (GammaFloor, GlueLaw, InitializationError, RunMonitor,
                  SimFrame, Simulation, StepReport, pair_rate_coeff,
                  run_simulation, step_multibody)

__all__ = [name for name in dir() if not name.startswith("_")]
