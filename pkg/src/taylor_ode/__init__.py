"""Explicit and implicit Taylor integrators of arbitrary order, exact and approximate."""
from .approx_taylor import (AITSolver, NewtonConfig, OdeProblem, TaylorJet, aet_derivatives, aet_step,
                            ait_jacobian_blocks, ait_residual, ait_step, cost_model)
from .block_newton import BlockJacobian, NewtonStats, lu_solve, newton_update, op_count
from .errors import NewtonBreakdown, SingularAmplification, SingularMatrixError, StepFailure
from .exact_taylor import (LinearScalarProblem, linear_et_step, linear_it_step, q_eval, scalar_it_jacobian,
                           scalar_it_residual, scalar_it_step)
from .fdb import fdb_derivative, fdb_partials, partitions
from .stencil import StencilWeights, make_stencil, stencil_for

__version__ = "0.1.0"
