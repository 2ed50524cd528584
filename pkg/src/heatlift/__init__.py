"""heatlift: global heat kernels for homogeneous degenerate operators.

Build the Carnot-group lift of a homogeneous Hormander system, evaluate the
lifted heat kernel, saturate it into the global kernel of the base operator,
and verify the whole structure numerically and symbolically.
"""

__version__ = "0.1.0"

from .poly import DEGREE_ANY, DilationWeights, Poly, PolyMap, parse_poly
from .fields import (VectorField, check_h1, hormander_rank_at_zero, lie_bracket,
                     lie_closure)
from .carnot import (CarnotGroup, HomogeneousNorms, LiftError, NoLiftingNeeded,
                     bch_group_law, build_split_coordinates, flow_time_one,
                     flow_with_time)
from .kernel import HeatKernel, KernelError, gaussian_heat_kernel
from .saturation import DerivativeSpec, PoleError, SaturatedKernel
from .cauchy import (BoundedInitialDatum, constant_datum, gaussian_datum,
                     potential_lambda, reproduction_check, smooth_bump,
                     solve_cauchy, tabulated_datum)
from .oracle import (DiffusionConfig, fd_cauchy_solver, fd_derivative,
                     fd_time_derivative, mc_density)
from .quadrature import QuadratureError, adaptive_quad
from .systems import (FieldSystem, SystemError, build_system, builtin_system,
                      load_system, loads_system, parse_system)

__all__ = [name for name in dir() if not name.startswith("_")]
