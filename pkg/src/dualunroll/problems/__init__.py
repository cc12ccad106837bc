from .base import ConstrainedProblem, DTYPE, check_multipliers
from .qp import (MiqpInstance, QpProblem, analytic_minimizer, build_gso,
                 generate_instance, relax)
from .qp_oracle import reference_solve
from .power import GeometryConfig, PowerProblem, generate_network

__all__ = [
    "ConstrainedProblem", "DTYPE", "check_multipliers",
    "MiqpInstance", "QpProblem", "analytic_minimizer", "build_gso",
    "generate_instance", "relax", "reference_solve",
    "GeometryConfig", "PowerProblem", "generate_network",
]
