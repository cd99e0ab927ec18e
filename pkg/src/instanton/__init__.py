"""Instanton structure of smooth vector fields."""
from .complexes import (ChainComplex, CornerPoset, HomologyGroup, betti_numbers,
                        cube_poset, homology, incidence_check, incidence_cohomology,
                        moduli_corner_poset, morse_complex, smith_normal_form)
from .errors import InstantonError
from .field import (DomainSpec, FieldSpec, RestPoint, check_lyapunov, find_rest_points,
                    load_field, parse_field)
from .flow import Trajectory, flow_to_level, integrate, omega_limit
from .local_model import (BoundaryProblem, LocalModel, build_local_model,
                          solve_boundary_trajectory, verify_decay)
from .moduli import (BrokenInstanton, Instanton, enumerate_broken, find_instantons,
                     stratum_dimension, trace_family)

__all__ = [
    "BoundaryProblem", "BrokenInstanton", "ChainComplex", "CornerPoset", "DomainSpec",
    "FieldSpec", "HomologyGroup", "Instanton", "InstantonError", "LocalModel", "RestPoint",
    "Trajectory", "betti_numbers", "build_local_model", "check_lyapunov", "cube_poset",
    "enumerate_broken", "find_instantons", "find_rest_points", "flow_to_level", "homology",
    "incidence_check", "incidence_cohomology", "integrate", "load_field",
    "moduli_corner_poset", "morse_complex", "omega_limit", "parse_field",
    "smith_normal_form", "solve_boundary_trajectory", "stratum_dimension", "trace_family",
    "verify_decay",
]
