"""Geometric-programming machinery for placement optimization."""
from .posynomial import Monomial, Posynomial, posy
from .problems import (
    Constraint,
    GPProblem,
    Link,
    SolverConfig,
    build_p1,
    build_p4,
    condense,
    dump_gp,
    load_gp,
)
from .solver import GPSolution, solve_gp
from .successive import (
    SuccessiveResult,
    Target,
    best_of_starts,
    build_problem,
    interior_start,
    successive_gp,
    tight_objective,
)

__all__ = [
    "Monomial", "Posynomial", "posy", "Constraint", "GPProblem", "Link", "SolverConfig",
    "build_p1", "build_p4", "condense", "dump_gp", "load_gp", "GPSolution", "solve_gp",
    "SuccessiveResult", "Target", "best_of_starts", "build_problem", "interior_start", "successive_gp",
    "tight_objective",
]
