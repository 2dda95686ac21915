"""Central tolerance/limit configuration shared across the pipeline."""

from dataclasses import dataclass


@dataclass(frozen=True)
class Tolerances:
    """Numerical knobs with their defaults.

    solver_rtol: relative residual target for the harmonic solver.
    solver_maxiter_factor: CG iteration cap is this factor times sqrt(n).
    direct_solve_max: use a sparse direct factorization up to this many
        vertices; conjugate gradient above.
    quadrature_tol: relative tolerance of the boundary-weight quadrature.
    cross_tol: relative Frobenius agreement required between the direct and
        energy period pipelines.
    zero_weight_tol: weights with |c| below this count as zero for the face
        energy.
    """

    solver_rtol: float = 1e-10
    solver_maxiter_factor: int = 50
    direct_solve_max: int = 50000
    quadrature_tol: float = 1e-10
    cross_tol: float = 1e-6
    zero_weight_tol: float = 1e-14


DEFAULT_TOL = Tolerances()
