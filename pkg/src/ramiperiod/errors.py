"""Exception hierarchy and CLI exit codes."""


class RamiperiodError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ValidationError(RamiperiodError):
    """Invalid input data: curve files, argument ranges, precondition failures."""

    exit_code = 2


class DegeneracyError(ValidationError):
    """Degenerate geometry in the input (coplanar points, duplicate points,
    vertices on branch cuts)."""


class ResolutionError(ValidationError):
    """Mesh too coarse for the requested construction (e.g. homology loops
    cannot be realized disjointly)."""


class NumericError(RamiperiodError):
    """Numerical failure: solver non-convergence, quadrature failure,
    singular systems."""

    exit_code = 3


class GeometryError(NumericError):
    """Degenerate triangle or chart geometry encountered mid-computation."""


class TopologyError(NumericError):
    """Inconsistent combinatorics: monodromy does not close up, non-manifold
    gluing, Euler characteristic mismatch."""


class ZeroWeightError(NumericError):
    """An operation requiring nonzero edge weights met a (near-)zero weight."""

    def __init__(self, edges, message=None):
        self.edges = list(edges)
        super().__init__(message or f"zero weight on edges {self.edges[:8]}"
                         + ("..." if len(self.edges) > 8 else ""))


class OutputError(RamiperiodError):
    """I/O failure writing result artifacts."""

    exit_code = 4
