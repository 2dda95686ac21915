"""Discrete period matrices of branched coverings of the Riemann sphere.

Build adapted cotan-weighted triangulations of a branched covering, solve for
multi-valued discrete harmonic functions, and read off period matrices with
empirical convergence checks.
"""

from .config import DEFAULT_TOL, Tolerances
from .covering import (BranchedCover, BranchPoint, chart_image, genus,
                       load_curve, make_cover, save_curve, validate)
from .covermesh import (CoverMesh, MeshStats, classify_faces, lift_to_cover,
                        load_rpm, mesh_stats, save_rpm)
from .harmonic import (FaceFunction, MultiValuedVertexFunction,
                       assemble_laplacian, conjugate_function, face_energy,
                       solve_multivalued_harmonic, vertex_energy)
from .harness import (ConvergenceRow, ExperimentPlan, emit_csv, emit_svg,
                      fit_slope, run_convergence)
from .homology import CutSystem, crossing_cochain, hyperelliptic_basis, intersection_number
from .meshgen import (BaseTriangulation, adapt_near_branch, build_base_mesh,
                      fibonacci_points, random_points, spherical_delaunay)
from .periods import (PeriodResult, compare, energy_block_matrix,
                      holomorphic_integral, modular_reduce_genus1,
                      period_matrices_from_energy, period_matrix)
from .weights import (WeightSet, boundary_weights, build_weight_set,
                      cotan_weight, interpolation_energy, spherical_chord_weights)

__version__ = "0.1.0"
