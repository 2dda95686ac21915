"""Weighted Laplacian, multi-valued harmonic solves, conjugate functions.

A multi-valued vertex function is a single-valued representative u0 plus a
real period vector P; the well-defined difference along a directed edge h is
du(h) = u0(head) - u0(tail) + sum_k P_k X_k(h) with the jump cochains X_k of
the cut system.  Harmonicity is a linear system in u0 with a right-hand side
assembled from the jumps.  Conjugate face functions integrate the rotated
differences over a dual spanning tree and carry their own period vector.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .config import DEFAULT_TOL
from .covermesh import CoverMesh
from .errors import NumericError, ValidationError, ZeroWeightError
from .homology import CutSystem
from .weights import WeightSet


def halfedge_weights(mesh: CoverMesh, weights: WeightSet) -> np.ndarray:
    return weights.cover_weight[mesh.edge_of_halfedge]


def assemble_laplacian(mesh: CoverMesh, weights: WeightSet) -> sp.csr_matrix:
    """(Lu)(x) = sum over neighbors y of c([x,y]) (u(x) - u(y)).

    Symmetric, zero row sums, positive semi-definite with constant kernel on
    a connected mesh (guaranteed by the interpolation identity even when
    individual weights are negative).
    """
    nh = 3 * mesh.n_faces
    if len(weights.cover_weight) != mesh.n_edges:
        raise ValidationError("weight set does not cover every edge")
    c = halfedge_weights(mesh, weights)
    origins = mesh.faces.reshape(-1)
    heads = mesh.faces[np.arange(nh) // 3, (np.arange(nh) % 3 + 1) % 3]
    n = mesh.n_vertices
    # each undirected edge appears as two half-edges: off-diagonals get -c
    # once per direction, diagonals accumulate +c per incident half-edge
    rows = np.concatenate([origins, origins])
    cols = np.concatenate([heads, origins])
    vals = np.concatenate([-c, c])
    L = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    L.sum_duplicates()
    return L


@dataclass
class MultiValuedVertexFunction:
    """Single-valued representative plus real period parts over the cuts."""

    base: np.ndarray           # u0 per cover vertex
    periods: np.ndarray        # P in R^{2g}: Re A_1..g, Re B_1..g
    cuts: CutSystem
    residual: float = 0.0

    def edge_deltas(self) -> np.ndarray:
        """Well-defined differences per directed half-edge."""
        mesh = self.cuts.mesh
        nh = 3 * mesh.n_faces
        origins = mesh.faces.reshape(-1)
        heads = mesh.faces[np.arange(nh) // 3, (np.arange(nh) % 3 + 1) % 3]
        d = self.base[heads] - self.base[origins]
        if np.any(self.periods):
            d = d + self.cuts.jump_basis().T @ self.periods
        return d


def _jump_array(cuts: CutSystem, P) -> np.ndarray:
    return cuts.jump_basis().T @ np.asarray(P, dtype=float)


class HarmonicSolver:
    """Shared factorization/iterative context for one (mesh, weights) pair."""

    def __init__(self, mesh: CoverMesh, weights: WeightSet, tol=DEFAULT_TOL,
                 gauge_vertex: int = 0):
        self.mesh = mesh
        self.weights = weights
        self.tol = tol
        self.gauge = int(gauge_vertex)
        self.L = assemble_laplacian(mesh, weights)
        n = mesh.n_vertices
        self.keep = np.setdiff1d(np.arange(n), [self.gauge])
        self.K = self.L[self.keep][:, self.keep].tocsc()
        self._lu = None
        self._use_direct = n <= tol.direct_solve_max

    def _direct(self):
        if self._lu is None:
            self._lu = spla.splu(self.K)
        return self._lu

    def solve_u0(self, b: np.ndarray) -> np.ndarray:
        n = self.mesh.n_vertices
        u0 = np.zeros(n)
        rhs = b[self.keep]
        if self._use_direct:
            u0[self.keep] = self._direct().solve(rhs)
        else:
            maxiter = int(self.tol.solver_maxiter_factor * math.sqrt(n))
            dia = self.K.diagonal()
            if np.any(dia <= 0):
                u0[self.keep] = self._direct().solve(rhs)
            else:
                M = sp.diags(1.0 / dia)
                try:
                    x, info = spla.cg(self.K, rhs, M=M, maxiter=maxiter,
                                      rtol=self.tol.solver_rtol, atol=0.0)
                except TypeError:  # older scipy spells it tol=
                    x, info = spla.cg(self.K, rhs, M=M, maxiter=maxiter,
                                      tol=self.tol.solver_rtol, atol=0.0)
                if info != 0:
                    res = np.linalg.norm(self.K @ x - rhs)
                    raise NumericError(
                        f"conjugate gradient did not converge in {maxiter} "
                        f"iterations; residual {res:.3e}")
                u0[self.keep] = x
        return u0

    def solve(self, cuts: CutSystem, P) -> MultiValuedVertexFunction:
        P = np.asarray(P, dtype=float)
        if cuts.genus < 1:
            raise ValidationError("period solves need genus >= 1")
        if P.shape != (2 * cuts.genus,):
            raise ValidationError(f"period vector must have length {2 * cuts.genus}")
        mesh = self.mesh
        nh = 3 * mesh.n_faces
        c = halfedge_weights(mesh, self.weights)
        jump = _jump_array(cuts, P)
        b = np.zeros(mesh.n_vertices)
        np.add.at(b, mesh.faces.reshape(-1), c * jump)
        u0 = self.solve_u0(b)
        res = np.max(np.abs(self.L @ u0 - b))
        scale = np.max(np.abs(b)) if np.any(b) else 1.0
        if res > 1e3 * self.tol.solver_rtol * scale:
            raise NumericError(f"harmonic solve residual {res:.3e} exceeds "
                               f"tolerance (scale {scale:.3e})")
        return MultiValuedVertexFunction(base=u0, periods=P, cuts=cuts,
                                         residual=res)


def solve_multivalued_harmonic(mesh: CoverMesh, weights: WeightSet,
                               cuts: CutSystem, P, gauge_vertex: int = 0,
                               tol=DEFAULT_TOL) -> MultiValuedVertexFunction:
    return HarmonicSolver(mesh, weights, tol, gauge_vertex).solve(cuts, P)


def vertex_energy(u: MultiValuedVertexFunction, weights: WeightSet) -> float:
    """Weighted sum of squared differences over undirected edges."""
    mesh = u.cuts.mesh
    c = halfedge_weights(mesh, weights)
    d = u.edge_deltas()
    return float(0.5 * np.sum(c * d * d))


@dataclass
class FaceFunction:
    """Face values with their own period vector over the dual jump cochains."""

    values: np.ndarray         # v0 per cover face
    periods: np.ndarray        # q in R^{2g}
    cuts: CutSystem

    def dual_deltas(self) -> np.ndarray:
        """v(left shore) - v(right shore) per directed half-edge."""
        mesh = self.cuts.mesh
        nh = 3 * mesh.n_faces
        faces = np.arange(nh) // 3
        d = self.values[faces] - self.values[mesh.twin // 3]
        if np.any(self.periods):
            d = d + self.cuts.dual_jump_basis().T @ self.periods
        return d


def conjugate_periods(u: MultiValuedVertexFunction, weights: WeightSet) -> np.ndarray:
    """Periods of the conjugate face function around all 2g cycles.

    The left push-off of a cycle crosses its wedge edges from left shore to
    right shore, so the increments c(e) du(e) enter with a minus sign; each
    physical crossing appears twice in the oriented-edge sum, hence the half.
    """
    mesh = u.cuts.mesh
    omega = halfedge_weights(mesh, weights) * u.edge_deltas()
    return np.array([-0.5 * float(u.cuts.eta(k) @ omega)
                     for k in range(2 * u.cuts.genus)])


def conjugate_function(u: MultiValuedVertexFunction, mesh: CoverMesh,
                       weights: WeightSet, cuts: CutSystem,
                       gauge_face: int = 0, defect_tol: float = None,
                       _tree_rng=None) -> FaceFunction:
    """Integrate v(l_e) - v(r_e) = c(e) (u(h_e) - u(t_e)) over a dual tree.

    The path-independence defect around each vertex equals the harmonicity
    residual there, so u must be harmonic to the solver tolerance.
    """
    c = halfedge_weights(mesh, weights)
    omega = c * u.edge_deltas()
    defect = np.zeros(mesh.n_vertices)
    np.add.at(defect, mesh.faces.reshape(-1), omega)
    worst = int(np.argmax(np.abs(defect)))
    scale = max(1.0, float(np.max(np.abs(omega))))
    tol = defect_tol if defect_tol is not None else max(
        1e-7 * scale, 50.0 * u.residual)
    if abs(defect[worst]) > tol:
        raise NumericError(f"u is not harmonic: defect {defect[worst]:.3e} at "
                           f"vertex {worst}")

    q = conjugate_periods(u, weights)
    dv0 = omega - cuts.dual_jump_basis().T @ q

    v0 = np.zeros(mesh.n_faces)
    seen = np.zeros(mesh.n_faces, dtype=bool)
    seen[gauge_face] = True
    dq = deque([int(gauge_face)])
    rng = _tree_rng
    while dq:
        f = dq.popleft()
        order = [0, 1, 2]
        if rng is not None:
            rng.shuffle(order)
        for i in order:
            h = 3 * f + i
            f2 = int(u.cuts.mesh.twin[h]) // 3
            if not seen[f2]:
                seen[f2] = True
                # stepping from f (= left shore of h) to f2 crosses h backwards
                v0[f2] = v0[f] - dv0[h]
                dq.append(f2)
    if not np.all(seen):
        raise NumericError("dual graph is disconnected")
    return FaceFunction(values=v0, periods=q, cuts=cuts)


def face_energy(v: FaceFunction, weights: WeightSet,
                zero_tol: float = None) -> float:
    """Sum over edges of (v(left) - v(right))^2 / c(e); needs nonzero weights."""
    mesh = v.cuts.mesh
    zero_tol = DEFAULT_TOL.zero_weight_tol if zero_tol is None else zero_tol
    cw = weights.cover_weight
    bad = np.nonzero(np.abs(cw) <= zero_tol)[0]
    if len(bad):
        raise ZeroWeightError(bad.tolist())
    c = halfedge_weights(mesh, weights)
    d = v.dual_deltas()
    return float(0.5 * np.sum(d * d / c))
