"""Discrete holomorphic integrals, period matrices, and comparisons.

Two independent pipelines produce the period matrix: the direct route solves
for holomorphic integrals with unit A-periods and reads off B-periods; the
energy route assembles the quadratic form of the harmonic energy in the
period vector and inverts its block structure.  Their agreement is a
built-in validator.
"""

from __future__ import annotations

import itertools
import json
import time
from dataclasses import dataclass

import numpy as np

from .config import DEFAULT_TOL
from .covermesh import CoverMesh, MeshStats, mesh_stats
from .errors import NumericError, ValidationError
from .harmonic import (FaceFunction, HarmonicSolver, MultiValuedVertexFunction,
                       conjugate_function, conjugate_periods, vertex_energy)
from .homology import CutSystem
from .weights import WeightSet


@dataclass
class PeriodResult:
    pi: np.ndarray               # g x g complex
    pi_dual: np.ndarray          # g x g complex
    energy_matrix: np.ndarray    # 2g x 2g real symmetric
    stats: MeshStats
    method: str
    symmetry_defect: float

    def to_json_dict(self, curve: str = "", error_vs_reference=None):
        def cm(M):
            return [[{"re": float(z.real), "im": float(z.imag)} for z in row]
                    for row in M]
        out = {
            "curve": curve,
            "method": self.method,
            "h": self.stats.h,
            "n_vertices": self.stats.n_vertices,
            "pi": cm(self.pi),
            "pi_dual": cm(self.pi_dual),
            "symmetry_defect": self.symmetry_defect,
        }
        if error_vs_reference is not None:
            out["error_vs_reference"] = float(error_vs_reference)
        return out


class PeriodSolves:
    """The 2g basis harmonic solves and the conjugate-period tables.

    vp[k, j] is the conjugate (imaginary-part) period around cycle k of the
    harmonic minimizer with real period parts e_j.  Both period pipelines
    and the holomorphic integrals assemble linearly from these.
    """

    def __init__(self, mesh: CoverMesh, weights: WeightSet, cuts: CutSystem,
                 tol=DEFAULT_TOL, gauge_vertex: int = 0):
        self.mesh, self.weights, self.cuts, self.tol = mesh, weights, cuts, tol
        self.solver = HarmonicSolver(mesh, weights, tol, gauge_vertex)
        g = cuts.genus
        self.g = g
        self.basis = [self.solver.solve(cuts, np.eye(2 * g)[j])
                      for j in range(2 * g)]
        self.vp = np.column_stack([conjugate_periods(u, weights)
                                   for u in self.basis])

    def minimizer(self, P) -> MultiValuedVertexFunction:
        P = np.asarray(P, dtype=float)
        u0 = sum(P[j] * self.basis[j].base for j in range(2 * self.g))
        res = sum(abs(P[j]) * self.basis[j].residual for j in range(2 * self.g))
        return MultiValuedVertexFunction(base=u0, periods=P, cuts=self.cuts,
                                         residual=res)


def holomorphic_integral(mesh: CoverMesh, weights: WeightSet, cuts: CutSystem,
                         l: int, solves: PeriodSolves = None, tol=DEFAULT_TOL):
    """The discrete holomorphic integral with A-periods delta_{kl}.

    Returns (u, v, A, B): the harmonic real part, its conjugate face
    function, and the complex A- and B-period vectors.
    """
    solves = solves if solves is not None else PeriodSolves(mesh, weights, cuts, tol)
    g = solves.g
    if not 1 <= l <= g:
        raise ValidationError(f"index l must be in 1..{g}")
    MA, MB = solves.vp[:g, :g], solves.vp[:g, g:]
    NA, NB = solves.vp[g:, :g], solves.vp[g:, g:]
    e = np.eye(g)[l - 1]
    try:
        b = np.linalg.solve(MB, -MA @ e)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"degenerate mesh: conjugate period system singular ({exc})")
    P = np.concatenate([e, b])
    u = solves.minimizer(P)
    v = conjugate_function(u, mesh, weights, cuts, gauge_face=0)
    A = e + 1j * (solves.vp[:g] @ P)
    B = b + 1j * (solves.vp[g:] @ P)
    return u, v, A, B


def direct_period_matrices(solves: PeriodSolves):
    """Pi from B-period readout; the dual matrix from A-periods i delta_{kl}
    (real parts free, conjugate alpha-periods prescribed), columns over i."""
    g = solves.g
    MA, MB = solves.vp[:g, :g], solves.vp[:g, g:]
    try:
        MB_inv = np.linalg.inv(MB)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"degenerate mesh: conjugate period system singular ({exc})")
    pi = np.empty((g, g), dtype=complex)
    pi_dual = np.empty((g, g), dtype=complex)
    for l in range(g):
        e = np.eye(g)[l]
        b = MB_inv @ (-MA @ e)
        P = np.concatenate([e, b])
        pi[:, l] = b + 1j * (solves.vp[g:] @ P)
        # dual: Re A = 0, Im A = e  ->  B-periods divided by i
        bd = MB_inv @ e
        Pd = np.concatenate([np.zeros(g), bd])
        pi_dual[:, l] = (solves.vp[g:] @ Pd) - 1j * bd
    return pi, pi_dual


def energy_block_matrix(mesh: CoverMesh, weights: WeightSet, cuts: CutSystem,
                        solves: PeriodSolves = None, tol=DEFAULT_TOL) -> np.ndarray:
    """Quadratic form of the minimizer energy in the period vector P,
    assembled by polarization from solves at basis vectors and their sums."""
    solves = solves if solves is not None else PeriodSolves(mesh, weights, cuts, tol)
    g2 = 2 * solves.g

    def Q(P):
        return vertex_energy(solves.solver.solve(cuts, P), weights)

    E = np.empty((g2, g2))
    qi = [Q(np.eye(g2)[i]) for i in range(g2)]
    for i in range(g2):
        E[i, i] = qi[i]
        for j in range(i + 1, g2):
            qij = Q(np.eye(g2)[i] + np.eye(g2)[j])
            E[i, j] = E[j, i] = 0.5 * (qij - qi[i] - qi[j])
    return E


def period_matrices_from_energy(E: np.ndarray):
    """Invert the block structure of the energy form.

    With blocks E = [[E11, E12], [E21, E22]]: Im Pi* = E22^-1,
    Re Pi* = -E21 E22^-1, Re Pi = -E22^-1 E12, Im Pi = E11 - E21 E22^-1 E12.
    """
    E = np.asarray(E, dtype=float)
    n = len(E)
    if n % 2 != 0:
        raise ValidationError("energy matrix must be 2g x 2g")
    g = n // 2
    E11, E12 = E[:g, :g], E[:g, g:]
    E21, E22 = E[g:, :g], E[g:, g:]
    try:
        ev = np.linalg.eigvalsh(0.5 * (E22 + E22.T))
        if ev.min() <= 0:
            raise NumericError(f"E22 is not positive definite (min eig {ev.min():.3e})")
        E22_inv = np.linalg.inv(E22)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"E22 singular: {exc}")
    pi_dual = -E21 @ E22_inv + 1j * E22_inv
    pi = -E22_inv @ E12 + 1j * (E11 - E21 @ E22_inv @ E12)
    return pi, pi_dual


def energy_matrix_from_periods(pi: np.ndarray, pi_dual: np.ndarray) -> np.ndarray:
    """Forward block formula of the energy form from the two matrices."""
    ImD_inv = np.linalg.inv(pi_dual.imag)
    E11 = pi_dual.real @ ImD_inv @ pi.real + pi.imag
    E12 = -ImD_inv @ pi.real
    E21 = -pi_dual.real @ ImD_inv
    return np.block([[E11, E12], [E21, ImD_inv]])


def period_matrix(mesh: CoverMesh, weights: WeightSet, cuts: CutSystem,
                  method: str = "direct", tol=DEFAULT_TOL,
                  stats: MeshStats = None) -> PeriodResult:
    """Full period computation with the chosen pipeline.

    method "both" runs the two pipelines and enforces their agreement to the
    configured cross tolerance.
    """
    if method not in ("direct", "energy", "both"):
        raise ValidationError(f"unknown method {method!r}")
    if mesh.genus() < 1:
        raise ValidationError("period matrices need genus >= 1")
    solves = PeriodSolves(mesh, weights, cuts, tol)
    stats = stats if stats is not None else mesh_stats(mesh)

    pi_d = pi_dual_d = pi_e = pi_dual_e = None
    E = None
    if method in ("direct", "both"):
        pi_d, pi_dual_d = direct_period_matrices(solves)
    if method in ("energy", "both"):
        E = energy_block_matrix(mesh, weights, cuts, solves=solves, tol=tol)
        pi_e, pi_dual_e = period_matrices_from_energy(E)
    if E is None:
        E = energy_matrix_from_periods(pi_d, pi_dual_d)
    if method == "both":
        rel = np.linalg.norm(pi_d - pi_e) / max(np.linalg.norm(pi_d), 1e-300)
        if rel > tol.cross_tol:
            raise NumericError(f"direct and energy period matrices disagree: "
                               f"relative Frobenius {rel:.3e} > {tol.cross_tol}")
    pi = pi_d if pi_d is not None else pi_e
    pi_dual = pi_dual_d if pi_dual_d is not None else pi_dual_e
    ev = np.linalg.eigvalsh(0.5 * (pi.imag + pi.imag.T))
    if ev.min() <= 0:
        raise NumericError(f"Im Pi is not positive definite (min eig {ev.min():.3e})")
    return PeriodResult(pi=pi, pi_dual=pi_dual, energy_matrix=E, stats=stats,
                        method=method,
                        symmetry_defect=float(np.linalg.norm(pi - pi.T)))


def modular_reduce_genus1(tau: complex) -> complex:
    """SL(2,Z) representative in {|Re| <= 1/2, |tau| >= 1}, ties toward
    the Re <= 0 side of the boundary."""
    tau = complex(tau)
    if not np.isfinite(tau.real) or tau.imag <= 0:
        raise ValidationError(f"modular reduction needs Im tau > 0, got {tau}")
    for _ in range(512):
        tau -= round(tau.real)
        if abs(tau) < 1 - 1e-15:
            tau = -1 / tau
        else:
            break
    else:
        raise NumericError(f"modular reduction did not settle for {tau}")
    if abs(abs(tau) - 1) < 1e-14 and tau.real > 0:
        tau = -1 / tau
    if abs(tau.real - 0.5) < 1e-14:
        tau -= 1
    return tau


def _signed_permutations(g):
    for perm in itertools.permutations(range(g)):
        Pm = np.eye(g)[list(perm)]
        for signs in itertools.product((1.0, -1.0), repeat=g):
            yield np.diag(signs) @ Pm


def compare(result, reference: np.ndarray, mode: str = "direct") -> float:
    """Frobenius error against a reference period matrix.

    modular_g1 reduces both scalars to the fundamental domain first;
    signed_permutation minimizes over simultaneous symplectic signed
    permutations of the homology basis (W Pi W^T).
    """
    pi = result.pi if isinstance(result, PeriodResult) else np.asarray(result)
    reference = np.asarray(reference, dtype=complex)
    if pi.shape != reference.shape:
        raise ValidationError(f"shape mismatch {pi.shape} vs {reference.shape}")
    ev = np.linalg.eigvalsh(0.5 * (reference.imag + reference.imag.T))
    if ev.min() <= 0:
        raise ValidationError("reference matrix must have positive definite Im part")
    if mode == "direct":
        return float(np.linalg.norm(pi - reference))
    if mode == "modular_g1":
        if pi.shape != (1, 1):
            raise ValidationError("modular_g1 mode needs genus 1")
        t1 = modular_reduce_genus1(complex(pi[0, 0]))
        t2 = modular_reduce_genus1(complex(reference[0, 0]))
        return float(abs(t1 - t2))
    if mode == "signed_permutation":
        g = pi.shape[0]
        return float(min(np.linalg.norm(W @ pi @ W.T - reference)
                         for W in _signed_permutations(g)))
    raise ValidationError(f"unknown comparison mode {mode!r}")


def save_result_json(result: PeriodResult, path, curve: str = "",
                     error_vs_reference=None):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(result.to_json_dict(curve, error_vs_reference), fh, indent=1)
        fh.write("\n")
