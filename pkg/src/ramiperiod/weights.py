"""Edge weights: cotan, inverted-chart cotan, boundary quadrature, chords.

Weights are assembled per base edge (identical on every sheet) and expanded
to cover edges.  The boundary constants come from the Dirichlet energy of a
ruled interpolation over the region triangles straddling the circle |z|=rho;
the energy of that interpolation splits into three per-edge constants which
reduce to the classical half-cotangents when the circular arc degenerates to
a straight segment.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from .config import DEFAULT_TOL
from .covermesh import BOUNDARY, INNER, OUTER, CoverMesh, validate_for_weights
from .errors import GeometryError, NumericError, ValidationError

KIND_INTERIOR = "interior-cotan"
KIND_INVERTED = "inverted-cotan"
KIND_BOUNDARY = "boundary-quadrature"
KIND_SPHERICAL = "spherical-chord"


def base_edge_ids(tri):
    """(Fb,3) undirected base edge index per face corner, and edge count."""
    cache = getattr(tri, "_edge_id_cache", None)
    if cache is not None:
        return cache
    ids = {}
    out = np.empty((len(tri.faces), 3), dtype=np.int64)
    for f in range(len(tri.faces)):
        for i in range(3):
            a, b = int(tri.faces[f, i]), int(tri.faces[f, (i + 1) % 3])
            key = (min(a, b), max(a, b))
            out[f, i] = ids.setdefault(key, len(ids))
    tri._edge_id_cache = (out, len(ids))
    return tri._edge_id_cache


def _half_cot(p, q, r):
    """Half-cotangent of the angle at p in the chart triangle (p, q, r)."""
    u, v = q - p, r - p
    cross = abs((np.conj(u) * v).imag)
    if cross < 1e-300:
        raise GeometryError(f"degenerate chart triangle at {p}, {q}, {r}")
    return 0.5 * (np.conj(u) * v).real / cross


def _euclid_angles(a, b, c):
    out = []
    for p, q, r in ((a, b, c), (b, c, a), (c, a, b)):
        u, v = q - p, r - p
        out.append(np.arctan2(abs((np.conj(u) * v).imag), (np.conj(u) * v).real))
    return out


def boundary_weights(x, y, z, rho, tol=None):
    """The three edge constants of a boundary triangle with inner vertex x.

    The arc from y to z is parametrized by s(t) = yz/(z + t(y-z)); the
    constants are 1D integrals over t of smooth rational-in-s expressions.
    Replacing s by the straight parametrization reproduces the Euclidean
    cotan weights exactly, which is the oracle used in the tests.
    """
    tol = DEFAULT_TOL.quadrature_tol if tol is None else tol
    x, y, z = complex(x), complex(y), complex(z)
    if not (abs(x) < rho and abs(y) >= rho and abs(z) >= rho):
        raise ValidationError(
            f"boundary triangle must have exactly x inside |w|<rho: |x|={abs(x):.4g}, "
            f"|y|={abs(y):.4g}, |z|={abs(z):.4g}, rho={rho}")
    limit = max(rho / 2.0, 1.0)
    if max(abs(x - y), abs(y - z), abs(z - x)) >= limit:
        raise ValidationError("boundary triangle edge length exceeds max(rho/2, 1)")
    if min(_euclid_angles(x, y, z)) < 1e-6:
        raise GeometryError("boundary triangle is numerically degenerate")

    def s(t):
        return y * z / (z + t * (y - z))

    def sp(t):
        return y * z * (z - y) / (z + t * (y - z)) ** 2

    def parts(t):
        st, spt = s(t), sp(t)
        w = (st - x) * np.conj(spt)
        denom = abs(w.imag)
        if denom < 1e-300:
            raise GeometryError("vanishing Jacobian in boundary quadrature")
        return st, spt, w, denom

    def f_xy(t):
        st, spt, w, denom = parts(t)
        return ((1 - t) * abs(spt) ** 2 + w.real) / denom

    def f_yz(t):
        st, spt, w, denom = parts(t)
        return (abs(st - x) ** 2 + t * (t - 1) * abs(spt) ** 2 + (1 - 2 * t) * w.real) / denom

    def f_zx(t):
        st, spt, w, denom = parts(t)
        return (t * abs(spt) ** 2 - w.real) / denom

    out = []
    for f in (f_xy, f_yz, f_zx):
        val, err = quad(f, 0.0, 1.0, epsabs=0.0, epsrel=tol, limit=200)
        if not np.isfinite(val) or err > 10 * tol * (abs(val) + 1.0):
            raise NumericError(f"boundary quadrature did not converge: "
                               f"value {val}, error estimate {err}")
        out.append(0.5 * val)
    return tuple(out)


@dataclass
class WeightSet:
    """Per-edge weights with provenance and the cover-edge expansion."""

    base_weight: np.ndarray      # (Eb,)
    kind: list                   # (Eb,) tags
    cover_weight: np.ndarray     # (Ec,) same weights indexed by cover edge
    quadrature_tol: float
    mode: str = "chart"

    def of_halfedge(self, mesh: CoverMesh, h: int) -> float:
        return float(self.cover_weight[mesh.edge_of_halfedge[h]])


def _face_chart_coords(mesh: CoverMesh, f: int):
    tri = mesh.base
    zs = tri.z[tri.faces[f]]
    if mesh.region[f] == OUTER:
        out = np.empty(3, dtype=complex)
        for i, zz in enumerate(zs):
            out[i] = 0 if not np.isfinite(zz.real) else 1.0 / zz
        return out
    if not np.all(np.isfinite(zs.real)):
        raise ValidationError(f"non-outer face {f} touches infinity")
    return zs


def cotan_weight(mesh: CoverMesh, edge) -> float:
    """Plain two-sided cotan weight for an edge whose faces are both inner or
    both outer (cases (i)/(ii)); angles live in the z resp. 1/z chart."""
    f1, i1, f2, i2 = _edge_sides(mesh, edge)
    r1, r2 = mesh.region[f1], mesh.region[f2]
    if {r1, r2} not in ({INNER}, {OUTER}):
        raise ValidationError("cotan_weight needs both faces inner or both outer")
    c1 = _face_chart_coords(mesh, f1)
    c2 = _face_chart_coords(mesh, f2)
    return (_half_cot(c1[(i1 + 2) % 3], c1[i1], c1[(i1 + 1) % 3])
            + _half_cot(c2[(i2 + 2) % 3], c2[i2], c2[(i2 + 1) % 3]))


def _edge_sides(mesh: CoverMesh, edge):
    """Base (face, corner) on both sides of a base undirected edge id."""
    ids, _ = base_edge_ids(mesh.base)
    twin = mesh.base.face_adjacency()
    hits = np.argwhere(ids == edge)
    if len(hits) != 2:
        raise ValidationError(f"edge {edge} does not have two sides")
    (f1, i1), (f2, i2) = hits
    return int(f1), int(i1), int(f2), int(i2)


def chord_half_cots(p):
    """Half-cotangents opposite each edge of one R^3 chord triangle.

    p is a (3, 3) array of vertex positions; entry i is the contribution to
    the edge from vertex i to vertex i+1 (the angle at vertex i+2).
    """
    out = np.empty(3)
    for i in range(3):
        a, b, c = p[(i + 2) % 3], p[i], p[(i + 1) % 3]
        u, v = b - a, c - a
        cr = np.linalg.norm(np.cross(u, v))
        if cr < 1e-14:
            raise GeometryError("degenerate chord triangle")
        out[i] = 0.5 * np.dot(u, v) / cr
    return out


def spherical_chord_weights(mesh: CoverMesh) -> WeightSet:
    """Cotan weights of the straight R^3 chord triangles over the sphere."""
    tri = mesh.base
    ids, ne = base_edge_ids(tri)
    w = np.zeros(ne)
    P = tri.points
    for f in range(len(tri.faces)):
        try:
            w[ids[f]] += chord_half_cots(P[tri.faces[f]])
        except GeometryError as exc:
            raise GeometryError(f"face {f}: {exc}") from exc
    kinds = [KIND_SPHERICAL] * ne
    return _expand(mesh, w, kinds, DEFAULT_TOL.quadrature_tol, mode="spherical")


def build_weight_set(mesh: CoverMesh, mode: str = "chart", tol=None) -> WeightSet:
    """Dispatch the per-edge weight by the region tags of the incident faces."""
    if mode == "spherical":
        return spherical_chord_weights(mesh)
    if mode != "chart":
        raise ValidationError(f"unknown weight mode {mode!r}")
    tol = DEFAULT_TOL.quadrature_tol if tol is None else tol
    validate_for_weights(mesh)
    tri = mesh.base
    ids, ne = base_edge_ids(tri)
    w = np.zeros(ne)
    side_kind = np.zeros(ne, dtype=np.int8)  # max region of incident faces
    for f in range(len(tri.faces)):
        region = mesh.region[f]
        if region == BOUNDARY:
            zs = tri.z[tri.faces[f]]
            inside = np.abs(zs) < mesh.rho
            k = int(np.argmax(inside))
            x, y, z = zs[k], zs[(k + 1) % 3], zs[(k + 2) % 3]
            try:
                cxy, cyz, czx = boundary_weights(x, y, z, mesh.rho, tol)
            except (NumericError, GeometryError, ValidationError) as exc:
                raise type(exc)(f"face {f}: {exc}") from exc
            w[ids[f, k]] += cxy
            w[ids[f, (k + 1) % 3]] += cyz
            w[ids[f, (k + 2) % 3]] += czx
        else:
            coords = _face_chart_coords(mesh, f)
            for i in range(3):
                try:
                    w[ids[f, i]] += _half_cot(coords[(i + 2) % 3], coords[i],
                                              coords[(i + 1) % 3])
                except GeometryError as exc:
                    raise GeometryError(f"face {f}, edge corner {i}: {exc}") from exc
        np.maximum.at(side_kind, ids[f], region)
    kinds = [(KIND_BOUNDARY if k == BOUNDARY else KIND_INVERTED if k == OUTER
              else KIND_INTERIOR) for k in side_kind]
    return _expand(mesh, w, kinds, tol, mode="chart")


def _expand(mesh: CoverMesh, base_w, kinds, tol, mode) -> WeightSet:
    ids, _ = base_edge_ids(mesh.base)
    cover_w = np.empty(mesh.n_edges)
    for e in range(mesh.n_edges):
        h = int(mesh.edge_rep[e])
        bf, i = mesh.he_base_corner(h)
        cover_w[e] = base_w[ids[bf, i]]
    return WeightSet(base_weight=np.asarray(base_w, dtype=float), kind=kinds,
                     cover_weight=cover_w, quadrature_tol=tol, mode=mode)


# ----------------------------------------------------------------------------
# interpolation-energy oracle
# ----------------------------------------------------------------------------

def _linear_energy(coords, vals):
    """Dirichlet energy of the linear interpolant on a straight triangle."""
    p0, p1, p2 = coords
    M = np.array([[(p1 - p0).real, (p1 - p0).imag],
                  [(p2 - p0).real, (p2 - p0).imag]])
    det = np.linalg.det(M)
    if abs(det) < 1e-300:
        raise GeometryError("degenerate triangle in interpolation energy")
    grad = np.linalg.solve(M, np.array([vals[1] - vals[0], vals[2] - vals[0]]))
    return float(grad @ grad) * abs(det) / 2.0


_GL_CACHE = {}


def _gauss_legendre(n):
    if n not in _GL_CACHE:
        xs, ws = np.polynomial.legendre.leggauss(n)
        _GL_CACHE[n] = (0.5 * (xs + 1.0), 0.5 * ws)
    return _GL_CACHE[n]


def _ruled_energy(x, y, z, ux, uy, uz, order=32):
    """2D tensor quadrature of |grad I_T u|^2 over the ruled boundary triangle.

    Independent of the closed-form edge constants: the gradient is obtained by
    numerically inverting the parametrization Jacobian at each node.
    """
    ts, wt = _gauss_legendre(order)
    total = 0.0
    for t, w1 in zip(ts, wt):
        st = y * z / (z + t * (y - z))
        spt = y * z * (z - y) / (z + t * (y - z)) ** 2
        for sg, w2 in zip(ts, wt):
            Du = np.array([sg * (uz - uy), uy - ux + t * (uz - uy)])
            Dp = np.array([[sg * spt.real, (st - x).real],
                           [sg * spt.imag, (st - x).imag]])
            det = Dp[0, 0] * Dp[1, 1] - Dp[0, 1] * Dp[1, 0]
            if abs(det) < 1e-300:
                continue
            g = np.linalg.solve(Dp.T, Du)
            total += w1 * w2 * float(g @ g) * abs(det)
    return total


def interpolation_energy(mesh: CoverMesh, u, order=32) -> float:
    """Dirichlet energy of the piecewise interpolation of vertex values u.

    Linear on inner faces, pulled-back linear through 1/z on outer faces,
    ruled interpolation on boundary faces.  Serves as the independent oracle
    for the weighted sum-of-squares energy.
    """
    u = np.asarray(u, dtype=float)
    tri = mesh.base
    total = 0.0
    for cf in range(mesh.n_faces):
        f = int(mesh.face_base[cf])
        vals = u[mesh.faces[cf]]
        region = mesh.region[f]
        if region == BOUNDARY:
            zs = tri.z[tri.faces[f]]
            inside = np.abs(zs) < mesh.rho
            k = int(np.argmax(inside))
            total += _ruled_energy(zs[k], zs[(k + 1) % 3], zs[(k + 2) % 3],
                                   vals[k], vals[(k + 1) % 3], vals[(k + 2) % 3],
                                   order=order)
        else:
            coords = _face_chart_coords(mesh, f)
            total += _linear_energy(coords, vals)
    return total
