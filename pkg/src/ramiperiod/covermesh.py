"""Lifting a base sphere triangulation to the branched covering.

The covering is realized combinatorially: every base face gets d copies, and
crossing from a face copy into a neighbor applies a sheet permutation.  The
permutations are computed geometrically from a star of branch cuts (straight
segments from the origin to every finite branch point, plus a ray to infinity
when the covering branches there).  Vertex copies are the connected
components of face corners under the induced gluing, which identifies sheet
copies around branch vertices according to the monodromy cycles.

All faces use the same planar triangulation on every sheet, so edge weights
and chart geometry are computed once on the base.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .covering import BranchedCover, compose, invert, permutation_cycles
from .errors import (DegeneracyError, TopologyError, ValidationError)
from .meshgen import BaseTriangulation, inverse_stereographic, stereographic

INNER, BOUNDARY, OUTER = 0, 1, 2
REGION_NAMES = {INNER: "inner", BOUNDARY: "boundary", OUTER: "outer"}


def classify_faces(tri: BaseTriangulation, rho: float) -> np.ndarray:
    """Region tag per base face: inner (>=2 vertices in B_rho), outer (none),
    boundary otherwise.  Faces touching infinity are always outer."""
    z = tri.z
    finite = np.isfinite(z.real)
    inside = finite & (np.abs(np.where(finite, z, 0)) < rho)
    cnt = inside[tri.faces].sum(axis=1)
    has_inf = (~finite[tri.faces]).any(axis=1)
    tags = np.where(cnt >= 2, INNER, np.where(cnt == 0, OUTER, BOUNDARY))
    tags[has_inf] = OUTER
    return tags.astype(np.int8)


def _face_centroids_z(tri):
    return tri.z[tri.faces].mean(axis=1)


def _seg_cut_crossings(A, B, cut_p):
    """Crossing parameters/signs of segments [A,B] against the cut [0, cut_p].

    Returns (idx, t, sign) arrays; t in [0,1) along the segment, sign +1 when
    the crossing goes counterclockwise around the branch point.
    """
    u = B - A
    den = (cut_p.real * u.imag - cut_p.imag * u.real)  # cross(cut, u)
    with np.errstate(divide="ignore", invalid="ignore"):
        # A + t u = s cut_p: cross with cut_p resp. u eliminates one unknown
        t = (A.real * cut_p.imag - A.imag * cut_p.real) / den
        s = (A.real * u.imag - A.imag * u.real) / den
    ok = (np.abs(den) > 1e-300) & (t >= 0) & (t < 1) & (s > 0) & (s < 1)
    relevant = (np.abs(den) > 1e-300) & (s > 1e-9) & (s < 1 - 1e-9)
    fragile = relevant & ((np.abs(t) < 1e-11) | (np.abs(t - 1) < 1e-11))
    if np.any(fragile):
        # an endpoint of the reference path sits on the cut: crossing parity
        # would depend on rounding
        k = int(np.nonzero(fragile)[0][0])
        raise DegeneracyError(
            f"reference path endpoint lies on a branch cut (t={t[k]:.2e}); "
            "regenerate the mesh with a different seed")
    idx = np.nonzero(ok)[0]
    sign = np.where(den[idx] > 0, -1, 1)  # CCW around P crosses cut left-to-right
    near_tip = ok & (np.abs(s - 1) < 1e-12)
    if np.any(near_tip):
        raise DegeneracyError("reference path passes through a branch point; "
                              "regenerate the mesh with a different seed")
    return idx, t[idx], sign


def _seg_ray_crossings(A, B, theta):
    """Crossings of segments [A,B] with the ray {t e^{i theta}: t>0} in-chart.

    sign is +1 for a counterclockwise pass around the chart origin's far end,
    i.e. the convention of a finite branch point sitting at infinity of this
    chart.  Used for the cut to a branch point at infinity.
    """
    e = cmath.exp(1j * theta)
    u = B - A
    den = (e.real * u.imag - e.imag * u.real)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (A.real * e.imag - A.imag * e.real) / den
        s = (A.real * u.imag - A.imag * u.real) / den
    ok = (np.abs(den) > 1e-300) & (t >= 0) & (t < 1) & (s > 0)
    idx = np.nonzero(ok)[0]
    # opposite sign rule: the branched end of this cut is at chart infinity
    sign = np.where(den[idx] > 0, 1, -1)
    return idx, t[idx], sign


class _DSU:
    def __init__(self, n):
        self.parent = np.arange(n, dtype=np.int64)

    def find(self, i):
        p = self.parent
        root = i
        while p[root] != root:
            root = p[root]
        while p[i] != root:
            p[i], i = root, p[i]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


@dataclass
class CoverMesh:
    """Half-edge triangulation of the covering.

    Faces are indexed so that cover face base_f * d + s is the sheet-s copy
    of base face base_f.  Half-edge h = 3*cf + corner has its usual implicit
    next/prev inside the face; twins are stored explicitly.
    """

    base: BaseTriangulation
    cover: BranchedCover
    degree: int
    faces: np.ndarray            # (Fc, 3) cover vertex ids
    face_base: np.ndarray        # (Fc,) base face index
    face_sheet: np.ndarray       # (Fc,) sheet label
    twin: np.ndarray             # (3*Fc,) half-edge index of the twin
    vertex_base: np.ndarray      # (Vc,) base vertex index
    vertex_sheet: np.ndarray     # (Vc,) representative sheet
    vertex_branch: np.ndarray    # (Vc,) branch point index or -1
    vertex_gamma: np.ndarray     # (Vc,) aperture factor 1/winding
    region: np.ndarray           # (Fb,) region tag per base face
    rho: float

    # derived, filled in __post_init__
    n_vertices: int = field(init=False)
    edge_of_halfedge: np.ndarray = field(init=False)
    edge_rep: np.ndarray = field(init=False)
    vertex_halfedge: np.ndarray = field(init=False)

    def __post_init__(self):
        self.n_vertices = int(self.faces.max()) + 1
        nh = 3 * len(self.faces)
        rep = np.minimum(np.arange(nh), self.twin)
        uniq, inv = np.unique(rep, return_inverse=True)
        self.edge_of_halfedge = inv.astype(np.int64)
        self.edge_rep = uniq.astype(np.int64)
        self.vertex_halfedge = np.full(self.n_vertices, -1, dtype=np.int64)
        origins = self.origin_all()
        for h in range(nh - 1, -1, -1):
            self.vertex_halfedge[origins[h]] = h

    # -- half-edge navigation -------------------------------------------------
    def origin_all(self):
        return self.faces[np.repeat(np.arange(len(self.faces)), 3),
                          np.tile(np.arange(3), len(self.faces))]

    def he_face(self, h):
        return h // 3

    def he_next(self, h):
        return (h // 3) * 3 + (h % 3 + 1) % 3

    def he_prev(self, h):
        return (h // 3) * 3 + (h % 3 + 2) % 3

    def he_origin(self, h):
        return self.faces[h // 3, h % 3]

    def he_head(self, h):
        return self.faces[h // 3, (h % 3 + 1) % 3]

    def he_rotate_ccw(self, h):
        """Next half-edge out of the same origin, counterclockwise."""
        return int(self.twin[self.he_prev(h)])

    def vertex_star(self, v):
        """Half-edges out of cover vertex v in counterclockwise order."""
        h0 = int(self.vertex_halfedge[v])
        out = [h0]
        h = self.he_rotate_ccw(h0)
        while h != h0:
            out.append(h)
            h = self.he_rotate_ccw(h)
            if len(out) > 3 * len(self.faces):
                raise TopologyError(f"vertex star of {v} does not close")
        return out

    @property
    def n_faces(self):
        return len(self.faces)

    @property
    def n_edges(self):
        return len(self.edge_rep)

    def euler_characteristic(self):
        return self.n_vertices - self.n_edges + self.n_faces

    def genus(self):
        chi = self.euler_characteristic()
        if chi % 2 != 0:
            raise TopologyError(f"odd Euler characteristic {chi}")
        return (2 - chi) // 2

    def he_base_corner(self, h):
        """(base face, corner) of half-edge h."""
        return int(self.face_base[h // 3]), h % 3

    def base_edge_key(self, h):
        bf, i = self.he_base_corner(h)
        a = self.base.faces[bf, i]
        b = self.base.faces[bf, (i + 1) % 3]
        return (min(a, b), max(a, b))

    def positions_z(self):
        """Planar position per cover vertex (same as its base vertex)."""
        return self.base.z[self.vertex_base]

    def validate_manifold(self):
        nh = 3 * self.n_faces
        tw = self.twin
        if np.any(tw < 0) or np.any(tw >= nh):
            raise TopologyError("twin out of range")
        if np.any(tw[tw] != np.arange(nh)):
            raise TopologyError("twin is not an involution")
        if np.any(tw == np.arange(nh)):
            raise TopologyError("half-edge is its own twin")
        for h in range(nh):
            t = tw[h]
            if (self.he_origin(h) != self.he_head(t)
                    or self.he_head(h) != self.he_origin(t)):
                raise TopologyError(f"twin of {h} does not reverse its endpoints")


def compute_transitions(tri: BaseTriangulation, cover: BranchedCover):
    """Sheet permutation per base half-edge, from geometric cut crossings.

    Returns (perm_id array of shape (Fb,3), perms list).  perm_id[f,i] is the
    transition applied when crossing from face f into its neighbor across the
    edge at corner i.
    """
    d = cover.degree
    ident = tuple(range(d))
    F = len(tri.faces)
    twin = tri.face_adjacency()
    perm_id = np.zeros((F, 3), dtype=np.int64)
    perms = [ident]
    if d == 1 or not cover.branch_points:
        return perm_id, perms
    perm_index = {ident: 0}

    z = tri.z
    finite = np.isfinite(z.real)
    both_out = np.zeros((F, 3), dtype=bool)
    for i in range(3):
        a = tri.faces[:, i]
        b = tri.faces[:, (i + 1) % 3]
        a_out = ~finite[a] | (np.abs(np.where(finite[a], z[a], 0)) >= cover.rho)
        b_out = ~finite[b] | (np.abs(np.where(finite[b], z[b], 0)) >= cover.rho)
        both_out[:, i] = a_out & b_out

    # canonical dual edges: one per unordered face pair
    he_f, he_i = np.nonzero(np.ones((F, 3), dtype=bool))
    tw_f = twin[he_f, he_i, 0]
    tw_i = twin[he_f, he_i, 1]
    canon = (he_f < tw_f) | ((he_f == tw_f) & (he_i < tw_i))

    inf_bp = next((bp for bp in cover.branch_points if bp.is_infinity), None)
    theta_inf = None
    if inf_bp is not None:
        finite_args = [cmath.phase(bp.position) % (2 * math.pi)
                       for bp in cover.finite_branch_points]
        if finite_args:
            last, first = finite_args[-1], finite_args[0] + 2 * math.pi
            theta_inf = ((last + first) / 2) % (2 * math.pi)
        else:
            theta_inf = 0.0

    # straight dual steps: centroid-to-centroid z segments
    straight = canon & ~both_out[he_f, he_i]
    sf, si = he_f[straight], he_i[straight]
    if np.any(straight):
        zc = _face_centroids_z(tri)
        for f in (sf, twin[sf, si, 0]):
            if not np.all(np.isfinite(zc[f].real)):
                raise ValidationError("a face with a vertex at infinity has a vertex "
                                      "inside B_rho: mesh too coarse for this covering")
        A = zc[sf]
        B = zc[twin[sf, si, 0]]
        events = {}  # (k) -> list of (t, bp_index, sign)
        for bi, bp in enumerate(cover.branch_points):
            if bp.is_infinity:
                idx, t, sign = _seg_ray_crossings(A, B, theta_inf)
            else:
                idx, t, sign = _seg_cut_crossings(A, B, np.complex128(bp.position))
            for k, tk, sk in zip(idx, t, sign):
                events.setdefault(int(k), []).append((float(tk), bi, int(sk)))
        _apply_events(events, sf, si, twin, cover, perm_id, perms, perm_index)

    # arc dual steps (shared edge fully outside B_rho): the path runs through
    # the arc midpoint; the 1/z image of the arc is a straight segment, so the
    # two pieces live in whichever chart suits each incident face.
    arcs = canon & both_out[he_f, he_i]
    af, ai = he_f[arcs], he_i[arcs]
    if np.any(arcs):
        events = {}
        inf_bi = len(cover.branch_points) - 1 if inf_bp is not None else None
        for k in range(len(af)):
            f, i = int(af[k]), int(ai[k])
            f2 = int(twin[f, i, 0])
            a, b = tri.faces[f, i], tri.faces[f, (i + 1) % 3]
            wa = 0 if not finite[a] else 1.0 / z[a]
            wb = 0 if not finite[b] else 1.0 / z[b]
            wmid = 0.5 * (wa + wb)
            pieces = []  # (chart, start, end) traversed f -> f2
            for face, into_mid in ((f, True), (f2, False)):
                zs = z[tri.faces[face]]
                if np.all(np.isfinite(zs.real)) and np.any(np.abs(zs) < cover.rho):
                    ends = (zs.mean(), 1.0 / wmid) if into_mid else (1.0 / wmid, zs.mean())
                    pieces.append(("z",) + ends)
                else:
                    with np.errstate(divide="ignore"):
                        wc = np.mean([0 if not finite[v] else 1.0 / z[v]
                                      for v in tri.faces[face]])
                    ends = (wc, wmid) if into_mid else (wmid, wc)
                    pieces.append(("w",) + ends)
            evs = []
            for pno, (chart, P, Q) in enumerate(pieces):
                base_order = float(pno)
                if chart == "z":
                    for bi, bp in enumerate(cover.branch_points):
                        if bp.is_infinity:
                            idx, t, sign = _seg_ray_crossings(np.array([P]), np.array([Q]), theta_inf)
                        else:
                            idx, t, sign = _seg_cut_crossings(np.array([P]), np.array([Q]),
                                                              np.complex128(bp.position))
                        for tk, sk in zip(t, sign):
                            evs.append((base_order + float(tk), bi, int(sk)))
                elif inf_bi is not None:
                    # w chart: the infinity branch point sits at the origin and
                    # its cut is the ray at angle -theta_inf
                    cutw = np.complex128((2.0 / cover.rho) * cmath.exp(-1j * theta_inf))
                    idx, t, sign = _seg_cut_crossings(np.array([P]), np.array([Q]), cutw)
                    for tk, sk in zip(t, sign):
                        evs.append((base_order + float(tk), inf_bi, int(sk)))
            if evs:
                events[k] = evs
        if events:
            _apply_events(events, af, ai, twin, cover, perm_id, perms, perm_index)

    return perm_id, perms


def _apply_events(events, ef, ei, twin, cover, perm_id, perms, perm_index):
    for k, evs in events.items():
        evs.sort()
        tau = tuple(range(cover.degree))
        for _, bi, sk in evs:
            sigma = cover.branch_points[bi].monodromy
            if sk < 0:
                sigma = invert(sigma)
            tau = compose(sigma, tau)
        if tau == tuple(range(cover.degree)):
            continue
        f, i = int(ef[k]), int(ei[k])
        f2, i2 = int(twin[f, i, 0]), int(twin[f, i, 1])
        for t, (ff, ii) in ((tau, (f, i)), (invert(tau), (f2, i2))):
            if t not in perm_index:
                perm_index[t] = len(perms)
                perms.append(t)
            perm_id[ff, ii] = perm_index[t]


def _check_vertex_fans(tri, cover, perm_id, perms, branch_where):
    """Walk each base vertex fan counterclockwise and verify the composed
    transition: identity at regular vertices, conjugate of the monodromy
    (same cycle type) at branch vertices."""
    twin = tri.face_adjacency()
    F = len(tri.faces)
    v_first = {}
    for f in range(F):
        for i in range(3):
            v_first.setdefault(int(tri.faces[f, i]), (f, i))
    branch_at = {v: bi for bi, v in branch_where.items()}
    ident = tuple(range(cover.degree))
    for v, (f0, i0) in v_first.items():
        f, i = f0, i0
        tau = ident
        while True:
            # cross the edge at corner prev(i) from face f, counterclockwise
            ip = (i + 2) % 3
            tau = compose(perms[perm_id[f, ip]], tau)
            f2, i2 = twin[f, ip]
            f, i = int(f2), int(i2)
            if (f, i) == (f0, i0):
                break
        bi = branch_at.get(v)
        if bi is None:
            if tau != ident:
                raise TopologyError(f"fan around regular vertex {v} composes to {tau}")
        else:
            want = sorted(len(c) for c in cover.branch_points[bi].cycles)
            got = sorted(len(c) for c in permutation_cycles(tau))
            if want != got:
                raise TopologyError(f"fan around branch vertex {v} has cycle type "
                                    f"{got}, expected {want}")


def lift_to_cover(tri: BaseTriangulation, cover: BranchedCover) -> CoverMesh:
    """Build the covering mesh: d face copies glued by the cut transitions."""
    cover.require_valid()
    for bi in range(len(cover.branch_points)):
        if bi not in tri.branch_vertex:
            raise ValidationError(f"branch point {bi} is not a vertex of the base mesh")
    d = cover.degree
    F = len(tri.faces)
    perm_id, perms = compute_transitions(tri, cover)
    _check_vertex_fans(tri, cover, perm_id, perms, tri.branch_vertex)
    twin_base = tri.face_adjacency()

    # corners of cover faces: id = (f*d + s)*3 + corner
    dsu = _DSU(3 * F * d)
    for f in range(F):
        for i in range(3):
            f2, i2 = int(twin_base[f, i, 0]), int(twin_base[f, i, 1])
            if (f2, i2) < (f, i):
                continue
            tau = perms[perm_id[f, i]]
            for s in range(d):
                s2 = tau[s]
                # origin of (f,i) = head of twin; head of (f,i) = origin of twin
                dsu.union((f * d + s) * 3 + i, (f2 * d + s2) * 3 + (i2 + 1) % 3)
                dsu.union((f * d + s) * 3 + (i + 1) % 3, (f2 * d + s2) * 3 + i2)

    roots = np.fromiter((dsu.find(i) for i in range(3 * F * d)), dtype=np.int64)
    uniq, newid = np.unique(roots, return_inverse=True)
    Vc = len(uniq)
    faces_c = np.empty((F * d, 3), dtype=np.int64)
    face_base = np.repeat(np.arange(F), d)
    face_sheet = np.tile(np.arange(d), F)
    for f in range(F):
        for s in range(d):
            cf = f * d + s
            for i in range(3):
                faces_c[cf, i] = newid[(cf) * 3 + i]

    vertex_base = np.full(Vc, -1, dtype=np.int64)
    vertex_sheet = np.full(Vc, d, dtype=np.int64)
    corner_count = np.zeros(Vc, dtype=np.int64)
    for f in range(F):
        for s in range(d):
            cf = f * d + s
            for i in range(3):
                cv = faces_c[cf, i]
                vertex_base[cv] = tri.faces[f, i]
                vertex_sheet[cv] = min(vertex_sheet[cv], s)
                corner_count[cv] += 1

    # branch bookkeeping: winding of each cover vertex = corners here / corners
    # of the base vertex fan
    base_fan = np.zeros(tri.n_vertices, dtype=np.int64)
    for f in range(F):
        for i in range(3):
            base_fan[tri.faces[f, i]] += 1
    vertex_branch = np.full(Vc, -1, dtype=np.int64)
    vertex_gamma = np.ones(Vc)
    branch_at = {v: bi for bi, v in tri.branch_vertex.items()}
    for cv in range(Vc):
        bv = vertex_base[cv]
        wind = corner_count[cv] // base_fan[bv]
        if corner_count[cv] != wind * base_fan[bv]:
            raise TopologyError(f"cover vertex {cv} has a fractional fan")
        vertex_gamma[cv] = 1.0 / wind
        if bv in branch_at and wind > 1:
            vertex_branch[cv] = branch_at[bv]

    # cover twins
    twin_c = np.empty(3 * F * d, dtype=np.int64)
    for f in range(F):
        for i in range(3):
            f2, i2 = int(twin_base[f, i, 0]), int(twin_base[f, i, 1])
            tau = perms[perm_id[f, i]]
            for s in range(d):
                twin_c[(f * d + s) * 3 + i] = (f2 * d + tau[s]) * 3 + i2

    mesh = CoverMesh(base=tri, cover=cover, degree=d, faces=faces_c,
                     face_base=face_base, face_sheet=face_sheet, twin=twin_c,
                     vertex_base=vertex_base, vertex_sheet=vertex_sheet,
                     vertex_branch=vertex_branch, vertex_gamma=vertex_gamma,
                     region=classify_faces(tri, cover.rho), rho=cover.rho)
    mesh.validate_manifold()
    g = cover.genus()
    if cover.degree > 1 and mesh.euler_characteristic() != 2 - 2 * g:
        raise TopologyError(f"Euler characteristic {mesh.euler_characteristic()} "
                            f"differs from 2-2g = {2 - 2 * g}")
    return mesh


# ----------------------------------------------------------------------------
# mesh statistics
# ----------------------------------------------------------------------------

@dataclass
class MeshStats:
    h: float
    min_angle: float
    max_opposite_sum: float
    max_local_density: int
    n_vertices: int
    n_faces: int


def _chart_coords(tri: BaseTriangulation, region: np.ndarray):
    """Per-face 3 chart coordinates: z for inner/boundary, 1/z for outer."""
    z = tri.z[tri.faces]
    coords = np.array(z, copy=True)
    outer = region == OUTER
    with np.errstate(divide="ignore", invalid="ignore"):
        w = 1.0 / z[outer]
    w[~np.isfinite(z[outer].real)] = 0
    coords[outer] = w
    return coords


def _face_angles(coords):
    """Angles at the three corners of each chart triangle."""
    a, b, c = coords[:, 0], coords[:, 1], coords[:, 2]
    out = np.empty_like(coords, dtype=float)
    for k, (p, q, r) in enumerate(((a, b, c), (b, c, a), (c, a, b))):
        u, v = q - p, r - p
        dot = (u * np.conj(v)).real
        cr = np.abs((u * np.conj(v)).imag)
        out[:, k] = np.arctan2(cr, dot)
    return out


def mesh_stats(mesh: CoverMesh) -> MeshStats:
    """Maximal edge length (chart convention), minimal chart angle, Delaunay
    witness, and the chart-corrected local vertex density."""
    tri = mesh.base
    region = mesh.region
    coords = _chart_coords(tri, region)
    dists = np.stack([np.abs(coords[:, 0] - coords[:, 1]),
                      np.abs(coords[:, 1] - coords[:, 2]),
                      np.abs(coords[:, 2] - coords[:, 0])], axis=1)
    h = float(dists.max())
    angles = _face_angles(coords)
    min_angle = float(angles.min())

    # opposite-angle sums per base undirected edge (each side in its own chart)
    twin = tri.face_adjacency()
    opp_sum = 0.0
    for f in range(len(tri.faces)):
        for i in range(3):
            f2, i2 = int(twin[f, i, 0]), int(twin[f, i, 1])
            if (f2, i2) < (f, i):
                continue
            s = angles[f, (i + 2) % 3] + angles[f2, (i2 + 2) % 3]
            opp_sum = max(opp_sum, s)

    density = _local_density(mesh, h)
    return MeshStats(h=h, min_angle=min_angle, max_opposite_sum=float(opp_sum),
                     max_local_density=density, n_vertices=mesh.n_vertices,
                     n_faces=mesh.n_faces)


def _local_density(mesh: CoverMesh, h: float) -> int:
    """Max number of vertices in an intrinsic disk of radius h, counting in
    the branch-point charts inside each adaptation disk."""
    tri = mesh.base
    z = tri.z
    finite = np.isfinite(z.real)
    best = 0
    in_disk = np.zeros(tri.n_vertices, dtype=bool)
    for bp in mesh.cover.finite_branch_points:
        in_disk |= finite & (np.abs(np.where(finite, z, np.inf) - bp.position) < bp.r_adapt)
    ambient = finite & ~in_disk & (np.abs(np.where(finite, z, np.inf)) < mesh.rho + h)
    if ambient.sum() > 1:
        pts = np.column_stack([z[ambient].real, z[ambient].imag])
        tree = cKDTree(pts)
        best = max(best, max(len(q) for q in tree.query_ball_point(pts, h)))
    out = ~finite | (np.abs(np.where(finite, z, np.inf)) > mesh.rho - h)
    if out.sum() > 1:
        w = np.where(finite[out], 1.0 / np.where(z[out] == 0, np.nan, z[out]), 0)
        pts = np.column_stack([w.real, w.imag])
        tree = cKDTree(pts)
        best = max(best, max(len(q) for q in tree.query_ball_point(pts, h)))
    for chart_pts in branch_chart_positions(mesh).values():
        if len(chart_pts) > 1:
            pts = np.column_stack([chart_pts.real, chart_pts.imag])
            tree = cKDTree(pts)
            best = max(best, max(len(q) for q in tree.query_ball_point(pts, h)))
    return int(best)


def branch_chart_positions(mesh: CoverMesh):
    """Chart images of cover vertices inside each adaptation disk.

    For every branch cover vertex the surrounding faces are developed to a
    continuous angle around the branch point (across sheets), and vertices
    map through r^gamma e^{i gamma phi}.  Returns {cover vertex id of the
    branch point: complex ndarray of chart positions}.
    """
    tri = mesh.base
    z = tri.z
    out = {}
    for cv in np.nonzero(mesh.vertex_branch >= 0)[0]:
        bi = mesh.vertex_branch[cv]
        bp = mesh.cover.branch_points[bi]
        if bp.is_infinity:
            def loc(vals):
                vals = np.atleast_1d(np.asarray(vals, dtype=complex))
                out = np.full(vals.shape, complex(np.inf, 0))
                ok = np.isfinite(vals.real) & (vals != 0)
                out[ok] = 1.0 / vals[ok]
                out[~np.isfinite(vals.real)] = 0
                return out
        else:
            def loc(vals, p=bp.position):
                return np.atleast_1d(np.asarray(vals, dtype=complex)) - p
        gamma = mesh.vertex_gamma[cv]
        # faces fully inside the disk, BFS development of centroid angles
        star = mesh.vertex_star(int(cv))
        seed_faces = {h // 3 for h in star}
        zl = loc(z)
        face_ok = np.all(np.abs(zl[tri.faces[mesh.face_base]]) < bp.r_adapt, axis=1)
        lift = {}
        stack = []
        for cf in seed_faces:
            if face_ok[cf] and cf not in lift:
                c = zl[tri.faces[mesh.face_base[cf]]].mean()
                lift[cf] = cmath.phase(c) % (2 * math.pi)
                stack.append(cf)
        while stack:
            cf = stack.pop()
            ccur = zl[tri.faces[mesh.face_base[cf]]].mean()
            for i in range(3):
                nb = int(mesh.twin[3 * cf + i]) // 3
                if not face_ok[nb] or nb in lift:
                    continue
                cn = zl[tri.faces[mesh.face_base[nb]]].mean()
                dphi = cmath.phase(cn / ccur)
                lift[nb] = lift[cf] + dphi
                stack.append(nb)
        pos = {}
        for cf, psi_c in lift.items():
            corners = zl[tri.faces[mesh.face_base[cf]]]
            zc = corners.mean()
            for i in range(3):
                v = int(mesh.faces[cf, i])
                zv = corners[i]
                if zv == 0:
                    pos[v] = 0j
                    continue
                psi = psi_c + cmath.phase(zv / zc)
                pos[v] = abs(zv) ** gamma * cmath.exp(1j * gamma * psi)
        out[int(cv)] = np.array(list(pos.values()), dtype=complex)
    return out


def validate_for_weights(mesh: CoverMesh):
    """Checks the standing geometric assumptions needed by the weight rules."""
    tri = mesh.base
    z = tri.z
    finite = np.isfinite(z.real)
    bad = []
    limit = max(mesh.rho / 2.0, 1.0)
    for f in np.nonzero(mesh.region == BOUNDARY)[0]:
        zs = z[tri.faces[f]]
        if not np.all(np.isfinite(zs.real)):
            bad.append(f"boundary face {f} touches infinity")
            continue
        for i in range(3):
            L = abs(zs[i] - zs[(i + 1) % 3])
            if L >= limit:
                bad.append(f"boundary face {f} edge length {L:.4g} >= {limit:.4g}")
    for f in np.nonzero(mesh.region != OUTER)[0]:
        if not np.all(finite[tri.faces[f]]):
            bad.append(f"non-outer face {f} touches infinity")
    if bad:
        raise ValidationError("mesh violates weight assumptions: " + "; ".join(bad[:5]))


# ----------------------------------------------------------------------------
# .rpm cache format
# ----------------------------------------------------------------------------

def save_rpm(mesh: CoverMesh, path):
    """Write the cover mesh cache (text): vertices with sheet/position/flags
    and counterclockwise faces.  Region tags and stats are never stored."""
    lines = ["RPM 1", f"RHO {float(mesh.rho)!r}", f"V {mesh.n_vertices}"]
    z = mesh.positions_z()
    for v in range(mesh.n_vertices):
        flag = f"B:{mesh.vertex_branch[v]}" if mesh.vertex_branch[v] >= 0 else "-"
        if np.isfinite(z[v].real):
            lines.append(f"{v} {mesh.vertex_sheet[v]} {float(z[v].real)!r} "
                         f"{float(z[v].imag)!r} {flag}")
        else:
            lines.append(f"{v} {mesh.vertex_sheet[v]} inf {flag}")
    lines.append(f"F {mesh.n_faces}")
    for f in range(mesh.n_faces):
        lines.append("{} {} {}".format(*mesh.faces[f]))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_rpm(path, cover: BranchedCover | None = None) -> CoverMesh:
    """Rebuild a CoverMesh from the cache; the covering structure is encoded
    in the face-vertex incidence; tags, twins and stats are recomputed."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            tokens = [line.split() for line in fh if line.strip()]
    except OSError as exc:
        raise ValidationError(f"cannot read mesh file {path}: {exc}") from exc
    if tokens[0] != ["RPM", "1"]:
        raise ValidationError(f"{path}: not an RPM 1 file")
    rho = float(tokens[1][1])
    nv = int(tokens[2][1])
    z = np.empty(nv, dtype=complex)
    sheet = np.empty(nv, dtype=np.int64)
    branch = np.full(nv, -1, dtype=np.int64)
    for row in tokens[3:3 + nv]:
        v = int(row[0])
        sheet[v] = int(row[1])
        if row[2] == "inf":
            z[v] = complex(np.inf, 0)
            flag = row[3]
        else:
            z[v] = complex(float(row[2]), float(row[3]))
            flag = row[4]
        if flag.startswith("B:"):
            branch[v] = int(flag[2:])
    nf = int(tokens[3 + nv][1])
    faces = np.array([[int(x) for x in row] for row in tokens[4 + nv:4 + nv + nf]],
                     dtype=np.int64)
    return _assemble_from_cover_faces(z, sheet, branch, faces, rho, cover)


def _assemble_from_cover_faces(z, sheet, branch, faces, rho, cover):
    """Shared reconstruction path: derive base mesh, twins and bookkeeping
    from explicit cover faces."""
    nv = len(z)
    keys = [(repr(z[v].real), repr(z[v].imag)) if np.isfinite(z[v].real) else ("inf", "")
            for v in range(nv)]
    base_of = np.empty(nv, dtype=np.int64)
    base_index = {}
    for v in range(nv):
        base_of[v] = base_index.setdefault(keys[v], len(base_index))
    nb = len(base_index)
    zb = np.empty(nb, dtype=complex)
    for v in range(nv):
        zb[base_of[v]] = z[v]

    base_faces_map = {}
    face_base = np.empty(len(faces), dtype=np.int64)
    for f, tri_f in enumerate(faces):
        key = tuple(base_of[tri_f])
        kmin = min(range(3), key=lambda i: (key[i], key[(i + 1) % 3]))
        canon = tuple(key[(kmin + j) % 3] for j in range(3))
        face_base[f] = base_faces_map.setdefault(canon, len(base_faces_map))
    bfaces = np.empty((len(base_faces_map), 3), dtype=np.int64)
    for canon, bf in base_faces_map.items():
        bfaces[bf] = canon
    if len(faces) % len(base_faces_map) != 0:
        raise TopologyError("cover face count is not a multiple of the base face count")
    d = len(faces) // len(base_faces_map)

    tri = BaseTriangulation(points=inverse_stereographic(zb), z=zb, faces=bfaces)
    branch_vertex = {}
    for v in range(nv):
        if branch[v] >= 0:
            branch_vertex[int(branch[v])] = int(base_of[v])
    tri.branch_vertex = branch_vertex

    # cover twins from incidence
    look = {}
    for f, tri_f in enumerate(faces):
        for i in range(3):
            a, b = int(tri_f[i]), int(tri_f[(i + 1) % 3])
            if (a, b) in look:
                raise TopologyError(f"directed cover edge {a}->{b} seen twice")
            look[(a, b)] = 3 * f + i
    twin = np.empty(3 * len(faces), dtype=np.int64)
    for (a, b), h in look.items():
        if (b, a) not in look:
            raise TopologyError(f"unmatched cover edge {a}->{b}")
        twin[h] = look[(b, a)]

    # rotate stored face triples so corner order matches the base face triple
    # (needed so face_base corners line up with base geometry)
    for f in range(len(faces)):
        key = tuple(base_of[faces[f]])
        target = tuple(bfaces[face_base[f]])
        for r in range(3):
            if tuple(key[(r + j) % 3] for j in range(3)) == target:
                if r:
                    faces[f] = np.roll(faces[f], -r)
                break
        else:
            raise TopologyError("cover face does not project to its base face")
    # twins must be rebuilt after rotation
    look = {}
    for f, tri_f in enumerate(faces):
        for i in range(3):
            look[(int(tri_f[i]), int(tri_f[(i + 1) % 3]))] = 3 * f + i
    for (a, b), h in look.items():
        twin[h] = look[(b, a)]

    gamma = np.ones(nv)
    base_fan = np.zeros(nb, dtype=np.int64)
    for bf in bfaces:
        for v in bf:
            base_fan[v] += 1
    counts = np.zeros(nv, dtype=np.int64)
    for f in faces:
        for v in f:
            counts[v] += 1
    wind = counts // np.maximum(1, base_fan[base_of])
    gamma = 1.0 / np.maximum(1, wind)

    if cover is None:
        monod = None
        from .covering import BranchedCover as _BC, BranchPoint as _BP, default_adapt_radii
        order = sorted(branch_vertex)
        positions = [None if not np.isfinite(zb[branch_vertex[bi]].real)
                     else complex(zb[branch_vertex[bi]]) for bi in order]
        radii = default_adapt_radii(positions, rho)
        if d == 2:
            bps = [_BP(p, (1, 0), r) for p, r in zip(positions, radii)]
        else:
            bps = [_BP(p, tuple(range(d)), r) for p, r in zip(positions, radii)]
        cover = _BC(degree=d, branch_points=bps, rho=rho, name="from-rpm")

    mesh = CoverMesh(base=tri, cover=cover, degree=d, faces=faces,
                     face_base=face_base,
                     face_sheet=np.array([sheet[f[0]] for f in faces]),
                     twin=twin, vertex_base=base_of, vertex_sheet=sheet,
                     vertex_branch=branch, vertex_gamma=gamma,
                     region=classify_faces(tri, rho), rho=rho)
    mesh.validate_manifold()
    return mesh
