"""Sphere sampling and base triangulations.

Points live on the unit sphere; the planar picture is their stereographic
projection z = (X + iY)/(1 - Z) from the north pole, so the north pole maps
to infinity.  The base triangulation is the boundary of the 3D convex hull
(equivalently the spherical Delaunay triangulation), oriented so faces are
counterclockwise in the z-chart.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull, QhullError, cKDTree

from .covering import BranchedCover
from .errors import DegeneracyError, ValidationError

GOLDEN = (1 + math.sqrt(5)) / 2


def fibonacci_points(n: int) -> np.ndarray:
    """n points on the unit sphere along a Fibonacci spiral (deterministic)."""
    if n < 4:
        raise ValidationError(f"need at least 4 points, got {n}")
    k = np.arange(n)
    z = 1.0 - 2.0 * (k + 0.5) / n
    phi = 2 * np.pi * k / GOLDEN
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


def random_points(n: int, seed: int) -> np.ndarray:
    """n i.i.d. uniform points on the unit sphere from a seeded PCG64 stream."""
    if n < 4:
        raise ValidationError(f"need at least 4 points, got {n}")
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(n, 3))
    norms = np.linalg.norm(pts, axis=1)
    while np.any(norms < 1e-12):  # pragma: no cover - astronomically unlikely
        bad = norms < 1e-12
        pts[bad] = rng.normal(size=(int(bad.sum()), 3))
        norms = np.linalg.norm(pts, axis=1)
    return pts / norms[:, None]


def stereographic(points: np.ndarray) -> np.ndarray:
    """Project sphere points to the complex plane; the north pole maps to inf."""
    denom = 1.0 - points[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        z = (points[:, 0] + 1j * points[:, 1]) / denom
    z[denom < 1e-15] = complex(np.inf, 0.0)
    return z


def inverse_stereographic(z: np.ndarray) -> np.ndarray:
    """Lift plane points back to the unit sphere (inf -> north pole)."""
    z = np.asarray(z, dtype=complex)
    out = np.empty((len(z), 3))
    finite = np.isfinite(z.real) & np.isfinite(z.imag)
    zf = z[finite]
    s = np.abs(zf) ** 2
    out[finite, 0] = 2 * zf.real / (s + 1)
    out[finite, 1] = 2 * zf.imag / (s + 1)
    out[finite, 2] = (s - 1) / (s + 1)
    out[~finite] = (0.0, 0.0, 1.0)
    return out


@dataclass
class BaseTriangulation:
    """Triangulated sphere: hull faces over sampled points.

    points: (n, 3) unit sphere positions.
    z: (n,) stereographic images (inf for the north pole vertex, if any).
    faces: (m, 3) vertex indices, counterclockwise in the z-chart.
    branch_vertex: maps branch point index -> vertex index.
    """

    points: np.ndarray
    z: np.ndarray
    faces: np.ndarray
    branch_vertex: dict = field(default_factory=dict)

    @property
    def n_vertices(self):
        return len(self.points)

    @property
    def n_faces(self):
        return len(self.faces)

    def edge_count(self):
        return 3 * len(self.faces) // 2

    def face_adjacency(self):
        """twin[f, i] = (f', i') across the directed edge faces[f,i]->faces[f,i+1]."""
        m = len(self.faces)
        lookup = {}
        for f in range(m):
            for i in range(3):
                a, b = self.faces[f, i], self.faces[f, (i + 1) % 3]
                lookup[(a, b)] = (f, i)
        twin = np.full((m, 3, 2), -1, dtype=np.int64)
        for (a, b), (f, i) in lookup.items():
            if (b, a) not in lookup:
                raise DegeneracyError(f"unmatched directed edge {a}->{b}: hull not closed")
            twin[f, i] = lookup[(b, a)]
        return twin


def spherical_delaunay(points: np.ndarray) -> BaseTriangulation:
    """Delaunay triangulation of S^2 as the boundary of the 3D convex hull."""
    points = np.asarray(points, dtype=float)
    if len(points) < 4:
        raise ValidationError("need at least 4 points for a spherical triangulation")
    dup = _duplicate_pairs(points)
    if dup:
        raise DegeneracyError(f"duplicate points at indices {dup[:5]}")
    try:
        hull = ConvexHull(points)
    except QhullError as exc:
        raise DegeneracyError(f"degenerate point set (coplanar?): {exc}") from exc
    if len(hull.vertices) != len(points):
        missing = sorted(set(range(len(points))) - set(hull.vertices))
        raise DegeneracyError(f"points {missing[:5]} are not vertices of the hull "
                              "(not in convex position on the sphere)")
    faces = hull.simplices.copy()
    # orient every face with outward normal
    centroids = points[faces].mean(axis=1)
    normals = np.cross(points[faces[:, 1]] - points[faces[:, 0]],
                       points[faces[:, 2]] - points[faces[:, 0]])
    flip = np.einsum("ij,ij->i", normals, centroids) < 0
    faces[flip] = faces[flip][:, [0, 2, 1]]
    z = stereographic(points)
    tri = BaseTriangulation(points=points, z=z, faces=faces)
    _orient_ccw_in_chart(tri)
    return tri


def _duplicate_pairs(points, tol=1e-12):
    tree = cKDTree(points)
    pairs = tree.query_pairs(tol)
    return sorted(pairs)


def _orient_ccw_in_chart(tri: BaseTriangulation):
    """Flip all faces if needed so finite faces are CCW in the z-chart."""
    for f in range(len(tri.faces)):
        zs = tri.z[tri.faces[f]]
        if not np.all(np.isfinite(zs.real)):
            continue
        if np.max(np.abs(zs)) > 1e6:
            continue
        area2 = (np.conj(zs[1] - zs[0]) * (zs[2] - zs[0])).imag
        if abs(area2) < 1e-14:
            continue
        if area2 < 0:
            tri.faces = tri.faces[:, [0, 2, 1]]
        return
    raise DegeneracyError("could not determine chart orientation")


def insert_branch_points(tri_points: np.ndarray, cover: BranchedCover,
                         snap_radius: float) -> tuple[np.ndarray, dict]:
    """Ensure all branch points appear among the sampled sphere points.

    The nearest sampled point within snap_radius (chordal) is moved onto the
    branch point; otherwise the branch point is appended.  Returns the new
    point array and a map branch index -> point index.
    """
    pts = np.array(tri_points, dtype=float, copy=True)
    taken = set()
    where = {}
    targets = []
    for bi, bp in enumerate(cover.branch_points):
        zb = np.array([complex(np.inf, 0) if bp.is_infinity else bp.position])
        targets.append(inverse_stereographic(zb)[0])
    for bi, target in enumerate(targets):
        d = np.linalg.norm(pts - target, axis=1)
        d[list(taken)] = np.inf
        j = int(np.argmin(d))
        if d[j] <= snap_radius:
            pts[j] = target
            where[bi] = j
            taken.add(j)
        else:
            pts = np.vstack([pts, target])
            where[bi] = len(pts) - 1
            taken.add(len(pts) - 1)
    return pts, where


def adaptation_rings(bp, h_target: float) -> np.ndarray:
    """Planar offsets of the clustering rings around one finite branch point.

    Radial chart step a is shrunk from h_target so that ring-to-ring diagonal
    edges still have chart length <= h_target; ring radii follow
    r_j = (j a)^(1/gamma) up to the adaptation radius, and each ring carries
    ceil(2 pi r^gamma / (gamma a)) equally spaced vertices.  The angular
    phase dodges the cut ray toward the origin so no ring vertex lands on it.
    """
    g = bp.gamma
    a = h_target / math.sqrt(1 + g ** 4)
    r_cap = bp.r_adapt
    n_rings = max(1, math.ceil(r_cap ** g / a))
    radii = [min((j * a) ** (1.0 / g), r_cap) for j in range(1, n_rings + 1)]
    radii = sorted(set(radii))
    if radii[-1] < r_cap:
        radii.append(r_cap)
    if bp.is_infinity or bp.position == 0:
        cut_angle = 0.0
    else:
        cut_angle = math.atan2(-bp.position.imag, -bp.position.real)
    offsets = []
    for r in radii:
        m = max(6, math.ceil(2 * math.pi * r ** g / (g * a)))
        # golden-ratio phase: no ring vertex on the cut ray and no vertex pair
        # symmetric about it (which would park face centroids on the cut)
        phase = cut_angle + (2 * math.pi / m) * 0.19098300562505255
        ang = phase + 2 * np.pi * np.arange(m) / m
        offsets.append(r * np.exp(1j * ang))
    return np.concatenate(offsets)


def adapt_near_branch(points: np.ndarray, cover: BranchedCover, h_target: float,
                      branch_where: dict) -> tuple[np.ndarray, dict]:
    """Replace sampled points inside each adaptation disk by clustering rings.

    Branch vertices themselves are kept in place.  Returns the new sphere
    point set and the updated branch index map.  The full triangulation is
    recomputed by the caller, which re-establishes the Delaunay property.
    """
    radii = [bp.r_adapt for bp in cover.branch_points]
    gate = max(cover.rho / 4.0, min(radii) / 4.0 if radii else np.inf, 1.0)
    if not (0 < h_target < gate):
        raise ValidationError(f"h_target {h_target} not in (0, {gate})")
    if not cover.branch_points:
        return np.array(points, dtype=float, copy=True), dict(branch_where)
    pts = np.asarray(points, dtype=float)
    z = stereographic(pts)
    keep = np.ones(len(pts), dtype=bool)
    protected = set(branch_where.values())
    for bi, bp in enumerate(cover.branch_points):
        if bp.is_infinity:
            w = np.where(np.isfinite(z.real), 1.0 / np.where(z == 0, np.nan, z), 0.0)
            inside = np.abs(np.nan_to_num(w, nan=np.inf)) < bp.r_adapt
            inside |= ~np.isfinite(z.real)
        else:
            inside = np.abs(z - bp.position) < bp.r_adapt
        for j in np.nonzero(inside)[0]:
            if j not in protected:
                keep[j] = False
    new_index = np.cumsum(keep) - 1
    out_pts = [pts[keep]]
    where = {bi: int(new_index[j]) for bi, j in branch_where.items()}
    total = int(keep.sum())
    for bi, bp in enumerate(cover.branch_points):
        offs = adaptation_rings(bp, h_target)
        if bp.is_infinity:
            ring_z = 1.0 / offs
        else:
            ring_z = bp.position + offs
        out_pts.append(inverse_stereographic(ring_z))
        total += len(offs)
    return np.vstack(out_pts), where


def estimate_local_spacing(tri: BaseTriangulation, cover: BranchedCover) -> float:
    """Median planar edge length in annuli just outside the adaptation disks.

    Used as the automatic h_target for clustering rings so they blend into
    the ambient sampling density.
    """
    z = tri.z
    finite = np.isfinite(z.real)
    lengths = []
    for bp in cover.finite_branch_points:
        sel = []
        for f in tri.faces:
            for i in range(3):
                a, b = f[i], f[(i + 1) % 3]
                if a < b and finite[a] and finite[b]:
                    mid = 0.5 * (z[a] + z[b])
                    d = abs(mid - bp.position)
                    if bp.r_adapt <= d <= 3 * bp.r_adapt:
                        sel.append(abs(z[a] - z[b]))
        if sel:
            lengths.append(np.median(sel))
    if not lengths:
        inner = [abs(z[a] - z[b]) for f in tri.faces for a, b in ((f[0], f[1]), (f[1], f[2]), (f[2], f[0]))
                 if finite[a] and finite[b] and abs(z[a]) < cover.rho and abs(z[b]) < cover.rho]
        if not inner:
            raise ValidationError("cannot estimate ambient spacing: no finite inner edges")
        lengths = [np.median(inner)]
    return float(min(lengths))


def build_base_mesh(cover: BranchedCover, sampler: str, n: int, seed: int = 0,
                    adapt: bool = True, h_target: float | None = None) -> BaseTriangulation:
    """Sample, insert branch points, optionally adapt, and triangulate."""
    cover.require_valid()
    if sampler == "fibonacci":
        pts = fibonacci_points(n)
    elif sampler == "random":
        pts = random_points(n, seed)
    else:
        raise ValidationError(f"unknown sampler {sampler!r}")
    spacing = 3.3 / math.sqrt(n)  # chordal nearest-neighbor scale on S^2
    pts, where = insert_branch_points(pts, cover, snap_radius=0.5 * spacing)
    if adapt:
        tri0 = spherical_delaunay(pts)
        tri0.branch_vertex = where
        if h_target is None:
            h_target = estimate_local_spacing(tri0, cover)
        pts, where = adapt_near_branch(pts, cover, h_target, where)
    tri = spherical_delaunay(pts)
    tri.branch_vertex = where
    for bi, bp in enumerate(cover.branch_points):
        zb = complex(np.inf, 0) if bp.is_infinity else bp.position
        zv = tri.z[where[bi]]
        if bp.is_infinity:
            ok = not np.isfinite(zv.real)
        else:
            ok = abs(zv - zb) < 1e-9
        if not ok:
            raise ValidationError(f"branch point {bi} is not a vertex after meshing")
    return tri
