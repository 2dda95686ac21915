"""Homology bases on the covering mesh as closed edge walks plus crossing
cochains.

Multi-valued functions never touch a universal cover: a closed walk gamma
induces a 1-cochain on directed edges (the "wedge" construction below, a
combinatorial left push-off) whose sum along any closed walk delta equals the
intersection number [delta].[gamma].  Prescribing jumps through these
cochains realizes multi-valued functions with exact periods.

For hyperelliptic coverings (both experiment surfaces) the basis is built
from planar loops around consecutive branch-point pairs; the canonical
symplectic normalization is solved from the combinatorially computed
intersection matrix.  Other coverings get a tree-cotree basis with integer
symplectic reduction; that path is experimental.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .covermesh import CoverMesh
from .errors import ResolutionError, TopologyError, ValidationError


# ----------------------------------------------------------------------------
# walks and cochains
# ----------------------------------------------------------------------------

def _cover_adjacency(mesh: CoverMesh):
    cache = getattr(mesh, "_adj_cache", None)
    if cache is not None:
        return cache
    nh = 3 * mesh.n_faces
    origins = mesh.faces.reshape(-1)
    heads = mesh.faces[np.arange(nh) // 3, (np.arange(nh) % 3 + 1) % 3]
    order = np.argsort(origins, kind="stable")
    indptr = np.searchsorted(origins[order], np.arange(mesh.n_vertices + 1))
    mesh._adj_cache = (indptr, heads[order], order[np.arange(len(order))])
    return mesh._adj_cache


def _neighbors(mesh, v):
    indptr, heads, _ = _cover_adjacency(mesh)
    return heads[indptr[v]:indptr[v + 1]]


def _halfedge_lookup(mesh: CoverMesh):
    cache = getattr(mesh, "_he_lookup", None)
    if cache is not None:
        return cache
    nh = 3 * mesh.n_faces
    look = {}
    for h in range(nh):
        look[(int(mesh.he_origin(h)), int(mesh.he_head(h)))] = h
    mesh._he_lookup = look
    return look


def walk_halfedges(mesh: CoverMesh, walk):
    """Directed half-edge ids along a closed vertex walk."""
    look = _halfedge_lookup(mesh)
    out = []
    for a, b in zip(walk, walk[1:]):
        h = look.get((int(a), int(b)))
        if h is None:
            raise ValidationError(f"walk step {a}->{b} is not a mesh edge")
        out.append(h)
    return out


def is_closed_walk(mesh, walk):
    if len(walk) < 2 or walk[0] != walk[-1]:
        return False
    try:
        walk_halfedges(mesh, walk)
    except ValidationError:
        return False
    return True


def _wedge_cochain(mesh: CoverMesh, walk) -> np.ndarray:
    """Left push-off cochain eta of a closed walk.

    For any closed walk delta: sum of eta over delta's directed half-edges
    equals the homological intersection [delta].[walk].
    """
    if walk[0] != walk[-1]:
        raise ValidationError("cochain requires a closed walk")
    hes = walk_halfedges(mesh, walk)
    nh = 3 * mesh.n_faces
    eta = np.zeros(nh, dtype=np.int16)
    m = len(hes)
    for k in range(m):
        h_out = hes[k]
        h_in = hes[(k - 1) % m]
        v = mesh.he_origin(h_out)
        h_back = int(mesh.twin[h_in])  # points from v to the previous vertex
        # U-turns (h_back == h_out) wrap the spike tip: the rotation below
        # then collects the full fan, which is the correct push-off
        h = mesh.he_rotate_ccw(h_out)
        steps = 0
        while h != h_back:
            eta[h] += 1
            eta[mesh.twin[h]] -= 1
            h = mesh.he_rotate_ccw(h)
            steps += 1
            if steps > nh:
                raise TopologyError("wedge enumeration did not close")
    return eta


def crossing_cochain(mesh: CoverMesh, cycle_walk) -> np.ndarray:
    """Signed crossing numbers of each directed edge through the cut dual to
    the cycle: summing it along a closed walk delta gives [cycle].[delta]."""
    return _wedge_cochain(mesh, cycle_walk)


def cochain_pairing(mesh: CoverMesh, walk, cochain) -> int:
    return int(sum(cochain[h] for h in walk_halfedges(mesh, walk)))


def intersection_number(mesh: CoverMesh, c1, c2) -> int:
    """Homological intersection [c1].[c2] of two closed walks."""
    for c in (c1, c2):
        if not is_closed_walk(mesh, c):
            raise ValidationError("intersection_number requires closed walks")
    return cochain_pairing(mesh, c2, _wedge_cochain(mesh, c1))


def traversal_cochain(mesh: CoverMesh, walk) -> np.ndarray:
    """Dual-edge cochain of a walk: per half-edge, multiplicity along the walk
    minus multiplicity of the reverse.  Closed around every vertex."""
    nh = 3 * mesh.n_faces
    out = np.zeros(nh, dtype=np.int16)
    for h in walk_halfedges(mesh, walk):
        out[h] += 1
        out[int(mesh.twin[h])] -= 1
    return out


def _bfs_path(mesh, start, goals, allowed=None):
    """Shortest path over cover vertices from start to any goal vertex."""
    goals = set(int(g) for g in goals)
    if int(start) in goals:
        return [int(start)]
    prev = {int(start): -1}
    dq = deque([int(start)])
    while dq:
        v = dq.popleft()
        for u in _neighbors(mesh, v):
            u = int(u)
            if u in prev or (allowed is not None and not allowed(u)):
                continue
            prev[u] = v
            if u in goals:
                path = [u]
                while path[-1] != int(start):
                    path.append(prev[path[-1]])
                return path[::-1]
            dq.append(u)
    return None


def combine_cycles(mesh: CoverMesh, walks, coeffs):
    """One closed walk homologous to sum(coeffs[i] * walks[i]).

    Pieces are joined by connector paths traversed forth and back, which are
    homologically invisible.
    """
    pieces = []
    for w, c in zip(walks, coeffs):
        if c == 0:
            continue
        body = w[:-1]
        if c < 0:
            body = body[::-1]
        pieces.extend([body] * abs(int(c)))
    if not pieces:
        raise ValidationError("empty cycle combination")
    walk = list(pieces[0])
    for body in pieces[1:]:
        conn = _bfs_path(mesh, walk[-1], {body[0]})
        if conn is None:
            raise TopologyError("cover graph is disconnected")
        walk.extend(conn[1:])
        walk.extend(body[1:] + [body[0]])
        walk.extend(conn[-2::-1])
    walk.append(walk[0])
    return walk


# ----------------------------------------------------------------------------
# planar loops and snapping
# ----------------------------------------------------------------------------

def _point_segment_dist(p, a, b):
    ab = b - a
    denom = (ab * np.conj(ab)).real
    if denom < 1e-300:
        return abs(p - a)
    t = ((p - a) * np.conj(ab)).real / denom
    t = min(1.0, max(0.0, t))
    return abs(p - (a + t * ab))


def _winding(poly, p):
    zs = np.asarray(poly) - p
    ang = np.angle(np.roll(zs, -1) / zs)
    return int(round(ang.sum() / (2 * math.pi)))


def pair_loop_polyline(P, Q, others, margin, n_samples):
    """Stadium polyline at constant distance margin around the segment [P, Q].

    Encloses exactly {P, Q}; the constant offset maximizes the worst-case
    clearance to both the enclosed pair and the remaining branch points.
    """
    d = 0.5 * abs(Q - P)
    rot = (Q - P) / abs(Q - P) if abs(Q - P) > 0 else 1.0
    straight = 2 * d
    cap = math.pi * margin
    perim = 2 * straight + 2 * cap
    pts = []
    for k in range(n_samples):
        s = perim * k / n_samples
        if s < straight:  # lower side, P end toward Q end (counterclockwise)
            local = -d + s - 1j * margin
        elif s < straight + cap:  # cap around Q
            ang = (s - straight) / margin
            local = d - margin * 1j * np.exp(1j * ang)
        elif s < 2 * straight + cap:  # upper side, back toward P
            local = d - (s - straight - cap) + 1j * margin
        else:  # cap around P
            ang = (s - 2 * straight - cap) / margin
            local = -d + margin * 1j * np.exp(1j * ang)
        pts.append(0.5 * (P + Q) + rot * local)
    poly = np.array(pts)
    if _winding(poly, P) != 1 or _winding(poly, Q) != 1:
        raise ResolutionError("pair loop does not enclose its branch points")
    for o in others:
        if _winding(poly, o) != 0:
            raise ResolutionError(f"pair loop around {P}, {Q} also encloses {o}")
    return poly


def _local_edge_length(mesh: CoverMesh, v):
    z = mesh.base.z
    bv = mesh.vertex_base[v]
    lens = [abs(z[bv] - z[mesh.vertex_base[u]]) for u in _neighbors(mesh, v)
            if np.isfinite(z[mesh.vertex_base[u]].real)]
    return float(np.median(lens)) if lens else math.inf


def snap_loop(mesh: CoverMesh, poly) -> list:
    """Snap a planar loop to a closed walk on the cover.

    Waypoints snap to nearest non-branch base vertices; consecutive waypoints
    are joined by breadth-first paths restricted to a tube around the planar
    segment, which transports the sheet correctly; the final segment must
    return to the starting cover vertex.
    """
    z = mesh.positions_z()
    zb = mesh.base.z
    finite = np.isfinite(zb.real)
    usable = finite.copy()
    for bi, bv in mesh.base.branch_vertex.items():
        usable[bv] = False
    cand = np.nonzero(usable)[0]
    tree = cKDTree(np.column_stack([zb[cand].real, zb[cand].imag]))
    qpts = np.column_stack([np.real(poly), np.imag(poly)])
    _, nearest = tree.query(qpts)
    base_way = cand[nearest]
    snap_dist = float(np.max(np.abs(zb[base_way] - poly)))

    way = [int(base_way[0])]
    for b in base_way[1:]:
        if int(b) != way[-1]:
            way.append(int(b))
    if len(way) < 3:
        raise ResolutionError("loop snapping collapsed: mesh too coarse")
    poly_of_way = [poly[np.argmax(base_way == w)] for w in way]

    lifts0 = np.nonzero(mesh.vertex_base == way[0])[0]
    start = int(lifts0.min())
    ell = float(np.max([_local_edge_length(mesh, int(np.nonzero(
        mesh.vertex_base == w)[0][0])) for w in way[:: max(1, len(way) // 12)]]))

    # cap the tube so it cannot reach any branch point: paths then stay
    # homotopic to the planar loop
    branch_clear = math.inf
    for bi, bv in mesh.base.branch_vertex.items():
        if not finite[bv]:
            continue
        branch_clear = min(branch_clear, min(
            _point_segment_dist(zb[bv], a, b)
            for a, b in zip(poly, np.roll(poly, -1))))
    tube = min(max(2.2 * ell, 1.5 * snap_dist), 0.85 * branch_clear)
    if snap_dist > tube:
        raise ResolutionError(
            f"loop snapping distance {snap_dist:.3g} exceeds the safe tube "
            f"width {tube:.3g}; use a finer mesh (smaller h)")

    lifts_of = {}
    for w in set(way):
        lifts_of[w] = set(int(u) for u in np.nonzero(mesh.vertex_base == w)[0])

    walk = [start]
    m = len(way)
    for k in range(m):
        a = poly_of_way[k]
        b = poly_of_way[(k + 1) % m]
        goal_base = way[(k + 1) % m]
        if k == m - 1:
            goals = {start}
        else:
            goals = lifts_of[goal_base]

        def allowed(u, a=a, b=b):
            zu = z[u]
            if not np.isfinite(zu.real):
                return False
            return _point_segment_dist(zu, a, b) <= tube

        seg = _bfs_path(mesh, walk[-1], goals, allowed)
        if seg is None:
            if k == m - 1:
                raise ResolutionError(
                    "loop did not close on the expected sheet; mesh too coarse "
                    "or tube leaked")
            raise ResolutionError("tube search failed: mesh too coarse for the loop")
        walk.extend(seg[1:])
    if walk[0] != walk[-1]:
        walk.append(walk[0])
    for v in walk:
        if mesh.vertex_branch[v] >= 0:
            raise ResolutionError("snapped loop passes through a branch vertex")
    return walk


# ----------------------------------------------------------------------------
# cut systems
# ----------------------------------------------------------------------------

@dataclass
class CutSystem:
    """2g homology cycles with crossing cochains and intersection form J.

    cycles[0..g-1] are the alpha cycles, cycles[g..2g-1] the beta cycles.
    crossing[k] pairs walks against cycle k: summing crossing[k] along a
    closed walk delta yields [cycle_k].[delta].
    """

    mesh: CoverMesh
    genus: int
    cycles: list
    crossing: list                    # 2g int16 arrays over half-edges
    intersection: np.ndarray          # 2g x 2g

    _eta: list = field(default_factory=list, repr=False)      # wedge cochains
    _travel: list = field(default_factory=list, repr=False)   # dual traversal

    @property
    def g(self):
        return self.genus

    def jump_basis(self) -> np.ndarray:
        """(2g, nh) array X with Delta_u(h) = du0(h) + sum_k P_k X[k, h]:
        the cochain dual basis so that the A/B real period parts are exactly
        the prescribed vector P."""
        g = self.genus
        rows = [-self.crossing[g + j] for j in range(g)]
        rows += [self.crossing[j] for j in range(g)]
        return np.array(rows, dtype=np.float64)

    def dual_jump_basis(self) -> np.ndarray:
        """Same for face functions: Delta_v(h) = dv0(h) + sum_k q_k Y[k, h],
        built from the traversal cochains of the cycles."""
        g = self.genus
        rows = [-self.travel(g + j) for j in range(g)]
        rows += [self.travel(j) for j in range(g)]
        return np.array(rows, dtype=np.float64)

    def travel(self, k) -> np.ndarray:
        return self._travel[k]

    def eta(self, k) -> np.ndarray:
        return self._eta[k]

    def validate(self):
        g = self.genus
        J = np.block([[np.zeros((g, g), int), np.eye(g, dtype=int)],
                      [-np.eye(g, dtype=int), np.zeros((g, g), int)]])
        if not np.array_equal(self.intersection, J):
            raise TopologyError(f"intersection form is not canonical:\n{self.intersection}")
        nh = 3 * self.mesh.n_faces
        for k in range(2 * g):
            eta = self._eta[k]
            if np.any(eta[self.mesh.twin[np.arange(nh)]] + eta != 0):
                raise TopologyError(f"cochain {k} is not antisymmetric")
            face_sum = eta.reshape(-1, 3).sum(axis=1)
            if np.any(face_sum != 0):
                raise TopologyError(f"cochain {k} is not closed around faces")


def _build_cut_system(mesh, alpha_walks, beta_walks) -> CutSystem:
    g = len(alpha_walks)
    cycles = list(alpha_walks) + list(beta_walks)
    eta = [_wedge_cochain(mesh, c) for c in cycles]
    crossing = [e.copy() for e in eta]
    travel = [traversal_cochain(mesh, c) for c in cycles]
    inter = np.zeros((2 * g, 2 * g), dtype=np.int64)
    for i in range(2 * g):
        for j in range(2 * g):
            if i != j:
                inter[i, j] = cochain_pairing(mesh, cycles[j], eta[i])
    cut = CutSystem(mesh=mesh, genus=g, cycles=cycles, crossing=crossing,
                    intersection=inter, _eta=eta, _travel=travel)
    cut.validate()
    return cut


def hyperelliptic_basis(mesh: CoverMesh, cover=None) -> CutSystem:
    """Canonical basis for degree-2 coverings with transposition monodromy.

    Pair loops p_k encircle branch points (2k-1, 2k) and gap loops q_k
    encircle (2k, 2k+1) (1-based, in the listed counterclockwise order).
    The basis alpha_k = sum_{j>=k} +-q_j, beta_k = +-p_k is normalized to the
    canonical intersection form by sign choices solved from the
    combinatorial intersection numbers.
    """
    cover = cover if cover is not None else mesh.cover
    if mesh.degree != 2:
        raise ValidationError("hyperelliptic basis needs a degree-2 covering")
    g = mesh.genus()
    if g < 1:
        raise ValidationError("genus must be at least 1")
    bps = [bp.position for bp in cover.branch_points]
    if any(p is None for p in bps):
        raise ValidationError("hyperelliptic basis requires finite branch points")
    if len(bps) != 2 * g + 2:
        raise TopologyError(f"expected {2 * g + 2} branch points, found {len(bps)}")

    stats_h = _ambient_h(mesh)

    def loop(i, j):
        others = [p for k, p in enumerate(bps) if k not in (i, j)]
        clearance = min(min(_point_segment_dist(o, bps[i], bps[j]) for o in others),
                        mesh.rho - max(abs(bps[i]), abs(bps[j])))
        # halfway between the pair segment and the nearest other branch point
        margin = clearance / 2.0
        perim = 2 * abs(bps[j] - bps[i]) + 2 * math.pi * margin
        n_samples = max(48, int(perim / max(0.75 * stats_h, 1e-3)))
        poly = pair_loop_polyline(bps[i], bps[j], others, margin, n_samples)
        return snap_loop(mesh, poly)

    pair = [loop(2 * k, 2 * k + 1) for k in range(g)]
    gap = [loop(2 * k + 1, 2 * k + 2) for k in range(g)]

    eta_gap = [_wedge_cochain(mesh, w) for w in gap]
    qp = np.zeros((g, g), dtype=np.int64)  # qp[j, l] = [q_j].[p_l]
    for j in range(g):
        for l in range(g):
            qp[j, l] = cochain_pairing(mesh, pair[l], eta_gap[j])
    for j in range(g):
        for l in range(g):
            expect = 1 if l in (j, j + 1) else 0
            if abs(qp[j, l]) != expect:
                raise TopologyError(
                    f"unexpected loop intersections [q_{j}].[p_{l}] = {qp[j, l]}; "
                    "loops may have snapped across each other")

    eps = np.ones(g, dtype=np.int64)
    for l in range(g - 1, 0, -1):
        eps[l - 1] = -eps[l] * qp[l, l] * qp[l - 1, l]
    delta = np.array([eps[k] * qp[k, k] for k in range(g)], dtype=np.int64)

    alpha = []
    for k in range(g):
        if g == 1:
            alpha.append(gap[0] if eps[0] == 1 else gap[0][::-1])
        else:
            alpha.append(combine_cycles(mesh, gap[k:], eps[k:]))
    beta = [pair[k] if delta[k] == 1 else pair[k][::-1] for k in range(g)]
    return _build_cut_system(mesh, alpha, beta)


def _ambient_h(mesh: CoverMesh):
    z = mesh.base.z
    finite = np.isfinite(z.real)
    lens = []
    for f in range(len(mesh.base.faces)):
        vs = mesh.base.faces[f]
        if not np.all(finite[vs]):
            continue
        zs = z[vs]
        if np.max(np.abs(zs)) > mesh.rho:
            continue
        lens.extend([abs(zs[0] - zs[1]), abs(zs[1] - zs[2]), abs(zs[2] - zs[0])])
    if not lens:
        raise ValidationError("no finite inner faces to estimate h")
    return float(np.median(lens))


def tree_cotree_basis(mesh: CoverMesh) -> CutSystem:
    """Generic basis for non-hyperelliptic coverings (experimental).

    Tree-cotree generators are symplectically reduced over the integers to
    the canonical form; cycles are realized as connector-joined walks.
    """
    g = mesh.genus()
    if g < 1:
        raise ValidationError("genus must be at least 1")
    nh = 3 * mesh.n_faces
    in_tree = np.zeros(mesh.n_edges, dtype=bool)
    seen = np.zeros(mesh.n_vertices, dtype=bool)
    parent = np.full(mesh.n_vertices, -1, dtype=np.int64)
    seen[0] = True
    dq = deque([0])
    look = _halfedge_lookup(mesh)
    while dq:
        v = dq.popleft()
        for u in _neighbors(mesh, v):
            u = int(u)
            if not seen[u]:
                seen[u] = True
                parent[u] = v
                in_tree[mesh.edge_of_halfedge[look[(v, u)]]] = True
                dq.append(u)
    in_cotree = np.zeros(mesh.n_edges, dtype=bool)
    fseen = np.zeros(mesh.n_faces, dtype=bool)
    fseen[0] = True
    dq = deque([0])
    while dq:
        f = dq.popleft()
        for i in range(3):
            h = 3 * f + i
            e = mesh.edge_of_halfedge[h]
            f2 = int(mesh.twin[h]) // 3
            if not fseen[f2] and not in_tree[e]:
                fseen[f2] = True
                in_cotree[e] = True
                dq.append(f2)
    leftover = np.nonzero(~in_tree & ~in_cotree)[0]
    if len(leftover) != 2 * g:
        raise TopologyError(f"tree-cotree found {len(leftover)} generators, "
                            f"expected {2 * g}")

    def tree_path(v):
        path = [int(v)]
        while parent[path[-1]] >= 0:
            path.append(int(parent[path[-1]]))
        return path

    gens = []
    for e in leftover:
        h = int(mesh.edge_rep[e])
        a, b = int(mesh.he_origin(h)), int(mesh.he_head(h))
        up_a = tree_path(a)[::-1]  # junction .. a
        up_b = tree_path(b)[::-1]
        j = 0
        while j + 1 < min(len(up_a), len(up_b)) and up_a[j + 1] == up_b[j + 1]:
            j += 1
        gens.append(_canonical_cycle(up_a[j:], up_b[j:], b))
    etas = [_wedge_cochain(mesh, c) for c in gens]
    M = np.zeros((2 * g, 2 * g), dtype=np.int64)
    for i in range(2 * g):
        for j in range(2 * g):
            if i != j:
                M[i, j] = cochain_pairing(mesh, gens[j], etas[i])
    A, B = _symplectic_reduce(M)
    alpha = [combine_cycles(mesh, gens, row) for row in A]
    beta = [combine_cycles(mesh, gens, row) for row in B]
    return _build_cut_system(mesh, alpha, beta)


def _canonical_cycle(path_a, path_b, b):
    """Closed walk root'..a, a->b, b..root' for two tree paths sharing root'."""
    walk = list(path_a) + [b] + list(path_b[:-1][::-1] if len(path_b) > 1 else [])
    walk.append(walk[0])
    # collapse the duplicated junction if path_b starts where path_a starts
    out = [walk[0]]
    for v in walk[1:]:
        if v != out[-1]:
            out.append(v)
    if out[-1] != out[0]:
        out.append(out[0])
    return out


def _symplectic_reduce(M):
    """Integer symplectic basis of a unimodular antisymmetric form M.

    Returns integer coefficient matrices (A, B), rows giving alpha_k, beta_k
    as combinations of the generators, with A M B^T = I, A M A^T = 0,
    B M B^T = 0.
    """
    n = len(M)
    g = n // 2
    basis = [np.eye(n, dtype=np.int64)[i] for i in range(n)]
    alphas, betas = [], []

    def pair(x, y):
        return int(x @ M @ y)

    remaining = basis
    for _ in range(g):
        best = None
        for i in range(len(remaining)):
            for j in range(len(remaining)):
                p = abs(pair(remaining[i], remaining[j]))
                if p and (best is None or p < best[0]):
                    best = (p, i, j)
        if best is None:
            raise TopologyError("degenerate intersection form")
        _, i0, j0 = best
        x, y = remaining[i0], remaining[j0]
        # make the pairing exactly 1 via integer row operations
        while True:
            p = pair(x, y)
            if abs(p) == 1:
                break
            improved = False
            for k in range(len(remaining)):
                q = pair(x, remaining[k])
                if q != 0 and abs(q) < abs(p):
                    y = remaining[k]
                    improved = True
                    break
                r = q % p if p else q
                if q != 0 and 0 < abs(q % p) < abs(p):
                    y = remaining[k] - (q // p) * y
                    improved = True
                    break
            if not improved:
                raise TopologyError("could not normalize to a unimodular pair")
        if pair(x, y) == -1:
            y = -y
        alphas.append(x)
        betas.append(y)
        newrem = []
        for v in remaining:
            if v is x or v is y:
                continue
            v2 = v - pair(v, y) * x + pair(v, x) * y
            if np.any(v2):
                newrem.append(v2)
        remaining = newrem
    return np.array(alphas), np.array(betas)
