"""Branched coverings of the Riemann sphere.

A covering is described by its degree, its branch points and their monodromy
permutations (sheet transition when encircling the point counterclockwise).
Branch points live in the plane after stereographic projection; the point at
infinity is allowed and represented by ``None``.
"""

from __future__ import annotations

import cmath
import json
import math
from dataclasses import dataclass, field

from .errors import ValidationError

INF = None  # sentinel for the branch position at infinity


def _is_permutation(perm, d):
    return len(perm) == d and sorted(perm) == list(range(d))


def permutation_cycles(perm):
    """Cycles of a 0-based one-line permutation, each starting at its minimum."""
    seen = [False] * len(perm)
    cycles = []
    for start in range(len(perm)):
        if seen[start]:
            continue
        cyc = [start]
        seen[start] = True
        j = perm[start]
        while j != start:
            cyc.append(j)
            seen[j] = True
            j = perm[j]
        cycles.append(tuple(cyc))
    return cycles


def compose(p, q):
    """Composition p after q: (p∘q)(i) = p[q[i]]."""
    return tuple(p[q[i]] for i in range(len(q)))


def invert(p):
    out = [0] * len(p)
    for i, j in enumerate(p):
        out[j] = i
    return tuple(out)


@dataclass(frozen=True)
class BranchPoint:
    """A branch point with its monodromy permutation.

    position is a finite complex number or ``None`` for infinity.  gammas
    holds the aperture factor 1/(cycle length) for each cycle of the
    monodromy (cycles of length one are unbranched sheets passing through).
    r_adapt is the adaptation radius of the disk refined around the point.
    """

    position: complex | None
    monodromy: tuple[int, ...]
    r_adapt: float = 0.0

    @property
    def cycles(self):
        return permutation_cycles(self.monodromy)

    @property
    def gammas(self):
        return tuple(1.0 / len(c) for c in self.cycles)

    @property
    def gamma(self):
        """Smallest aperture factor: 1/(longest cycle). Drives adaptation."""
        return 1.0 / max(len(c) for c in self.cycles)

    @property
    def is_infinity(self):
        return self.position is None

    def violations(self, degree, rho):
        out = []
        if not _is_permutation(self.monodromy, degree):
            out.append(f"monodromy {self.monodromy} is not a permutation of {degree} elements")
            return out
        if all(self.monodromy[i] == i for i in range(degree)):
            out.append(f"identity monodromy at {self.position}: not a branch point")
        if not self.is_infinity and abs(self.position) > rho / 2 + 1e-12:
            out.append(f"branch point {self.position} outside B_{{rho/2}} (|p|={abs(self.position):.4g} > {rho/2:.4g})")
        if self.r_adapt <= 0:
            out.append(f"branch point {self.position}: adaptation radius must be positive")
        return out


def chart_image(z, bp: BranchPoint, turns: int = 0):
    """Branch-point chart g(z) = (z-O)^gamma, resp. 1/z^gamma at infinity.

    The angle is taken continuously: principal angle in [0, 2pi) plus
    ``turns`` full revolutions, so lifts on successive sheets around the
    point map to successive sectors.  Raises if the point leaves the chart
    disk or the accumulated angle leaves the aperture [0, 2pi/gamma).
    """
    g = bp.gamma
    if bp.is_infinity:
        if z == 0:
            raise ValidationError("0 is not in the chart at infinity")
        w = 1.0 / z
        if abs(w) > bp.r_adapt * (1 + 1e-12):
            raise ValidationError(f"{z} outside chart disk at infinity (|1/z|={abs(w):.4g} > r={bp.r_adapt:.4g})")
    else:
        w = z - bp.position
        if abs(w) > bp.r_adapt * (1 + 1e-12):
            raise ValidationError(f"{z} outside chart disk B_{{{bp.r_adapt:.4g}}}({bp.position})")
    if w == 0:
        return 0j
    r = abs(w)
    phi = cmath.phase(w) % (2 * math.pi) + 2 * math.pi * turns
    if not (0 <= phi < 2 * math.pi / g * (1 + 1e-12)):
        raise ValidationError(f"accumulated angle {phi:.4g} outside aperture [0, {2 * math.pi / g:.4g})")
    return r ** g * cmath.exp(1j * g * phi)


@dataclass
class BranchedCover:
    """A branched covering of the sphere, degree d with branch data.

    Branch points are listed counterclockwise by argument seen from the
    origin (the base point of the cut system); a branch point at infinity,
    if present, must be listed last.
    """

    degree: int
    branch_points: list[BranchPoint]
    rho: float
    name: str = ""
    reference_pi: object = None  # optional g x g complex ndarray

    @property
    def finite_branch_points(self):
        return [bp for bp in self.branch_points if not bp.is_infinity]

    @property
    def has_infinite_branch(self):
        return any(bp.is_infinity for bp in self.branch_points)

    def validate(self):
        """Report-style validation: list of violated invariants, empty iff valid."""
        out = []
        if self.degree < 1:
            out.append(f"degree must be >= 1, got {self.degree}")
            return out
        if self.rho <= 1:
            out.append(f"rho must exceed 1, got {self.rho}")
        for bp in self.branch_points:
            out.extend(bp.violations(self.degree, self.rho))
        if any("not a permutation" in v for v in out):
            return out
        # closed-surface condition: product over the listed cyclic order
        prod = tuple(range(self.degree))
        for bp in self.branch_points:
            prod = compose(bp.monodromy, prod)
        if prod != tuple(range(self.degree)):
            out.append(f"monodromy product is {prod}, not the identity: surface does not close up")
        # cut-star geometry: base point at the origin must see distinct rays
        finite = self.finite_branch_points
        if any(bp.position == 0 for bp in finite):
            out.append("branch point at the origin collides with the cut base point")
        args = sorted(cmath.phase(bp.position) for bp in finite if bp.position != 0)
        for a, b in zip(args, args[1:]):
            if abs(a - b) < 1e-12:
                out.append(f"two branch points share the argument {a:.6g}: cuts would overlap")
        # listed counterclockwise (one cyclic wrap allowed), infinity last
        for i, bp in enumerate(self.branch_points):
            if bp.is_infinity and i != len(self.branch_points) - 1:
                out.append("branch point at infinity must be listed last")
        ph = [cmath.phase(bp.position) % (2 * math.pi) for bp in finite if bp.position != 0]
        wraps = sum(1 for a, b in zip(ph, ph[1:]) if b < a)
        if wraps > 1 or (wraps == 1 and ph and ph[-1] > ph[0]):
            out.append("branch points are not listed counterclockwise by argument")
        # adaptation disks disjoint and inside B_rho
        for i, a in enumerate(finite):
            if abs(a.position) + a.r_adapt > self.rho + 1e-12:
                out.append(f"disk around {a.position} leaves B_rho")
            for b in finite[i + 1:]:
                if abs(a.position - b.position) <= a.r_adapt + b.r_adapt:
                    out.append(f"adaptation disks at {a.position} and {b.position} overlap")
        return out

    def require_valid(self):
        rep = self.validate()
        if rep:
            raise ValidationError("invalid covering: " + "; ".join(rep))

    def genus(self):
        """Genus by Riemann-Hurwitz: 2-2g = 2d - sum (cycle length - 1)."""
        self.require_valid()
        branching = sum(len(c) - 1 for bp in self.branch_points for c in bp.cycles)
        twog = 2 - 2 * self.degree + branching
        if twog % 2 != 0:
            raise ValidationError(f"Riemann-Hurwitz gives odd 2g = {twog}")
        g = twog // 2
        if g < 0:
            raise ValidationError(f"negative genus {g}")
        return g

    def is_hyperelliptic_form(self):
        """All monodromies equal to one transposition and degree 2."""
        if self.degree != 2:
            return False
        return all(bp.monodromy == (1, 0) for bp in self.branch_points)


def genus(cover: BranchedCover) -> int:
    return cover.genus()


def validate(cover: BranchedCover):
    return cover.validate()


def default_rho(positions):
    """Smallest rho > 1 with 2*max|p| <= rho, rounded up to one decimal."""
    finite = [abs(p) for p in positions if p is not None]
    m = 2 * max(finite) if finite else 0.0
    rho = math.ceil(m * 10 - 1e-9) / 10
    return max(rho, 1.1)


def default_adapt_radii(positions, rho):
    """r = min pairwise distance / 3 capped at rho/4; 1/(2 rho) at infinity."""
    finite = [p for p in positions if p is not None]
    if len(finite) >= 2:
        dmin = min(abs(a - b) for i, a in enumerate(finite) for b in finite[i + 1:])
        r = min(dmin / 3.0, rho / 4.0)
    else:
        r = rho / 4.0
    return [r if p is not None else 1.0 / (2 * rho) for p in positions]


def make_cover(name, degree, positions, monodromies, rho=None, reference_pi=None):
    """Assemble a BranchedCover, filling in default rho and adaptation radii."""
    if rho is None:
        rho = default_rho(positions)
    radii = default_adapt_radii(positions, rho)
    bps = [BranchPoint(p, tuple(m), r) for p, m, r in zip(positions, monodromies, radii)]
    return BranchedCover(degree=degree, branch_points=bps, rho=float(rho), name=name,
                         reference_pi=reference_pi)


def _complex_from_json(obj):
    if obj == "inf":
        return None
    return complex(obj["re"], obj["im"])


def _matrix_from_json(rows):
    import numpy as np
    return np.array([[complex(c["re"], c["im"]) for c in row] for row in rows])


def load_curve(path) -> BranchedCover:
    """Read a curve specification file (UTF-8 JSON)."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ValidationError(f"cannot read curve file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"curve file {path} is not valid JSON: {exc}") from exc
    try:
        positions = [_complex_from_json(p) for p in data["branch_points"]]
        monodromies = [tuple(m) for m in data["monodromy"]]
        ref = _matrix_from_json(data["reference_pi"]) if "reference_pi" in data else None
        cover = make_cover(data.get("name", ""), int(data["degree"]), positions,
                           monodromies, rho=data.get("rho"), reference_pi=ref)
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed curve file {path}: {exc}") from exc
    if len(monodromies) != len(positions):
        raise ValidationError("curve file: monodromy count differs from branch point count")
    return cover


def save_curve(cover: BranchedCover, path):
    def cj(z):
        return "inf" if z is None else {"re": z.real, "im": z.imag}

    data = {
        "name": cover.name,
        "degree": cover.degree,
        "rho": cover.rho,
        "branch_points": [cj(bp.position) for bp in cover.branch_points],
        "monodromy": [list(bp.monodromy) for bp in cover.branch_points],
    }
    if cover.reference_pi is not None:
        data["reference_pi"] = [[{"re": float(c.real), "im": float(c.imag)} for c in row]
                                for row in cover.reference_pi]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=1)
        fh.write("\n")
