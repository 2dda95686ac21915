"""Experiment driver: convergence sweeps, slope fits, CSV/SVG artifacts.

Four meshing schemes are compared: clustering (adapted rings near branch
points) versus homogeneous, crossed with random versus Fibonacci sampling.
Errors against the reference period matrix are recorded per (scheme, size,
seed) cell together with the mesh fineness h, and per-scheme slopes are
fitted by least squares in the log-log plane.

Genus-1 comparisons happen after reduction to the modular fundamental
domain (the homology basis is only canonical up to the modular group);
higher genus uses the signed-permutation normalization.
"""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .covering import load_curve
from .covermesh import lift_to_cover, mesh_stats
from .errors import OutputError, RamiperiodError, ValidationError
from .homology import hyperelliptic_basis, tree_cotree_basis
from .meshgen import build_base_mesh
from .periods import compare, period_matrix, save_result_json
from .weights import build_weight_set

SCHEMES = ("clustering-random", "clustering-fibonacci",
           "homogeneous-random", "homogeneous-fibonacci")

CSV_HEADER = "scheme,seed,n_base,h,min_angle,err_fro,err_modular,symmetry_defect,wall_time_s"


@dataclass
class ExperimentPlan:
    curve: str
    schemes: tuple = SCHEMES
    sizes: tuple = (250, 500, 1000, 2000, 4000, 8000)
    seeds: tuple = (1, 2, 3)
    weight_mode: str = "chart"
    csv_path: str = None
    svg_path: str = None
    json_dir: str = None

    def validate(self):
        for s in self.schemes:
            if s not in SCHEMES:
                raise ValidationError(f"unknown scheme {s!r}")
        if list(self.sizes) != sorted(set(self.sizes)):
            raise ValidationError("sizes must be strictly increasing")
        if len(self.sizes) < 3:
            raise ValidationError("need at least 3 sizes for slope fitting")
        if self.weight_mode not in ("chart", "spherical"):
            raise ValidationError(f"unknown weight mode {self.weight_mode!r}")


@dataclass
class ConvergenceRow:
    scheme: str
    seed: int
    n_base: int
    h: float = None
    min_angle: float = None
    err_fro: float = None
    err_modular: float = None
    symmetry_defect: float = None
    wall_time_s: float = None
    error: str = None


def run_cell(curve_path, scheme, n_base, seed, weight_mode="chart",
             json_dir=None) -> ConvergenceRow:
    """One grid cell: mesh, weights, cuts, periods, comparison."""
    t0 = time.perf_counter()
    row = ConvergenceRow(scheme=scheme, seed=seed, n_base=n_base)
    try:
        cover = load_curve(curve_path)
        if cover.reference_pi is None:
            raise ValidationError("curve file has no reference_pi")
        sampler = "fibonacci" if scheme.endswith("fibonacci") else "random"
        adapt = scheme.startswith("clustering")
        tri = build_base_mesh(cover, sampler, n_base, seed=seed, adapt=adapt)
        mesh = lift_to_cover(tri, cover)
        weights = build_weight_set(mesh, weight_mode)
        if cover.degree == 2 and cover.is_hyperelliptic_form():
            cuts = hyperelliptic_basis(mesh, cover)
        else:
            cuts = tree_cotree_basis(mesh)
        stats = mesh_stats(mesh)
        result = period_matrix(mesh, weights, cuts, method="direct", stats=stats)
        g = cuts.genus
        row.h = stats.h
        row.min_angle = stats.min_angle
        row.symmetry_defect = result.symmetry_defect
        if g == 1:
            row.err_modular = compare(result, cover.reference_pi, "modular_g1")
            row.err_fro = compare(result, cover.reference_pi, "direct")
        else:
            row.err_fro = compare(result, cover.reference_pi, "signed_permutation")
        if json_dir:
            os.makedirs(json_dir, exist_ok=True)
            name = f"{cover.name or 'curve'}_{scheme}_n{n_base}_s{seed}.json"
            err = row.err_modular if g == 1 else row.err_fro
            save_result_json(result, os.path.join(json_dir, name),
                             curve=cover.name, error_vs_reference=err)
    except RamiperiodError as exc:
        row.error = f"{type(exc).__name__}: {exc}"
    row.wall_time_s = time.perf_counter() - t0
    return row


def _run_cell_args(args):
    return run_cell(*args)


def fit_slope(points) -> float:
    """Least-squares slope of log(err) against log(h)."""
    pts = [(float(h), float(e)) for h, e in points]
    if len(pts) < 3:
        raise ValidationError(f"need at least 3 points to fit a slope, got {len(pts)}")
    if any(h <= 0 or e <= 0 for h, e in pts):
        raise ValidationError("slope fit needs positive h and err values")
    hs = np.log([p[0] for p in pts])
    es = np.log([p[1] for p in pts])
    return float(np.polyfit(hs, es, 1)[0])


def _row_error(row: ConvergenceRow):
    return row.err_modular if row.err_modular is not None else row.err_fro


def scheme_slopes(rows) -> dict:
    """Fitted slope per scheme over per-size medians (seeds aggregated)."""
    out = {}
    for scheme in sorted({r.scheme for r in rows}):
        good = [r for r in rows if r.scheme == scheme and r.error is None
                and _row_error(r) and r.h]
        per_size = {}
        for r in good:
            per_size.setdefault(r.n_base, []).append(r)
        pts = []
        for n in sorted(per_size):
            grp = per_size[n]
            pts.append((float(np.median([r.h for r in grp])),
                        float(np.median([_row_error(r) for r in grp]))))
        try:
            out[scheme] = fit_slope(pts)
        except ValidationError:
            out[scheme] = None
    return out


def run_convergence(plan: ExperimentPlan, workers: int = None):
    """Run the grid and fit slopes; returns (rows, slopes dict)."""
    plan.validate()
    cover = load_curve(plan.curve)
    if cover.reference_pi is None:
        raise ValidationError(f"curve file {plan.curve} has no reference_pi")
    tasks = []
    for scheme in plan.schemes:
        seeds = plan.seeds if scheme.endswith("random") else (0,)
        for n in plan.sizes:
            for seed in seeds:
                tasks.append((plan.curve, scheme, n, seed, plan.weight_mode,
                              plan.json_dir))
    if workers is None:
        env = os.environ.get("RAMIPERIOD_WORKERS")
        workers = int(env) if env else min(4, os.cpu_count() or 1)
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_cell_args, tasks))
    else:
        rows = [run_cell(*t) for t in tasks]
    rows.sort(key=lambda r: (r.scheme, r.n_base, r.seed))
    slopes = scheme_slopes(rows)
    if plan.csv_path:
        emit_csv(rows, plan.csv_path)
    if plan.svg_path:
        emit_svg(rows, slopes, plan.svg_path)
    return rows, slopes


def _fmt(x, spec="%.12g"):
    return "" if x is None else (spec % x)


def emit_csv(rows, path):
    """Deterministic CSV with the fixed header; failed cells keep their
    scheme/seed/size and wall time with empty metric fields."""
    if not rows:
        raise ValidationError("no rows to emit")
    lines = [CSV_HEADER]
    for r in rows:
        lines.append(",".join([
            r.scheme, str(r.seed), str(r.n_base), _fmt(r.h), _fmt(r.min_angle),
            _fmt(r.err_fro), _fmt(r.err_modular), _fmt(r.symmetry_defect),
            _fmt(r.wall_time_s, "%.3f"),
        ]))
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}") from exc


_PANEL = 300
_MARGIN = 55


def _svg_panel(idx, scheme, pts, slope):
    x0 = _MARGIN + idx * (_PANEL + _MARGIN)
    y0 = _MARGIN
    out = [f'<rect x="{x0}" y="{y0}" width="{_PANEL}" height="{_PANEL}" '
           'fill="none" stroke="black" stroke-width="1"/>']
    out.append(f'<text x="{x0 + _PANEL / 2:.2f}" y="{y0 - 10}" text-anchor="middle" '
               f'font-size="13">{scheme}</text>')
    if pts:
        lx = [math.log10(h) for h, _ in pts]
        ly = [math.log10(e) for _, e in pts]
        xmin, xmax = min(lx) - 0.1, max(lx) + 0.1
        ymin, ymax = min(ly) - 0.1, max(ly) + 0.1

        def sx(v):
            return x0 + (v - xmin) / (xmax - xmin) * _PANEL

        def sy(v):
            return y0 + _PANEL - (v - ymin) / (ymax - ymin) * _PANEL

        for X, Y in zip(lx, ly):
            out.append(f'<circle cx="{sx(X):.2f}" cy="{sy(Y):.2f}" r="3" '
                       'fill="steelblue"/>')
        if slope is not None:
            xm = sum(lx) / len(lx)
            ym = sum(ly) / len(ly)
            xa, xb = xmin + 0.05, xmax - 0.05
            ya = ym + slope * (xa - xm)
            yb = ym + slope * (xb - xm)
            out.append(f'<line x1="{sx(xa):.2f}" y1="{sy(ya):.2f}" '
                       f'x2="{sx(xb):.2f}" y2="{sy(yb):.2f}" '
                       'stroke="black" stroke-width="1"/>')
            out.append(f'<text x="{x0 + 8}" y="{y0 + 18}" font-size="12">'
                       f'slope {slope:.2f}</text>')
    out.append(f'<text x="{x0 + _PANEL / 2:.2f}" y="{y0 + _PANEL + 30}" '
               'text-anchor="middle" font-size="11">log10 h</text>')
    return out


def emit_svg(rows, slopes, path):
    """Log-log scatter panels, one per scheme, with fitted slope lines."""
    if not rows:
        raise ValidationError("no rows to emit")
    schemes = sorted({r.scheme for r in rows})
    width = _MARGIN + len(schemes) * (_PANEL + _MARGIN)
    height = 2 * _MARGIN + _PANEL + 20
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
             f'height="{height}" viewBox="0 0 {width} {height}">',
             '<rect width="100%" height="100%" fill="white"/>']
    for idx, scheme in enumerate(schemes):
        pts = [(r.h, _row_error(r)) for r in rows
               if r.scheme == scheme and r.error is None and r.h and _row_error(r)]
        parts.extend(_svg_panel(idx, scheme, pts, slopes.get(scheme)))
    parts.append("</svg>")
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(parts) + "\n")
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}") from exc
