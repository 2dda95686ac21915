import json

import numpy as np
import pytest

from ramiperiod import covering
from ramiperiod.covering import (BranchedCover, BranchPoint, chart_image,
                                 load_curve, make_cover, save_curve)
from ramiperiod.errors import ValidationError

T = (1, 0)  # the transposition of two sheets


def hyper(points, rho=2.0):
    return make_cover("t", 2, points, [T] * len(points), rho=rho)


class TestGenus:
    def test_torus(self):
        cover = hyper([0.5 + 0.4j, -0.3 + 0.2j, -0.1 + 0j, 0.1 - 0.2j])
        assert cover.genus() == 1

    def test_genus_two(self):
        pts = [np.exp(1j * np.pi * k / 3) for k in range(6)]
        assert hyper(pts).genus() == 2

    def test_sphere(self):
        assert hyper([0.3 + 0j, -0.3 + 0j]).genus() == 0

    def test_inconsistent_monodromy(self):
        cover = make_cover("bad", 2, [0.3 + 0j, -0.3 + 0j, 0.1j], [T, T, T])
        with pytest.raises(ValidationError, match="identity"):
            cover.genus()

    def test_relabeling_invariance(self, rng):
        # conjugating every monodromy by a fixed permutation keeps the genus
        d = 3
        sigma = (1, 2, 0)
        sig_inv = covering.invert(sigma)
        base = [(1, 2, 0), (1, 2, 0), (1, 2, 0)]
        args = np.sort(rng.uniform(0, 2 * np.pi, len(base)))
        pts = [0.5 * np.exp(1j * a) for a in args]
        g1 = make_cover("c", d, pts, base, rho=2.0).genus()
        conj = [covering.compose(sigma, covering.compose(m, sig_inv)) for m in base]
        g2 = make_cover("c2", d, pts, conj, rho=2.0).genus()
        assert g1 == g2 >= 1

    def test_hyperelliptic_needs_even_count(self):
        cover = hyper([0.3 + 0j, -0.3 + 0j, 0.1j])
        assert any("identity" in v for v in cover.validate())


class TestChartImage:
    def bp(self, gamma_cycles=2, r=3.0, pos=0j):
        return BranchPoint(pos, T, r_adapt=r) if gamma_cycles == 2 else None

    def test_center_maps_to_zero(self):
        assert chart_image(0j, self.bp(r=5.0)) == 0

    def test_positive_ray(self):
        assert chart_image(4 + 0j, self.bp(r=5.0)) == pytest.approx(2.0)

    def test_second_sheet_angle(self):
        # r = 4, accumulated angle 2*pi: continuous-angle rule gives -2
        val = chart_image(4 + 0j, self.bp(r=5.0), turns=1)
        assert val == pytest.approx(-2.0)

    def test_outside_disk(self):
        with pytest.raises(ValidationError, match="outside"):
            chart_image(10 + 0j, self.bp(r=5.0))

    def test_angle_outside_aperture(self):
        with pytest.raises(ValidationError, match="aperture"):
            chart_image(4j, self.bp(r=5.0), turns=2)

    def test_infinity_chart(self):
        bp = BranchPoint(None, T, r_adapt=0.25)
        assert chart_image(100 + 0j, bp) == pytest.approx(0.1)

    def test_injective_on_lift(self, rng):
        bp = BranchPoint(0.0 + 0j, T, r_adapt=1.0)
        rs = rng.uniform(0.05, 0.9, 40)
        phis = rng.uniform(0, 4 * np.pi, 40)
        pts = [chart_image(r * np.exp(1j * (p % (2 * np.pi))), bp,
                           turns=int(p // (2 * np.pi))) for r, p in zip(rs, phis)]
        pts = np.array(pts)
        d = np.abs(pts[:, None] - pts[None, :]) + np.eye(len(pts))
        assert d.min() > 1e-12


class TestValidate:
    def test_torus_spec_clean(self, torus_cover):
        assert torus_cover.validate() == []

    def test_rho_too_small(self):
        cover = hyper([0.2 + 0.1j, -0.2 + 0.1j, -0.1 - 0.1j, 0.1 - 0.2j], rho=0.9)
        assert any("rho" in v for v in cover.validate())

    def test_branch_point_outside_half_disk(self):
        cover = hyper([1.5 + 0j, -0.3 + 0.2j, -0.1 - 0.3j, 0.1 - 0.2j], rho=2.0)
        rep = cover.validate()
        assert any("outside" in v for v in rep)

    def test_branch_point_at_origin_rejected(self):
        cover = hyper([0j, 0.3 + 0j, 0.2j, -0.3 + 0j])
        assert any("origin" in v for v in cover.validate())

    def test_equal_arguments_rejected(self):
        cover = hyper([0.2 + 0j, 0.4 + 0j, 0.2j, -0.3 + 0j])
        assert any("argument" in v for v in cover.validate())

    def test_not_counterclockwise(self):
        cover = hyper([0.3 + 0.1j, 0.3 - 0.1j, -0.3 + 0.1j, -0.3 - 0.1j])
        assert any("counterclockwise" in v for v in cover.validate())


class TestDefaults:
    def test_default_rho_rounds_up(self):
        assert covering.default_rho([0.64 + 0j]) == pytest.approx(1.3)
        assert covering.default_rho([1.0 + 0j]) == pytest.approx(2.0)
        assert covering.default_rho([0.01 + 0j]) == pytest.approx(1.1)

    def test_default_radii(self):
        pts = [0.5 + 0j, -0.5 + 0j, 0.5j, None]
        radii = covering.default_adapt_radii(pts, 2.0)
        dmin = abs(0.5 + 0j - 0.5j)
        assert radii[0] == pytest.approx(dmin / 3)
        assert radii[3] == pytest.approx(1 / 4.0)

    def test_disjoint_disk_invariant(self, torus_cover):
        bps = torus_cover.finite_branch_points
        for i, a in enumerate(bps):
            for b in bps[i + 1:]:
                assert abs(a.position - b.position) > a.r_adapt + b.r_adapt


class TestCurveFile:
    def test_round_trip(self, tmp_path, torus_cover):
        path = tmp_path / "t.json"
        save_curve(torus_cover, path)
        back = load_curve(path)
        assert back.degree == torus_cover.degree
        assert back.rho == torus_cover.rho
        assert [bp.position for bp in back.branch_points] == \
            [bp.position for bp in torus_cover.branch_points]
        assert np.allclose(back.reference_pi, torus_cover.reference_pi)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ValidationError, match="cannot read"):
            load_curve(tmp_path / "nope.json")

    def test_malformed(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"degree": 2}')
        with pytest.raises(ValidationError):
            load_curve(path)

    def test_infinity_position(self, tmp_path):
        data = {"name": "inf", "degree": 2, "rho": 2.0,
                "branch_points": [{"re": 0.3, "im": 0.0}, "inf"],
                "monodromy": [[1, 0], [1, 0]]}
        path = tmp_path / "inf.json"
        path.write_text(json.dumps(data))
        cover = load_curve(path)
        assert cover.branch_points[1].is_infinity
        assert cover.validate() == []
        assert cover.genus() == 0
        assert cover.branch_points[1].r_adapt == pytest.approx(1 / 4.0)
