import math

import numpy as np
import pytest

from errors import CurveDomainMismatch, InvalidInterval, InvalidParameter, MalformedCurve, NoSignChange
from numerics import (BoundaryCurve, CheckResult, CurveBound, LinearBound, MaxBound, MinBound, Region, TailBound,
                      Tolerance, find_root, integrate_1d, integrate_2d, maximize_on_interval)


class TestTolerance:
    def test_rejects_nonpositive(self):
        with pytest.raises(InvalidParameter):
            Tolerance(abs_tol=0.0)
        with pytest.raises(InvalidParameter):
            Tolerance(rel_tol=-1e-9)
        with pytest.raises(InvalidParameter):
            Tolerance(max_depth=0)

    def test_scaled_and_target(self):
        tol = Tolerance(1e-8, 1e-6)
        assert tol.scaled(0.1).abs_tol == pytest.approx(1e-9)
        assert tol.scaled(0.1).rel_tol == tol.rel_tol
        assert tol.target(2.0) == pytest.approx(1e-8 + 2e-6)


class TestIntegrate1d:
    def test_polynomial(self):
        assert integrate_1d(lambda x: x * x, 0.0, 1.0) == pytest.approx(1.0 / 3.0, abs=1e-12)

    def test_exponential_tail_truncation(self):
        value = integrate_1d(lambda x: 2.0 * math.exp(-2.0 * x), 0.0, math.inf, tail=TailBound('exponential', 2.0))
        assert value == pytest.approx(1.0, abs=1e-9)

    def test_polynomial_tail_uses_half_line_mapping(self):
        value = integrate_1d(lambda x: 5.0 * (1.0 + x) ** -6, 0.0, math.inf, tail=TailBound('polynomial', 6.0))
        assert value == pytest.approx(1.0, abs=1e-9)

    def test_break_points(self):
        value = integrate_1d(lambda x: abs(x - 0.3), 0.0, 1.0, points=(0.3,))
        assert value == pytest.approx(0.5 * (0.3 ** 2 + 0.7 ** 2), abs=1e-12)

    def test_empty_interval(self):
        with pytest.raises(InvalidInterval):
            integrate_1d(lambda x: x, 1.0, 1.0)

    def test_truncation_point(self):
        tail = TailBound('exponential', 1.0)
        end = tail.truncation_point(0.0, 1e-10)
        assert end > math.log(1e10)
        assert TailBound('polynomial', 6.0).truncation_point(0.0, 1e-10) is None


class TestIntegrate2d:
    def test_box(self):
        region = Region.box(0.0, 1.0, 0.0, 1.0)
        assert integrate_2d(lambda x, y: x * y, region) == pytest.approx(0.25, abs=1e-12)

    def test_triangle(self):
        region = Region((0.0, 1.0), 0.0, LinearBound(1.0, -1.0))
        assert integrate_2d(lambda x, y: 1.0, region) == pytest.approx(0.5, abs=1e-12)

    def test_outer_axis_swaps_roles(self):
        region = Region((0.0, 1.0), 0.0, LinearBound(1.0, -1.0), outer_axis=1)
        # z2 runs outside, z1 inside: integral of z1 over the triangle
        assert integrate_2d(lambda z1, z2: z1, region) == pytest.approx(1.0 / 6.0, abs=1e-12)

    def test_quadrant_with_tails(self):
        tail = TailBound('exponential', 1.0)
        region = Region.box(0.0, math.inf, 0.0, math.inf, tails=(tail, tail))
        assert integrate_2d(lambda x, y: math.exp(-x - y), region) == pytest.approx(1.0, abs=1e-8)

    def test_composite_bounds(self):
        upper = MinBound((LinearBound(1.5, -1.0), 1.0))
        region = Region((0.0, 1.0), MaxBound((0.0, LinearBound(-0.5, 1.0))), upper)
        # area of the unit square with the two corners cut off
        assert integrate_2d(lambda x, y: 1.0, region) == pytest.approx(1.0 - 0.125 - 0.125, abs=1e-9)

    def test_additive_over_splits(self):
        def f(x, y):
            return math.exp(-x - y) * (1.0 + x * y)

        upper = LinearBound(1.5, -1.0)
        whole = integrate_2d(f, Region((0.0, 1.0), 0.0, upper))
        left = integrate_2d(f, Region((0.0, 0.37), 0.0, upper))
        right = integrate_2d(f, Region((0.37, 1.0), 0.0, upper))
        assert left + right == pytest.approx(whole, abs=1e-10)
        below = integrate_2d(f, Region((0.0, 1.0), 0.0, 0.3))
        above = integrate_2d(f, Region((0.0, 1.0), 0.3, upper))
        assert below + above == pytest.approx(whole, abs=1e-10)

    def test_degenerate_region(self):
        with pytest.raises(InvalidInterval):
            integrate_2d(lambda x, y: 1.0, Region.box(1.0, 1.0, 0.0, 1.0))

    def test_contains(self):
        region = Region((0.0, 1.0), 0.0, LinearBound(1.0, -1.0))
        assert region.contains(0.2, 0.2)
        assert not region.contains(0.8, 0.8)


class TestRootsAndMaxima:
    def test_find_root(self):
        assert find_root(lambda x: x * x - 2.0, 0.0, 2.0) == pytest.approx(math.sqrt(2.0), abs=1e-9)

    def test_endpoint_root(self):
        assert find_root(lambda x: x - 1.0, 1.0, 2.0) == 1.0

    def test_no_sign_change(self):
        with pytest.raises(NoSignChange):
            find_root(lambda x: x * x + 1.0, -1.0, 1.0)

    def test_maximize(self):
        x, value = maximize_on_interval(lambda t: -(t - 0.3) ** 2 + 2.0, 0.0, 1.0)
        assert x == pytest.approx(0.3, abs=1e-6)
        assert value == pytest.approx(2.0, abs=1e-12)

    def test_maximize_at_endpoint(self):
        x, value = maximize_on_interval(lambda t: t, 0.0, 1.0)
        assert x == pytest.approx(1.0)
        assert value == pytest.approx(1.0)


class TestBoundaryCurve:
    @pytest.fixture
    def parabola(self):
        x = np.linspace(0.0, 1.0, 81)
        return BoundaryCurve(x, 1.0 - x ** 2, concave=True, name='parabola')

    def test_evaluate_slope_inverse(self, parabola):
        assert parabola(0.5) == pytest.approx(0.75, abs=1e-5)
        assert parabola.slope(0.5) == pytest.approx(-1.0, abs=1e-3)
        assert parabola.inverse(0.75) == pytest.approx(0.5, abs=1e-5)

    def test_vector_inverse_matches_scalar(self, parabola):
        y = np.array([0.1, 0.4, 0.9])
        np.testing.assert_allclose(parabola.inverse(y), [parabola.inverse(v) for v in y], atol=1e-12)

    def test_domain_and_range(self, parabola):
        assert parabola.domain == (0.0, 1.0)
        assert parabola.range == (0.0, 1.0)
        with pytest.raises(CurveDomainMismatch):
            parabola(1.5)
        with pytest.raises(CurveDomainMismatch):
            parabola.inverse(2.0)

    def test_concavity(self, parabola):
        assert parabola.concavity_violation() < 1e-4
        x = np.linspace(0.0, 1.0, 81)
        convex = BoundaryCurve(x, (1.0 - x) ** 2)
        assert convex.concavity_violation() > 1e-3

    def test_rejects_malformed(self):
        with pytest.raises(MalformedCurve):
            BoundaryCurve([0.0, 1.0], [0.0, 1.0])
        with pytest.raises(MalformedCurve):
            BoundaryCurve([0.0, 0.0, 1.0], [1.0, 0.5, 0.0])
        with pytest.raises(MalformedCurve):
            BoundaryCurve([0.0, 0.5, 1.0], [1.0, 0.8, 0.0], breaks=(0.25,))

    def test_one_sided_slopes_at_break(self):
        curve = BoundaryCurve([0.0, 0.5, 1.0], [1.0, 0.8, 0.0], breaks=(0.5,))
        assert curve.breaks == (0.5,)
        assert curve.slope(0.5, side='left') == pytest.approx(-0.4)
        assert curve.slope(0.5, side='right') == pytest.approx(-1.6)

    def test_curve_bound_fill(self, parabola):
        bound = CurveBound(parabola, fill=-1.0)
        assert bound(2.0) == -1.0
        assert bound(0.5) == pytest.approx(0.75, abs=1e-5)
        inverse = CurveBound(parabola, fill=0.0, inverse=True)
        assert inverse(0.75) == pytest.approx(0.5, abs=1e-5)

    def test_to_dict(self, parabola):
        data = parabola.to_dict(max_points=10)
        assert data['name'] == 'parabola'
        assert data['points'][0] == [0.0, pytest.approx(1.0)]
        assert data['points'][-1][0] == 1.0


def test_check_result_to_dict():
    check = CheckResult('mass', True, 1e-9, 1e-6, location=(0.5, 0.25), detail='ok')
    assert check.to_dict() == {'passed': True, 'residual': 1e-9, 'tol': 1e-6, 'location': [0.5, 0.25],
                               'detail': 'ok'}
