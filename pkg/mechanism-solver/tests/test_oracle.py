import math

import numpy as np
import pytest

from errors import InfeasibleInput, InvalidParameter, MassMismatch, SizeLimit
from mechanism import MenuOption
from oracle import (DiscreteInstance, GridMeasure, RelaxedSolution, TransportPlan, cost, discretize_instance,
                    duality_gap, evaluate_menu, grid_measures, product_plan, solve_discrete_transport,
                    solve_grid_lp, solve_relaxed_grid, uniform_product)

GOLDEN_RATIO = (1.0 + math.sqrt(5.0)) / 2.0
HALF_LOTTERY_MENU = [MenuOption(1.0, 0.5, 2.5), MenuOption(1.0, 1.0, 4.0)]


def ic_violation(result):
    """Largest gain any type gets from another type's outcome."""
    z, q, t = result.instance.types, result.q, result.t
    own = np.sum(z * q, axis=1) - t
    other = z @ q.T - t[None, :]
    return float(np.max(other - own[:, None]))


class TestDiscreteInstance:
    def test_uniform_product(self):
        d = uniform_product([1, 2], [1, 3])
        assert len(d) == 4
        assert d.types.tolist() == [[1.0, 1.0], [1.0, 3.0], [2.0, 1.0], [2.0, 3.0]]
        np.testing.assert_allclose(d.probabilities, 0.25)

    @pytest.mark.parametrize('probabilities', [[0.5, 0.4], [1.5, -0.5], [1.0]])
    def test_rejects_bad_probabilities(self, probabilities):
        with pytest.raises(InvalidParameter):
            DiscreteInstance([[1.0, 1.0], [2.0, 2.0]], probabilities)

    def test_discretized_instance(self, exp11_field):
        d = discretize_instance(exp11_field.instance, k=5)
        assert len(d) == 25
        assert d.probabilities.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(np.diff(np.unique(d.types[:, 0])) > 0)


class TestGridLP:
    def test_two_by_two(self):
        result = solve_grid_lp(uniform_product([1, 2], [1, 2]))
        assert result.revenue == pytest.approx(2.25, abs=1e-9)
        assert ic_violation(result) <= 1e-9
        assert np.all(result.utilities() >= -1e-9)

    def test_half_lottery_instance(self):
        d = uniform_product([1, 2], [1, 3])
        result = solve_grid_lp(d)
        assert result.revenue == pytest.approx(2.625, abs=1e-9)
        menu = evaluate_menu(d, HALF_LOTTERY_MENU)
        assert menu.revenue == pytest.approx(result.revenue, abs=1e-9)
        np.testing.assert_allclose(result.utilities(), menu.utilities, atol=1e-6)

    def test_menu_payments(self):
        menu = evaluate_menu(uniform_product([1, 2], [1, 3]), HALF_LOTTERY_MENU)
        np.testing.assert_allclose(menu.payments, [0.0, 4.0, 2.5, 4.0])
        assert menu.to_dict()['revenue'] == pytest.approx(2.625)

    def test_size_limit(self):
        with pytest.raises(SizeLimit):
            solve_grid_lp(uniform_product([1, 2], [1, 2]), size_limit=3)

    def test_to_dict(self):
        data = solve_grid_lp(uniform_product([1, 2], [1, 2])).to_dict()
        assert len(data['outcomes']) == 4
        assert set(data['outcomes'][0]) == {'type', 'q', 't'}

    @pytest.mark.slow
    def test_exponential_grid_near_bundling(self, exp11_field):
        d = discretize_instance(exp11_field.instance, k=16)
        result = solve_grid_lp(d)
        bundle = evaluate_menu(d, [MenuOption(1.0, 1.0, GOLDEN_RATIO)])
        assert result.revenue >= bundle.revenue - 1e-7
        assert result.revenue == pytest.approx(GOLDEN_RATIO ** 3 * math.exp(-GOLDEN_RATIO), abs=0.2)
        assert ic_violation(result) <= 1e-7


class TestRelaxedProblem:
    @pytest.fixture
    def corner_measures(self):
        return GridMeasure.single((1.0, 1.0)), GridMeasure.single((0.0, 0.0))

    def test_cost(self):
        assert cost((2.0, 1.0), (0.5, 3.0)) == 1.5
        assert cost((0.0, 0.0), (1.0, 1.0)) == 0.0

    def test_value_equals_transport_cost(self, corner_measures):
        mu, nu = corner_measures
        u = solve_relaxed_grid(mu, nu)
        assert u.value == pytest.approx(2.0, abs=1e-9)
        plan, total = solve_discrete_transport(mu, nu)
        assert total == pytest.approx(2.0, abs=1e-9)
        report = duality_gap(u, plan, nu.total)
        assert report.gap == pytest.approx(0.0, abs=1e-9)
        assert report.slackness <= 1e-9

    def test_mass_mismatch(self):
        with pytest.raises(MassMismatch):
            solve_relaxed_grid(GridMeasure.single((1.0, 1.0)), GridMeasure.single((0.0, 0.0), 0.5))

    def test_infeasible_potential(self, corner_measures):
        mu, nu = corner_measures
        u = RelaxedSolution.from_function(lambda p: 3.0 * p[0], mu, nu)
        with pytest.raises(InfeasibleInput):
            duality_gap(u, product_plan(mu, nu), nu.total)

    def test_plan_with_wrong_marginals(self, corner_measures):
        mu, nu = corner_measures
        plan = TransportPlan([(np.array([1.0, 1.0]), np.array([0.0, 0.0]), 0.5)], mu, nu)
        with pytest.raises(InfeasibleInput):
            duality_gap(RelaxedSolution.zero(mu, nu), plan, nu.total)

    def test_zero_potential_gap(self, rng):
        mu = GridMeasure(rng.uniform(0.0, 2.0, (6, 2)), np.full(6, 1.0 / 6.0))
        nu = GridMeasure(rng.uniform(0.0, 2.0, (4, 2)), np.full(4, 0.25))
        report = duality_gap(RelaxedSolution.zero(mu, nu), product_plan(mu, nu), nu.total)
        assert report.value == 0.0
        assert report.gap >= 0.0

    @pytest.mark.parametrize('seed', range(20))
    def test_weak_duality_for_linear_potentials(self, seed):
        generator = np.random.default_rng(seed)
        a, b = generator.uniform(0.0, 1.0, 2)
        mu = GridMeasure(generator.uniform(0.0, 2.0, (5, 2)), np.full(5, 0.2))
        nu = GridMeasure(generator.uniform(0.0, 2.0, (5, 2)), np.full(5, 0.2))
        u = RelaxedSolution.from_function(lambda p: a * p[0] + b * p[1], mu, nu)
        report = duality_gap(u, product_plan(mu, nu), nu.total)
        assert report.gap >= -1e-12
        optimal, _ = solve_discrete_transport(mu, nu)
        assert duality_gap(u, optimal, nu.total).gap >= -1e-9

    @pytest.mark.slow
    def test_exponential_grid_duality(self, exp11_field):
        mu, nu = grid_measures(exp11_field, k=12)
        u = solve_relaxed_grid(mu, nu, anchor=exp11_field.instance.d_minus)
        plan, _ = solve_discrete_transport(mu, nu)
        report = duality_gap(u, plan, nu.total)
        assert abs(report.gap) <= 1e-6
        assert report.slackness <= 1e-6
        assert u.max_violation() <= 1e-9
