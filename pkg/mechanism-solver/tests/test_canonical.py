import numpy as np
import pytest

from canonical import (CanonicalPartition, assemble_partition, compute_boundary_curves, curve_end,
                       find_branches, find_critical_price, right_point, solve_canonical, top_point,
                       verify_well_formed)
from dominance import discretize_problem, grid_dominance_oracle, problem_from_field
from errors import NoSolution
from exponential import solve_two_exponential
from mechanism import audit_ic_ir, partition_sampler, utility
from numerics import BoundaryCurve

P_STAR = 0.71307


@pytest.fixture(scope='module')
def beta_solution(beta_field):
    return solve_canonical(beta_field)


class TestBoundaryCurves:
    def test_top_curve_point(self, beta_field):
        assert top_point(beta_field, 0.16016) == pytest.approx(0.55291, abs=1e-3)

    def test_right_curve_point(self, beta_field):
        assert right_point(beta_field, 0.62307) == pytest.approx(0.09, abs=1e-3)

    def test_right_curve_end(self, beta_field):
        assert curve_end(beta_field, 'right') == pytest.approx(0.63718, abs=1e-3)


class TestPartitionGeometry:
    """A hand-built partition: bundle line from (0.2, 0.5) to (0.5, 0.2) between two straight pieces."""

    @pytest.fixture
    def partition(self):
        s = BoundaryCurve([0.0, 0.2, 0.5, 0.6], [0.6, 0.5, 0.2, 0.0], breaks=(0.2, 0.5), concave=True)
        return CanonicalPartition(s, 0.2, 0.5, 0.6, 0.7, (0.0, 0.0), (1.0, 1.0))

    def test_labels(self, partition):
        assert partition.s_b == pytest.approx(0.2)
        assert partition.has_lotteries
        assert partition.classify(0.1, 0.1) == 'Z'
        assert partition.classify(0.1, 0.9) == 'A'
        assert partition.classify(0.9, 0.1) == 'B'
        assert partition.classify(0.9, 0.9) == 'W'
        labels = partition.classify_array([0.1, 0.1, 0.9, 0.9], [0.1, 0.9, 0.1, 0.9])
        assert labels.tolist() == ['Z', 'A', 'B', 'W']

    def test_segment(self, partition):
        segment = partition.segment()
        assert segment.domain == (0.2, 0.5)
        assert segment(0.3) == pytest.approx(0.4)

    def test_to_dict(self, partition):
        data = partition.to_dict()
        assert data['p_star'] == 0.7
        assert data['has_lotteries']
        assert data['s']['breaks'] == [0.2, 0.5]


@pytest.mark.slow
class TestBetaContinuum:
    def test_critical_price(self, beta_solution):
        partition = beta_solution.partition
        assert partition.p_star == pytest.approx(P_STAR, abs=1e-3)
        assert partition.a == pytest.approx(0.16016, abs=1e-3)
        assert partition.b == pytest.approx(0.62307, abs=1e-3)
        assert partition.c == pytest.approx(0.63718, abs=1e-3)
        assert partition.s(partition.a) == pytest.approx(0.55291, abs=1e-3)
        assert partition.s_b == pytest.approx(0.09, abs=1e-3)
        assert partition.has_lotteries

    def test_well_formed(self, beta_solution):
        report = beta_solution.report
        assert report.passed, report.to_dict()
        assert set(report.checks) == {'zero_set_in_y', 'zero_set_mass', 'vertical_lines', 'horizontal_lines',
                                      'dominance'}
        assert beta_solution.mechanism is not None

    def test_bundle_region_outcome(self, beta_solution):
        u, chosen = utility(beta_solution.mechanism, (0.9, 0.9))
        assert u == pytest.approx(1.8 - P_STAR, abs=1e-3)
        assert chosen.q == (1.0, 1.0)
        assert chosen.t == pytest.approx(P_STAR, abs=1e-3)

    def test_continuum_of_lotteries(self, beta_solution, rng):
        partition = beta_solution.partition
        z1 = rng.uniform(0.01, partition.a - 0.01, 40)
        z2 = np.full_like(z1, 0.95)
        q, _ = beta_solution.mechanism.outcomes(np.column_stack([z1, z2]))
        assert np.all(q[:, 0] > 0.0) and np.all(q[:, 0] < 1.0)
        np.testing.assert_allclose(q[:, 1], 1.0)

        z2 = rng.uniform(0.005, partition.s_b - 0.005, 40)
        z1 = np.full_like(z2, 0.95)
        q_b, _ = beta_solution.mechanism.outcomes(np.column_stack([z1, z2]))
        outcomes = np.round(np.vstack([q, q_b]), 9)
        assert len(np.unique(outcomes, axis=0)) >= 50

    def test_incentives(self, beta_solution):
        sampler = partition_sampler(beta_solution.partition, beta_solution.partition.d_plus)
        report = audit_ic_ir(beta_solution.mechanism, sampler, count=10_000)
        assert report.passed, report.to_dict()
        assert report.ic_violation <= 1e-8
        assert report.ir_violation <= 1e-9

    @pytest.mark.parametrize('shift', [-0.02, 0.05])
    def test_shifted_price_misses_mass(self, beta_field, beta_solution, shift):
        p = beta_solution.partition.p_star + shift
        branches = find_branches(beta_solution.s_top, beta_solution.s_right)
        if p > branches.max_price:
            with pytest.raises(NoSolution):
                assemble_partition(beta_field, beta_solution.s_top, beta_solution.s_right, p, samples=100)
            return
        shifted = assemble_partition(beta_field, beta_solution.s_top, beta_solution.s_right, p, samples=100,
                                     branches=branches)
        report = verify_well_formed(beta_field, shifted, probe_count=30)
        assert not report.checks['zero_set_mass'].passed
        assert not report.passed

    def test_refined_price_balances_mass(self, beta_solution):
        assert beta_solution.report.checks['zero_set_mass'].residual <= 1e-7

    def test_price_stable_under_coarser_curves(self, beta_field, beta_solution):
        s_top, s_right = compute_boundary_curves(beta_field, samples=120)
        p_star, _, a, b, _ = find_critical_price(beta_field, s_top, s_right, samples=120)
        assert p_star == pytest.approx(beta_solution.partition.p_star, abs=1e-4)
        assert a == pytest.approx(beta_solution.partition.a, abs=1e-4)
        assert b == pytest.approx(beta_solution.partition.b, abs=1e-4)

    def test_grid_witness_on_bundle_region(self, beta_field, beta_solution):
        partition = beta_solution.partition
        problem = problem_from_field(beta_field, (partition.a, partition.s_b), partition.segment())
        g, h = discretize_problem(problem, 20, workers=1)
        feasible, plan = grid_dominance_oracle(g, h, tol=1e-6)
        assert feasible
        assert plan.is_monotone()


@pytest.mark.slow
class TestExponentialThroughCanonicalPath:
    def test_matches_closed_form(self, exp21_field):
        s_top, s_right = compute_boundary_curves(exp21_field)
        p_star, _, a, b, c = find_critical_price(exp21_field, s_top, s_right)
        closed = solve_two_exponential(2.0, 1.0)
        assert p_star == pytest.approx(closed.p_star, abs=1e-6)
        assert a == pytest.approx(0.0, abs=1e-6)
        assert b == pytest.approx(2.0 - closed.p_star, abs=1e-5)
        assert c == pytest.approx(1.0, abs=1e-5)
