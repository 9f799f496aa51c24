"""Desk-scale ground truth: grid LPs for the mechanism and relaxed problems, and the transport dual."""
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from config import DEFAULT_GRID, DEFAULT_LP_SIZE_LIMIT, DEFAULT_NUM_WORKERS, DEFAULT_QUANTILE_BOX
from dominance import GridMeasure, TransportPlan
from errors import Infeasible, InfeasibleInput, InvalidParameter, MassMismatch, SizeLimit, Unbounded
from measures import cell_masses
from mechanism import MenuMechanism

__all__ = ['DiscreteInstance', 'DualityReport', 'GridLPResult', 'GridMeasure', 'RelaxedSolution', 'TransportPlan',
           'cost', 'discretize_instance', 'duality_gap', 'evaluate_menu', 'grid_measures', 'product_plan',
           'solve_discrete_transport', 'solve_grid_lp', 'solve_relaxed_grid', 'uniform_product']

LP_OPTIONS = {'primal_feasibility_tolerance': 1e-10, 'dual_feasibility_tolerance': 1e-10}
PROBABILITY_TOL = 1e-12
TOTAL_TOL = 1e-6
FEASIBILITY_TOL = 1e-9
PLAN_FLOOR = 1e-15


@dataclass
class DiscreteInstance:
    """Finitely many buyer types with their probabilities."""
    types: np.ndarray
    probabilities: np.ndarray

    def __post_init__(self):
        self.types = np.asarray(self.types, dtype=float).reshape(-1, 2)
        self.probabilities = np.asarray(self.probabilities, dtype=float).reshape(-1)
        if len(self.types) != len(self.probabilities):
            raise InvalidParameter("Each type needs exactly one probability")
        if np.any(self.probabilities < 0):
            raise InvalidParameter("Probabilities must be nonnegative")
        if abs(self.probabilities.sum() - 1.0) > PROBABILITY_TOL:
            raise InvalidParameter(f"Probabilities sum to {self.probabilities.sum():.15f}, not 1")

    def __len__(self):
        return len(self.types)

    def to_dict(self):
        return {'types': self.types.tolist(), 'probabilities': self.probabilities.tolist()}


def uniform_product(values1, values2):
    """Independent items, each uniform on its list of values."""
    types = np.array([(v1, v2) for v1 in values1 for v2 in values2], dtype=float)
    return DiscreteInstance(types, np.full(len(types), 1.0 / len(types)))


def discretize_instance(instance, k=DEFAULT_GRID, box=DEFAULT_QUANTILE_BOX):
    """k x k cell centers over a per-item quantile box, weighted by per-item CDF differences."""
    centers, weights = [], []
    for item in instance.items:
        edges = np.linspace(float(item.ppf(box[0])), float(item.ppf(box[1])), k + 1)
        centers.append(0.5 * (edges[:-1] + edges[1:]))
        w = np.diff(np.asarray(item.cdf(edges), dtype=float))
        weights.append(w / w.sum())
    xx, yy = np.meshgrid(centers[0], centers[1], indexing='ij')
    probabilities = np.outer(weights[0], weights[1]).ravel()
    return DiscreteInstance(np.column_stack([xx.ravel(), yy.ravel()]), probabilities / probabilities.sum())


@dataclass
class GridLPResult:
    q: np.ndarray
    t: np.ndarray
    revenue: float
    instance: DiscreteInstance

    def utilities(self):
        return np.sum(self.instance.types * self.q, axis=1) - self.t

    def to_dict(self):
        return {
            'revenue': float(self.revenue),
            'outcomes': [{'type': z.tolist(), 'q': q.tolist(), 't': float(t)}
                         for z, q, t in zip(self.instance.types, self.q, self.t)],
        }


def solve_grid_lp(d, size_limit=DEFAULT_LP_SIZE_LIMIT):
    """Revenue-optimal IC/IR mechanism for a discrete instance.

    Variables are (q1, q2, t) per type; every ordered pair of types gets an
    IC row and every type an IR row.
    """
    n = len(d)
    if n > size_limit:
        raise SizeLimit(f"{n} types exceed the LP limit of {size_limit}")
    z = d.types
    i, j = np.where(~np.eye(n, dtype=bool))
    m = len(i)
    rows = np.arange(m)
    # IC: -z_i.q_i + t_i + z_i.q_j - t_j <= 0
    data = np.concatenate([-z[i, 0], -z[i, 1], np.ones(m), z[i, 0], z[i, 1], -np.ones(m)])
    cols = np.concatenate([i, n + i, 2 * n + i, j, n + j, 2 * n + j])
    row_idx = np.tile(rows, 6)
    # IR: -z_i.q_i + t_i <= 0
    ir_rows = m + np.arange(n)
    data = np.concatenate([data, -z[:, 0], -z[:, 1], np.ones(n)])
    cols = np.concatenate([cols, np.arange(n), n + np.arange(n), 2 * n + np.arange(n)])
    row_idx = np.concatenate([row_idx, ir_rows, ir_rows, ir_rows])
    a_ub = sparse.csr_matrix((data, (row_idx, cols)), shape=(m + n, 3 * n))
    b_ub = np.zeros(m + n)
    c = np.concatenate([np.zeros(2 * n), -d.probabilities])
    bounds = [(0.0, 1.0)] * (2 * n) + [(None, None)] * n

    logging.info(f"Grid LP: {n} types, {m + n} constraints")
    result = linprog(c, A_ub=a_ub, b_ub=b_ub, bounds=bounds, method='highs', options=LP_OPTIONS)
    if result.status != 0:
        raise Infeasible(f"Grid LP failed: {result.message}")
    x = result.x
    q = np.column_stack([x[:n], x[n:2 * n]])
    t = x[2 * n:]
    return GridLPResult(q, t, float(d.probabilities @ t), d)


@dataclass
class MenuEvaluation:
    revenue: float
    payments: np.ndarray
    utilities: np.ndarray

    def to_dict(self):
        return {'revenue': float(self.revenue), 'payments': self.payments.tolist()}


def evaluate_menu(d, options):
    """Revenue of a menu on a discrete instance, each type choosing its best option."""
    mechanism = MenuMechanism(options)
    q, t = mechanism.outcomes(d.types)
    utilities = np.sum(d.types * q, axis=1) - t
    return MenuEvaluation(float(d.probabilities @ t), t, utilities)


# Relaxed problem and its transport dual

def cost(x, y):
    """c(x, y) = sum of positive parts of x - y."""
    return float(np.sum(np.maximum(np.asarray(x) - np.asarray(y), 0.0)))


def _cost_matrix(xs, ys):
    return np.maximum(xs[:, None, :] - ys[None, :, :], 0.0).sum(axis=2)


def _grid_edges(item, k):
    hi = item.quantile_upper(0.999)
    edges = np.linspace(item.lower, hi, k + 1)
    if not math.isfinite(item.upper):
        edges[-1] = math.inf
    return edges


def _centers(edges):
    finite = edges.copy()
    if math.isinf(finite[-1]):
        finite[-1] = finite[-2] + (finite[-2] - finite[-3])
    return 0.5 * (finite[:-1] + finite[1:])


def grid_measures(field, k=DEFAULT_GRID, workers=DEFAULT_NUM_WORKERS, progress=False):
    """mu and nu on k x k cell centers; mu also carries the exact atom at d_minus."""
    instance = field.instance
    x_edges, y_edges = (_grid_edges(item, k) for item in instance.items)
    mu_cells, nu_cells = cell_masses(field, x_edges, y_edges, workers=workers, progress=progress)
    xx, yy = np.meshgrid(_centers(x_edges), _centers(y_edges), indexing='ij')
    points = np.column_stack([xx.ravel(), yy.ravel()])
    mu_mass, nu_mass = mu_cells.ravel(), nu_cells.ravel()
    keep_mu, keep_nu = mu_mass > 0, nu_mass > 0
    mu = GridMeasure(np.vstack([instance.d_minus, points[keep_mu]]),
                     np.append(field.point_mass_at_dminus, mu_mass[keep_mu]))
    nu = GridMeasure(points[keep_nu], nu_mass[keep_nu])
    logging.info(f"Grid measures {k}x{k}: mu total {mu.total:.10f}, nu total {nu.total:.10f}")
    return mu, nu


def _check_totals(mu, nu):
    if abs(mu.total - nu.total) > TOTAL_TOL * max(1.0, nu.total):
        raise MassMismatch(f"mu carries {mu.total:.12g} but nu carries {nu.total:.12g}")


@dataclass
class RelaxedSolution:
    """u on the union of both supports; value is the objective per unit of nu-mass."""
    points: np.ndarray
    u: np.ndarray
    mu: GridMeasure
    nu: GridMeasure

    def __post_init__(self):
        self._index = {tuple(p): k for k, p in enumerate(map(tuple, self.points))}

    @classmethod
    def zero(cls, mu, nu):
        points = _support(mu, nu)
        return cls(points, np.zeros(len(points)), mu, nu)

    @classmethod
    def from_function(cls, u, mu, nu):
        points = _support(mu, nu)
        return cls(points, np.array([u(p) for p in points], dtype=float), mu, nu)

    def at(self, points):
        return np.array([self.u[self._index[tuple(p)]] for p in np.asarray(points, dtype=float)])

    @property
    def objective(self):
        return float(self.mu.masses @ self.at(self.mu.points) - self.nu.masses @ self.at(self.nu.points))

    @property
    def value(self):
        return self.objective / self.nu.total

    def max_violation(self):
        """Largest excess of u(x) - u(y) over c(x, y) across support pairs."""
        ux, uy = self.at(self.mu.points), self.at(self.nu.points)
        return float(np.max(ux[:, None] - uy[None, :] - _cost_matrix(self.mu.points, self.nu.points)))

    def to_dict(self):
        return {'value': float(self.value), 'objective': float(self.objective), 'points': len(self.points)}


def _support(mu, nu):
    points = np.unique(np.vstack([mu.points, nu.points]), axis=0)
    return points


def solve_relaxed_grid(mu, nu, anchor=None):
    """Maximize sum u dmu - sum u dnu subject to u(x) - u(y) <= c(x, y), with u pinned to 0 at the anchor."""
    _check_totals(mu, nu)
    nu = nu.scaled(mu.total / nu.total)
    points = _support(mu, nu)
    index = {tuple(p): k for k, p in enumerate(map(tuple, points))}
    n = len(points)
    mu_idx = np.array([index[tuple(p)] for p in mu.points])
    nu_idx = np.array([index[tuple(p)] for p in nu.points])

    c = np.zeros(n)
    np.add.at(c, mu_idx, -mu.masses)
    np.add.at(c, nu_idx, nu.masses)

    xi, yj = np.meshgrid(np.arange(len(mu_idx)), np.arange(len(nu_idx)), indexing='ij')
    xi, yj = xi.ravel(), yj.ravel()
    pairs = mu_idx[xi] != nu_idx[yj]
    xi, yj = xi[pairs], yj[pairs]
    m = len(xi)
    a_ub = sparse.csr_matrix((np.concatenate([np.ones(m), -np.ones(m)]),
                              (np.tile(np.arange(m), 2), np.concatenate([mu_idx[xi], nu_idx[yj]]))),
                             shape=(m, n))
    b_ub = _cost_matrix(mu.points, nu.points)[xi, yj]

    anchor = tuple(points[0]) if anchor is None else tuple(map(float, anchor))
    bounds = [(None, None)] * n
    bounds[index[anchor]] = (0.0, 0.0)
    result = linprog(c, A_ub=a_ub, b_ub=b_ub, bounds=bounds, method='highs', options=LP_OPTIONS)
    if result.status == 3:
        raise Unbounded("Relaxed problem is unbounded; the measures are malformed")
    if result.status != 0:
        raise Infeasible(f"Relaxed LP failed: {result.message}")
    solution = RelaxedSolution(points, result.x, mu, nu)
    logging.info(f"Relaxed LP value {solution.value:.10f} over {n} points")
    return solution


def solve_discrete_transport(mu, nu):
    """Minimum-cost plan moving mu onto nu; returns (plan, cost)."""
    _check_totals(mu, nu)
    nu = nu.scaled(mu.total / nu.total)
    nx_, ny = len(mu.points), len(nu.points)
    costs = _cost_matrix(mu.points, nu.points).ravel()
    rows = np.concatenate([np.repeat(np.arange(nx_), ny), nx_ + np.tile(np.arange(ny), nx_)])
    cols = np.concatenate([np.arange(nx_ * ny), np.arange(nx_ * ny)])
    a_eq = sparse.csr_matrix((np.ones(2 * nx_ * ny), (rows, cols)), shape=(nx_ + ny, nx_ * ny))
    b_eq = np.concatenate([mu.masses, nu.masses])
    result = linprog(costs, A_eq=a_eq, b_eq=b_eq, bounds=(0.0, None), method='highs', options=LP_OPTIONS)
    if result.status != 0:
        raise Infeasible(f"Transport LP failed: {result.message}")
    gamma = result.x.reshape(nx_, ny)
    entries = [(mu.points[i].copy(), nu.points[j].copy(), float(gamma[i, j]))
               for i, j in zip(*np.nonzero(gamma > PLAN_FLOOR))]
    total_cost = float(costs @ result.x)
    logging.info(f"Transport cost {total_cost:.10f} with {len(entries)} entries")
    return TransportPlan(entries, mu, nu), total_cost


def product_plan(mu, nu):
    """Independent coupling: feasible and in general far from optimal."""
    _check_totals(mu, nu)
    nu = nu.scaled(mu.total / nu.total)
    entries = [(x.copy(), y.copy(), float(mx * my / mu.total))
               for x, mx in zip(mu.points, mu.masses) for y, my in zip(nu.points, nu.masses)]
    return TransportPlan(entries, mu, nu)


@dataclass
class DualityReport:
    gap: float
    slackness: float
    cost: float
    value: float

    def to_dict(self):
        return {'gap': float(self.gap), 'slackness': float(self.slackness), 'cost': float(self.cost),
                'value': float(self.value)}


def _check_marginals(plan, mu, nu):
    out_mass, in_mass = plan.marginals()
    scale = max(1.0, mu.total)
    for measure, marginal in ((mu, out_mass), (nu.scaled(mu.total / nu.total), in_mass)):
        expected = {}
        for p, m in zip(measure.points, measure.masses):
            expected[tuple(p)] = expected.get(tuple(p), 0.0) + m
        keys = set(expected) | set(marginal)
        worst = max(abs(expected.get(k, 0.0) - marginal.get(k, 0.0)) for k in keys)
        if worst > FEASIBILITY_TOL * scale:
            raise InfeasibleInput(f"Plan marginals are off by {worst:.3e}")


def duality_gap(u, plan, nu_total):
    """(cost / nu_total) - value of u, with the complementary-slackness residual over plan entries."""
    if u.max_violation() > FEASIBILITY_TOL:
        raise InfeasibleInput(f"u violates u(x) - u(y) <= c(x, y) by {u.max_violation():.3e}")
    _check_marginals(plan, u.mu, u.nu)
    total_cost = sum(cost(x, y) * m for x, y, m in plan.entries)
    ux = u.at([x for x, _, _ in plan.entries])
    uy = u.at([y for _, y, _ in plan.entries])
    slack = [abs(cost(x, y) - (a - b)) * m for (x, y, m), a, b in zip(plan.entries, ux, uy)]
    value = u.objective / nu_total
    return DualityReport(gap=total_cost / nu_total - value, slackness=float(max(slack, default=0.0)),
                         cost=float(total_cost), value=float(value))
