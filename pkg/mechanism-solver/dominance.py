"""Stochastic dominance certificates: the line-integral sufficient condition and a max-flow grid oracle."""
import logging
import math
from collections import defaultdict, deque
from dataclasses import dataclass, field

import networkx as nx
import numpy as np
from tqdm import tqdm

from config import DEFAULT_CURVE_TOL, DEFAULT_FLOW_RESOLUTION, DEFAULT_FLOW_TOL, DEFAULT_NUM_WORKERS, \
    DEFAULT_PROBE_COUNT
from errors import MalformedRegion, MassMismatch
from measures import ExcludedDensity, Measure, PartDensity, integrate_cells
from numerics import DEFAULT_TOLERANCE, BoundaryCurve, CheckResult, CurveBound, MaxBound, Region, Tolerance, \
    integrate_1d, integrate_2d

SPOT_CHECKS = 25
DECOMPOSITION_TOL = 1e-8
ETA_PAIRS = 2000
LATTICE_NODE_LIMIT = 250_000
SURROGATE_NOTE = ('line integrals checked at finitely many points on the boundary of R; '
                  'this is a numerical surrogate for the continuum condition')


@dataclass(frozen=True, eq=False)
class Difference:
    g: object
    h: object

    def __call__(self, z1, z2):
        return self.g(z1, z2) - self.h(z1, z2)


@dataclass(frozen=True, eq=False)
class DominanceProblem:
    """Densities g, h on the box C = [c1, d1+) x [c2, d2+) with g = h = 0 on the
    decreasing set R below `boundary`, and g - h = alpha(z1) beta(z2) eta(z) on C minus R.

    `extent` is a finite corner used for sampling when C is unbounded.
    """
    g: object
    h: object
    corner: tuple
    upper: tuple
    boundary: BoundaryCurve | None
    alpha: object
    beta: object
    eta: object
    eta_increasing: bool = False
    tails: tuple = (None, None)
    extent: tuple | None = None

    def __post_init__(self):
        if self.boundary is not None and not isinstance(self.boundary, BoundaryCurve):
            raise MalformedRegion("R must be given by a decreasing BoundaryCurve")
        (c1, c2), (u1, u2) = self.corner, self.upper
        if not (c1 < u1 and c2 < u2):
            raise MalformedRegion(f"Empty box with corner {self.corner} and upper end {self.upper}")
        if self.boundary is not None:
            lo, _ = self.boundary.domain
            if lo < c1 - 1e-12 or self.boundary.range[0] < c2 - 1e-9:
                raise MalformedRegion(f"Curve {self.boundary.name} leaves the box at corner {self.corner}")
        if self.extent is None:
            object.__setattr__(self, 'extent', (u1 if math.isfinite(u1) else c1 + 10.0,
                                                u2 if math.isfinite(u2) else c2 + 10.0))
        self._spot_check()

    def in_r(self, z1, z2):
        if self.boundary is None:
            return False
        lo, hi = self.boundary.domain
        return lo <= z1 <= hi and z2 <= self.boundary(z1)

    def _spot_check(self):
        rng = np.random.default_rng(0)
        (c1, c2), (e1, e2) = self.corner, self.extent
        points = np.column_stack([rng.uniform(c1, e1, SPOT_CHECKS), rng.uniform(c2, e2, SPOT_CHECKS)])
        if self.boundary is not None:
            lo, hi = self.boundary.domain
            x = rng.uniform(lo, hi, SPOT_CHECKS)
            below = np.column_stack([x, c2 + rng.uniform(0.0, 1.0, SPOT_CHECKS) * (self.boundary(x) - c2)])
            for z1, z2 in below:
                if self.g(z1, z2) != 0 or self.h(z1, z2) != 0:
                    raise MalformedRegion(f"g and h must vanish on R, not at ({z1:.6g}, {z2:.6g})")
        for z1, z2 in points:
            if self.alpha(z1) < 0 or self.beta(z2) < 0:
                raise MalformedRegion(f"alpha and beta must be nonnegative, failed at ({z1:.6g}, {z2:.6g})")
            if self.in_r(z1, z2):
                continue
            product = self.alpha(z1) * self.beta(z2) * self.eta(z1, z2)
            difference = self.g(z1, z2) - self.h(z1, z2)
            if abs(product - difference) > DECOMPOSITION_TOL * max(1.0, abs(difference)):
                raise MalformedRegion(f"g - h differs from alpha*beta*eta at ({z1:.6g}, {z2:.6g})")

    def difference(self):
        return Difference(self.g, self.h)

    def region(self):
        """C minus R as an integration region."""
        (c1, c2), (u1, u2) = self.corner, self.upper
        if self.boundary is None:
            return Region.box(c1, u1, c2, u2, tails=self.tails)
        return Region((c1, u1), MaxBound((c2, CurveBound(self.boundary, fill=c2))), u2,
                      outer_points=(self.boundary.domain[1],), outer_tail=self.tails[0], inner_tail=self.tails[1])

    def boundary_probes(self, probe_count):
        """Points on the outer boundary of R: a vertical family by z1, a horizontal family by z2."""
        if self.boundary is None:
            return np.array([self.corner]), np.array([self.corner])
        lo, hi = self.boundary.domain
        y_lo, y_hi = self.boundary.range
        x = np.linspace(lo, hi, probe_count)
        y = np.linspace(max(y_lo, self.corner[1]), y_hi, probe_count)
        vertical = np.column_stack([x, self.boundary(x)])
        horizontal = np.column_stack([self.boundary.inverse(y), y])
        return vertical, horizontal


@dataclass
class CertReport:
    """Named dominance checks; passing all of them certifies g dominates h."""
    checks: dict = field(default_factory=dict)
    note: str = SURROGATE_NOTE

    @property
    def passed(self):
        return all(check.passed for check in self.checks.values())

    def to_dict(self):
        return {
            'passed': self.passed,
            'note': self.note,
            'checks': {name: check.to_dict() for name, check in self.checks.items()},
        }


def line_integral(problem, z_star, axis, tol=DEFAULT_TOLERANCE):
    """Integral of g - h from z_star to the upper support end along axis 0 (e1) or 1 (e2)."""
    z1, z2 = float(z_star[0]), float(z_star[1])
    diff = problem.difference()
    start, end = (z1, problem.upper[0]) if axis == 0 else (z2, problem.upper[1])
    if not start < end:
        return 0.0
    if axis == 0:
        f = lambda t: diff(t, z2)
    else:
        f = lambda t: diff(z1, t)
    return integrate_1d(f, start, end, tol, tail=problem.tails[axis])


def _eta_check(problem, margin_tol):
    if problem.eta_increasing:
        return CheckResult('eta_increasing', True, 0.0, margin_tol, detail='analytic')
    rng = np.random.default_rng(0)
    (c1, c2), (e1, e2) = problem.corner, problem.extent
    z = np.column_stack([rng.uniform(c1, e1, ETA_PAIRS), rng.uniform(c2, e2, ETA_PAIRS)])
    w = z + rng.exponential(0.1 * max(e1 - c1, e2 - c2), size=z.shape)
    w = np.minimum(w, [e1, e2])
    worst, location = -math.inf, None
    for (a1, a2), (b1, b2) in zip(z, w):
        if problem.in_r(a1, a2):
            continue
        excess = problem.eta(a1, a2) - problem.eta(b1, b2)
        if excess > worst:
            worst, location = float(excess), (a1, a2, b1, b2)
    worst = max(worst, 0.0)
    return CheckResult('eta_increasing', worst <= margin_tol, worst, margin_tol, location=location,
                       detail='sampled')


def check_region_dominance(problem, tol=DEFAULT_TOLERANCE, probe_count=DEFAULT_PROBE_COUNT,
                           margin_tol=DEFAULT_CURVE_TOL, progress=False):
    """Certify g dominates h: nonnegative total, nonpositive outward line integrals from R, increasing eta."""
    report = CertReport()

    total = integrate_2d(problem.difference(), problem.region(), tol)
    report.checks['total'] = CheckResult('total', total >= -margin_tol, total, margin_tol)

    vertical, horizontal = problem.boundary_probes(probe_count)
    for name, axis, probes in (('vertical_lines', 1, vertical), ('horizontal_lines', 0, horizontal)):
        worst, location = -math.inf, None
        for z_star in tqdm(probes, desc=f"Dominance {name}", mininterval=0.5, dynamic_ncols=True,
                           leave=False, disable=not progress):
            value = line_integral(problem, z_star, axis, tol)
            if value > worst:
                worst, location = value, (float(z_star[0]), float(z_star[1]))
        report.checks[name] = CheckResult(name, worst <= margin_tol, worst, margin_tol, location=location)

    report.checks['eta_increasing'] = _eta_check(problem, margin_tol)
    logging.info(f"Dominance: total={total:.3e}, "
                 f"vertical max={report.checks['vertical_lines'].residual:.3e}, "
                 f"horizontal max={report.checks['horizontal_lines'].residual:.3e}, passed={report.passed}")
    return report


# Discrete oracle

@dataclass
class GridMeasure:
    """Finitely many weighted points."""
    points: np.ndarray
    masses: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 2)
        self.masses = np.asarray(self.masses, dtype=float).reshape(-1)
        if len(self.points) != len(self.masses):
            raise MalformedRegion("GridMeasure needs one mass per point")
        if np.any(self.masses < 0):
            raise MalformedRegion("GridMeasure masses must be nonnegative")

    @property
    def total(self):
        return float(self.masses.sum())

    @classmethod
    def single(cls, point, mass=1.0):
        return cls(np.array([point]), np.array([mass]))

    def scaled(self, factor):
        return GridMeasure(self.points.copy(), self.masses * factor)

    def added(self, point, mass):
        return GridMeasure(np.vstack([self.points, point]), np.append(self.masses, mass))

    def to_dict(self):
        return {'points': self.points.tolist(), 'masses': self.masses.tolist()}


@dataclass
class TransportPlan:
    """Entries (source point, target point, mass); source is drawn from `source`, target from `target`."""
    entries: list
    source: GridMeasure | None = None
    target: GridMeasure | None = None

    def marginals(self):
        out_mass, in_mass = defaultdict(float), defaultdict(float)
        for x, y, m in self.entries:
            out_mass[tuple(x)] += m
            in_mass[tuple(y)] += m
        return dict(out_mass), dict(in_mass)

    def is_monotone(self):
        """Every entry moves mass coordinate-wise upward (source below target)."""
        return all(x[0] <= y[0] and x[1] <= y[1] for x, y, m in self.entries if m > 0)

    @property
    def total(self):
        return float(sum(m for _, _, m in self.entries))

    def to_dict(self):
        return {'entries': [[list(map(float, x)), list(map(float, y)), float(m)] for x, y, m in self.entries]}


def _to_units(masses, resolution):
    return [int(round(m / resolution)) for m in masses]


def _lattice_graph(a, b, a_units, b_units):
    xs = np.unique(np.concatenate([a.points[:, 0], b.points[:, 0]]))
    ys = np.unique(np.concatenate([a.points[:, 1], b.points[:, 1]]))
    if len(xs) * len(ys) > LATTICE_NODE_LIMIT:
        return None
    graph = nx.DiGraph()
    for i in range(len(xs)):
        for j in range(len(ys)):
            if i + 1 < len(xs):
                graph.add_edge((i, j), (i + 1, j))
            if j + 1 < len(ys):
                graph.add_edge((i, j), (i, j + 1))
    index = lambda p: (int(np.searchsorted(xs, p[0])), int(np.searchsorted(ys, p[1])))
    for k, (p, units) in enumerate(zip(b.points, b_units)):
        if units > 0:
            graph.add_edge('source', ('b', k), capacity=units)
            graph.add_edge(('b', k), index(p))
    for k, (p, units) in enumerate(zip(a.points, a_units)):
        if units > 0:
            graph.add_edge(index(p), ('a', k))
            graph.add_edge(('a', k), 'sink', capacity=units)
    return graph


def _bipartite_graph(a, b, a_units, b_units):
    graph = nx.DiGraph()
    for k, units in enumerate(b_units):
        if units > 0:
            graph.add_edge('source', ('b', k), capacity=units)
    for k, units in enumerate(a_units):
        if units > 0:
            graph.add_edge(('a', k), 'sink', capacity=units)
    for i, y in enumerate(b.points):
        if b_units[i] <= 0:
            continue
        for j, x in enumerate(a.points):
            if a_units[j] > 0 and y[0] <= x[0] and y[1] <= x[1]:
                graph.add_edge(('b', i), ('a', j))
    return graph


def _decompose(graph, flow, a, b, resolution):
    """Split a source-to-sink flow into (b point, a point, mass) entries."""
    packets = defaultdict(deque)
    for node, amount in flow['source'].items():
        if amount > 0:
            packets[node].append([node[1], amount])
    entries = defaultdict(int)
    order = list(nx.topological_sort(graph))
    for node in order:
        if node in ('source', 'sink'):
            continue
        queue = packets.pop(node, deque())
        for successor, amount in sorted(flow[node].items(), key=lambda kv: str(kv[0])):
            while amount > 0 and queue:
                origin, available = queue[0]
                moved = min(amount, available)
                if successor == 'sink':
                    entries[(origin, node[1])] += moved
                else:
                    packets[successor].append([origin, moved])
                amount -= moved
                if moved == available:
                    queue.popleft()
                else:
                    queue[0][1] -= moved
    return [(b.points[i].copy(), a.points[j].copy(), units * resolution)
            for (i, j), units in sorted(entries.items())]


def grid_dominance_oracle(a, b, tol=DEFAULT_FLOW_TOL, resolution=DEFAULT_FLOW_RESOLUTION):
    """Decide whether a dominates b by max-flow feasibility of an upward transport from b to a.

    Returns (feasible, plan); the plan is a witness when feasible and None otherwise.
    """
    total_a, total_b = a.total, b.total
    if abs(total_a - total_b) > tol * max(1.0, total_a):
        raise MassMismatch(f"Dominance needs equal totals, got {total_a:.12g} and {total_b:.12g}")
    if total_a == 0:
        return True, TransportPlan([], b, a)
    b = b.scaled(total_a / total_b)

    a_units = _to_units(a.masses, resolution)
    b_units = _to_units(b.masses, resolution)
    gap = sum(a_units) - sum(b_units)
    if gap:
        k = int(np.argmax(b_units))
        b_units[k] += gap

    graph = _lattice_graph(a, b, a_units, b_units)
    if graph is None:
        logging.info("Lattice too large, falling back to the bipartite comparability graph")
        graph = _bipartite_graph(a, b, a_units, b_units)
    if 'source' not in graph or 'sink' not in graph:
        return True, TransportPlan([], b, a)

    value, flow = nx.maximum_flow(graph, 'source', 'sink')
    shortfall = (sum(a_units) - value) * resolution
    feasible = shortfall <= tol * max(1.0, total_a)
    logging.debug(f"Dominance flow: value={value * resolution:.12g}, shortfall={shortfall:.3e}")
    if not feasible:
        return False, None
    return True, TransportPlan(_decompose(graph, flow, a, b, resolution), b, a)


def mass_on_union_of_bases(measure, base_points):
    """Mass of the increasing set generated by the base points."""
    base_points = np.asarray(base_points, dtype=float).reshape(-1, 2)
    above = np.zeros(len(measure.points), dtype=bool)
    for p in base_points:
        above |= (measure.points[:, 0] >= p[0]) & (measure.points[:, 1] >= p[1])
    return float(measure.masses[above].sum())


def _edges(start, end, extent, k):
    if math.isfinite(end):
        return np.linspace(start, end, k + 1)
    return np.append(np.linspace(start, max(extent, start + 1e-6), k), math.inf)


def discretize_problem(problem, k, tol=Tolerance(1e-11, 1e-8), workers=DEFAULT_NUM_WORKERS, progress=False):
    """k x k grid measures of g and h: cell masses at each cell's lower-left corner."""
    x_edges = _edges(problem.corner[0], problem.upper[0], problem.extent[0], k)
    y_edges = _edges(problem.corner[1], problem.upper[1], problem.extent[1], k)
    lower = CurveBound(problem.boundary, fill=problem.corner[1]) if problem.boundary is not None else None
    masses = integrate_cells((problem.g, problem.h), x_edges, y_edges, tails=problem.tails, lower=lower,
                             tol=tol, workers=workers, progress=progress, desc=f"Discretizing {k}x{k}")
    xx, yy = np.meshgrid(x_edges[:-1], y_edges[:-1], indexing='ij')
    points = np.column_stack([xx.ravel(), yy.ravel()])
    g_masses = np.clip(masses[0].ravel(), 0.0, None)
    h_masses = np.clip(masses[1].ravel(), 0.0, None)
    return GridMeasure(points, g_masses), GridMeasure(points, h_masses)


def problem_from_field(field, corner, boundary, extent=None):
    """mu against nu restricted to the box at `corner`, with R the set below `boundary`."""
    instance = field.instance
    if extent is None:
        extent = instance.quantile_box(0.999)
    return DominanceProblem(
        g=ExcludedDensity(PartDensity(field, Measure.MU), boundary),
        h=ExcludedDensity(PartDensity(field, Measure.NU), boundary),
        corner=tuple(float(c) for c in corner),
        upper=instance.d_plus,
        boundary=boundary,
        alpha=instance.items[0].pdf,
        beta=instance.items[1].pdf,
        eta=field.eta,
        eta_increasing=field.eta_increasing,
        tails=instance.tails,
        extent=tuple(float(e) for e in extent),
    )
