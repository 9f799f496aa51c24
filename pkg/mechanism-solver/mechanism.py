"""Mechanisms, their induced utilities, IC/IR audits and revenue by two independent formulas."""
import itertools
import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np
from tqdm import tqdm

from config import DEFAULT_AUDIT_PAIRS, DEFAULT_BUNDLE_PRICE_GRID, DEFAULT_MC_SAMPLES, DEFAULT_MC_SHARD_SIZE, \
    DEFAULT_SEED, DEFAULT_SEPARATE_PRICE_GRID
from errors import InvalidParameter, SlopeOutOfRange
from measures import whole_domain
from numerics import DEFAULT_TOLERANCE, CheckResult, Region, integrate_1d, integrate_2d

TIE_TOL = 1e-12
PROBABILITY_SLACK = 1e-9
IC_TOL = 1e-8
IR_TOL = 1e-12
CONVEXITY_TOL = 1e-9
GRADIENT_TOL = 1e-6
FD_STEP = 1e-6


@dataclass(frozen=True)
class MenuOption:
    """Allocation probabilities (q1, q2) at price t."""
    q1: float
    q2: float
    t: float

    def __post_init__(self):
        for q in (self.q1, self.q2):
            if not -PROBABILITY_SLACK <= q <= 1 + PROBABILITY_SLACK:
                raise InvalidParameter(f"Allocation probability {q} outside [0, 1]")
        if self.t < -PROBABILITY_SLACK:
            raise InvalidParameter(f"Price must be nonnegative, got {self.t}")

    @property
    def q(self):
        return (self.q1, self.q2)

    @property
    def is_lottery(self):
        return any(PROBABILITY_SLACK < q < 1 - PROBABILITY_SLACK for q in self.q)

    def value(self, z1, z2):
        return z1 * self.q1 + z2 * self.q2 - self.t

    def to_dict(self):
        return {'q': [float(self.q1), float(self.q2)], 't': float(self.t)}


NULL_OPTION = MenuOption(0.0, 0.0, 0.0)


class Mechanism(ABC):
    """A map from types to outcomes (q, t); the buyer's utility is z.q - t."""
    kind = 'mechanism'

    @abstractmethod
    def outcomes(self, points):
        """Allocations (n, 2) and prices (n,) for an (n, 2) array of types."""

    @abstractmethod
    def utility_at(self, z1, z2):
        """Scalar utility; used inside quadrature."""

    @abstractmethod
    def quadrature_pieces(self, instance):
        """(Region, utility) pairs covering the set where the utility is nonzero."""

    def utilities(self, points):
        points = np.asarray(points, dtype=float).reshape(-1, 2)
        q, t = self.outcomes(points)
        return np.sum(points * q, axis=1) - t

    def outcome(self, z):
        q, t = self.outcomes(np.asarray([z], dtype=float))
        return MenuOption(float(np.clip(q[0, 0], 0, 1)), float(np.clip(q[0, 1], 0, 1)), float(max(t[0], 0.0)))

    def to_dict(self):
        return {'kind': self.kind}


@dataclass(frozen=True, eq=False)
class TieLines:
    """z2 values at which two options of a menu give equal utility, for a fixed z1."""
    options: tuple

    def __call__(self, z1):
        points = []
        for a, b in itertools.combinations(self.options, 2):
            dq2 = a.q2 - b.q2
            if abs(dq2) > TIE_TOL:
                points.append((a.t - b.t - z1 * (a.q1 - b.q1)) / dq2)
        return sorted(p for p in points if math.isfinite(p))


class MenuMechanism(Mechanism):
    """Finite menu; the buyer picks a utility-maximizing option, ties go to the highest price."""
    kind = 'menu'

    def __init__(self, options):
        options = [o if isinstance(o, MenuOption) else MenuOption(*o) for o in options]
        if NULL_OPTION not in options:
            options.insert(0, NULL_OPTION)
        self.options = tuple(options)
        self._q = np.array([o.q for o in self.options], dtype=float)
        self._t = np.array([o.t for o in self.options], dtype=float)

    def _choose(self, points):
        values = points @ self._q.T - self._t
        best = values.max(axis=1, keepdims=True)
        candidates = np.where(values >= best - TIE_TOL, self._t, -np.inf)
        return np.argmax(candidates, axis=1)

    def outcomes(self, points):
        points = np.asarray(points, dtype=float).reshape(-1, 2)
        idx = self._choose(points)
        return self._q[idx], self._t[idx]

    def choose(self, z):
        return self.options[int(self._choose(np.asarray([z], dtype=float))[0])]

    def utility_at(self, z1, z2):
        return max(o.q1 * z1 + o.q2 * z2 - o.t for o in self.options)

    def outer_kinks(self, instance):
        """z1 values where the tie structure changes: tie-line crossings and vertical ties."""
        lo1, lo2 = instance.d_minus
        kinks = set()
        lines = []
        for a, b in itertools.combinations(self.options, 2):
            dq1, dq2, dt = a.q1 - b.q1, a.q2 - b.q2, a.t - b.t
            if abs(dq2) <= TIE_TOL:
                if abs(dq1) > TIE_TOL:
                    kinks.add(dt / dq1)
                continue
            lines.append((dt / dq2, -dq1 / dq2))
            if abs(dq1) > TIE_TOL:
                kinks.add((dt - lo2 * dq2) / dq1)
        for (c1, m1), (c2, m2) in itertools.combinations(lines, 2):
            if abs(m1 - m2) > TIE_TOL:
                kinks.add((c2 - c1) / (m1 - m2))
        return tuple(sorted(k for k in kinks if math.isfinite(k) and k > lo1))

    def quadrature_pieces(self, instance):
        (lo1, lo2), (hi1, hi2) = instance.d_minus, instance.d_plus
        region = Region((lo1, hi1), lo2, hi2, outer_points=self.outer_kinks(instance),
                        inner_points=TieLines(self.options), outer_tail=instance.tails[0],
                        inner_tail=instance.tails[1])
        return [(region, self.utility_at)]

    @property
    def has_lotteries(self):
        return any(o.is_lottery for o in self.options)

    def to_dict(self):
        return {'kind': self.kind, 'options': [o.to_dict() for o in self.options]}


@dataclass(frozen=True, eq=False)
class PartitionMechanism(Mechanism):
    """Outcomes read off a canonical partition by region.

    Z: nothing. A: (-s'(z1), 1) at s(z1) - z1 s'(z1). B: (1, -1/s'(w)) at
    w - z2/s'(w) with w = s^-1(z2). W: both items at the bundle price.
    """
    partition: object
    bundle_price: float | None = None
    kind = 'partition'

    @property
    def price(self):
        return self.partition.p_star if self.bundle_price is None else self.bundle_price

    def outcomes(self, points):
        points = np.asarray(points, dtype=float).reshape(-1, 2)
        z1, z2 = points[:, 0], points[:, 1]
        labels = self.partition.classify_array(z1, z2)
        s = self.partition.s
        q = np.zeros((len(points), 2))
        t = np.zeros(len(points))

        in_a = labels == 'A'
        if np.any(in_a):
            x = z1[in_a]
            slope = s.slope(x, side='left')
            q[in_a, 0] = -slope
            q[in_a, 1] = 1.0
            t[in_a] = s(x) - x * slope

        in_b = labels == 'B'
        if np.any(in_b):
            y = z2[in_b]
            w = np.atleast_1d(s.inverse(y))
            slope = np.atleast_1d(s.slope(w, side='right'))
            with np.errstate(divide='ignore'):
                q[in_b, 0] = 1.0
                q[in_b, 1] = -1.0 / slope
                t[in_b] = w - y / slope

        in_w = labels == 'W'
        q[in_w] = 1.0
        t[in_w] = self.price

        if np.any(q < -PROBABILITY_SLACK) or np.any(q > 1 + PROBABILITY_SLACK) or not np.all(np.isfinite(q)):
            k = int(np.argmax(np.where(np.isfinite(q), np.abs(q - 0.5), np.inf).max(axis=1)))
            raise SlopeOutOfRange(f"Allocation {q[k].tolist()} at {points[k].tolist()} leaves [0, 1]")
        return np.clip(q, 0.0, 1.0), t

    def utility_at(self, z1, z2):
        label = self.partition.classify(z1, z2)
        s = self.partition.s
        if label == 'A':
            return z2 - s(z1)
        if label == 'B':
            return z1 - s.inverse(z2)
        if label == 'W':
            return z1 + z2 - self.price
        return 0.0

    def quadrature_pieces(self, instance):
        regions = self.partition.regions()
        s = self.partition.s
        price = self.price
        pieces = []
        if regions['A'] is not None:
            pieces.append((regions['A'], lambda z1, z2: z2 - s(z1)))
        if regions['B'] is not None:
            pieces.append((regions['B'], lambda z1, z2: z1 - s.inverse(z2)))
        pieces.append((regions['W'], lambda z1, z2: z1 + z2 - price))
        return pieces

    @property
    def has_lotteries(self):
        return self.partition.has_lotteries

    def to_dict(self):
        return {'kind': self.kind, 'bundle_price': float(self.price), 'partition': self.partition.to_dict()}


def utility(m, z):
    """(u, chosen option) for a single type."""
    if isinstance(m, MenuMechanism):
        chosen = m.choose(z)
        return chosen.value(z[0], z[1]), chosen
    chosen = m.outcome(z)
    return chosen.value(z[0], z[1]), chosen


# Samplers: callables (rng, count) -> (types, deviations)

def instance_sampler(instance):
    def sampler(rng, count):
        return instance.sample(rng, count), instance.sample(rng, count)
    return sampler


def box_sampler(lower, upper):
    lower, upper = np.asarray(lower, dtype=float), np.asarray(upper, dtype=float)

    def sampler(rng, count):
        return (lower + (upper - lower) * rng.random((count, 2)),
                lower + (upper - lower) * rng.random((count, 2)))
    return sampler


def partition_sampler(partition, upper):
    """Pairs drawn region by region (Z, A, B, W in every combination), plus points on s."""
    lower = np.asarray(partition.d_minus, dtype=float)
    upper = np.asarray(upper, dtype=float)

    def sampler(rng, count):
        pool = lower + (upper - lower) * rng.random((8 * count, 2))
        x = rng.uniform(*partition.s.domain, count)
        on_curve = np.column_stack([x, partition.s(x)])
        pool = np.vstack([pool, on_curve])
        labels = partition.classify_array(pool[:, 0], pool[:, 1])
        groups = [pool[labels == name] for name in ('Z', 'A', 'B', 'W')]
        groups = [g for g in groups if len(g)]
        first, second = [], []
        for _ in range(count):
            i, j = rng.integers(len(groups), size=2)
            first.append(groups[i][rng.integers(len(groups[i]))])
            second.append(groups[j][rng.integers(len(groups[j]))])
        return np.array(first), np.array(second)
    return sampler


@dataclass
class AuditReport:
    count: int
    ic_violation: float
    ir_violation: float
    ic_location: tuple | None = None
    ic_tol: float = IC_TOL
    ir_tol: float = IR_TOL

    @property
    def passed(self):
        return self.ic_violation <= self.ic_tol and self.ir_violation <= self.ir_tol

    def to_dict(self):
        return {
            'passed': self.passed,
            'pairs': self.count,
            'ic_violation': float(self.ic_violation),
            'ir_violation': float(self.ir_violation),
            'ic_tol': self.ic_tol,
            'ir_tol': self.ir_tol,
            'ic_location': [list(map(float, p)) for p in self.ic_location] if self.ic_location else None,
        }


def audit_ic_ir(m, sampler, count=DEFAULT_AUDIT_PAIRS, seed=DEFAULT_SEED):
    """Largest gain from misreporting over sampled type pairs, and the largest negative utility."""
    rng = np.random.default_rng(seed)
    z, z_dev = sampler(rng, count)
    q, t = m.outcomes(z)
    q_dev, t_dev = m.outcomes(z_dev)
    u = np.sum(z * q, axis=1) - t
    gain = np.sum(z * q_dev, axis=1) - t_dev - u
    k = int(np.argmax(gain))
    report = AuditReport(count=len(z), ic_violation=float(max(gain[k], 0.0)), ir_violation=float(max(-u.min(), 0.0)),
                         ic_location=(tuple(z[k]), tuple(z_dev[k])))
    if not report.passed:
        logging.warning(f"IC/IR audit failed: IC {report.ic_violation:.3e}, IR {report.ir_violation:.3e}")
    return report


@dataclass
class ShapeReport:
    checks: dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(check.passed for check in self.checks.values())

    def to_dict(self):
        return {'passed': self.passed, 'checks': {name: c.to_dict() for name, c in self.checks.items()}}


def audit_shape(m, sampler, count=DEFAULT_AUDIT_PAIRS, seed=DEFAULT_SEED):
    """Midpoint convexity, monotonicity on ordered pairs and the [0, 1] gradient bound of u."""
    rng = np.random.default_rng(seed)
    x, y = sampler(rng, count)
    report = ShapeReport()

    excess = m.utilities(0.5 * (x + y)) - 0.5 * (m.utilities(x) + m.utilities(y))
    k = int(np.argmax(excess))
    report.checks['convexity'] = CheckResult('convexity', excess[k] <= CONVEXITY_TOL, float(max(excess[k], 0.0)),
                                             CONVEXITY_TOL, location=tuple(x[k]))

    low, high = np.minimum(x, y), np.maximum(x, y)
    drop = m.utilities(low) - m.utilities(high)
    k = int(np.argmax(drop))
    report.checks['monotonicity'] = CheckResult('monotonicity', drop[k] <= IR_TOL, float(max(drop[k], 0.0)),
                                                IR_TOL, location=tuple(low[k]))

    u = m.utilities(x)
    worst, location = 0.0, None
    for axis in (0, 1):
        step = np.zeros(2)
        step[axis] = FD_STEP
        gradient = (m.utilities(x + step) - u) / FD_STEP
        excursion = np.maximum(-gradient, gradient - 1.0)
        j = int(np.argmax(excursion))
        if excursion[j] > worst:
            worst, location = float(excursion[j]), tuple(x[j])
    report.checks['gradient'] = CheckResult('gradient', worst <= GRADIENT_TOL, worst, GRADIENT_TOL,
                                            location=location)
    return report


def check_region_consistency(m, points):
    """Largest gain of any probe's outcome over the outcome assigned at each probe."""
    points = np.asarray(points, dtype=float)
    q, t = m.outcomes(points)
    own = np.sum(points * q, axis=1) - t
    best = (points @ q.T - t).max(axis=1)
    return float(max(np.max(best - own), 0.0))


# Revenue

@dataclass(frozen=True, eq=False)
class WeightedUtility:
    utility: object
    field: object

    def __call__(self, z1, z2):
        return self.utility(z1, z2) * self.field.phi_at(z1, z2)


def revenue_of_utility(u, field, tol=DEFAULT_TOLERANCE, region=None):
    """Integral of u * phi; the atom at d_minus adds u(d_minus), which is zero for IR utilities."""
    region = region if region is not None else whole_domain(field.instance)
    return integrate_2d(WeightedUtility(u, field), region, tol)


def revenue_quadrature(m, field, tol=DEFAULT_TOLERANCE):
    """Expected revenue as the integral of the induced utility against the transform."""
    total = 0.0
    for region, u in m.quadrature_pieces(field.instance):
        if region is not None and not region.is_empty():
            total += integrate_2d(WeightedUtility(u, field), region, tol)
    return total


def revenue_monte_carlo(m, instance, samples=DEFAULT_MC_SAMPLES, seed=DEFAULT_SEED,
                        shard_size=DEFAULT_MC_SHARD_SIZE, progress=False):
    """Mean payment over sampled types with a 95% confidence half-width.

    Shards draw from independent spawned seeds and are merged by the pairwise
    mean/variance update, so the result depends only on (samples, seed, shard_size).
    """
    if samples < 1:
        raise InvalidParameter(f"samples must be at least 1, got {samples}")
    shards = math.ceil(samples / shard_size)
    children = np.random.SeedSequence(seed).spawn(shards)
    count, mean, m2 = 0, 0.0, 0.0
    for k, child in enumerate(tqdm(children, desc='Monte Carlo revenue', mininterval=0.5, dynamic_ncols=True,
                                   leave=False, disable=not progress)):
        size = min(shard_size, samples - k * shard_size)
        rng = np.random.default_rng(child)
        _, payments = m.outcomes(instance.sample(rng, size))
        shard_mean = float(payments.mean())
        shard_m2 = float(((payments - shard_mean) ** 2).sum())
        delta = shard_mean - mean
        total = count + size
        mean += delta * size / total
        m2 += shard_m2 + delta ** 2 * count * size / total
        count = total
    variance = m2 / (count - 1) if count > 1 else 0.0
    return mean, 1.96 * math.sqrt(variance / count)


def bundle_revenue(instance, p, tol=DEFAULT_TOLERANCE):
    """p * Pr[z1 + z2 >= p] for the take-it-or-leave-it grand bundle."""
    d1, d2 = instance.items
    (lo1, lo2), (hi1, _) = instance.d_minus, instance.d_plus
    end = min(p - lo2, hi1)
    if end <= lo1:
        return float(p)
    below = integrate_1d(lambda x: d1.pdf(x) * d2.cdf(p - x), lo1, end, tol)
    return float(p * max(0.0, 1.0 - below))


def separate_revenue(instance, prices):
    return float(sum(p * item.sf(p) for p, item in zip(prices, instance.items)))


def _price_grid(item, count):
    return np.linspace(item.lower, item.quantile_upper(0.999), count + 1)[1:]


def best_separate_pricing(instance, grid=DEFAULT_SEPARATE_PRICE_GRID):
    """Best pair of per-item posted prices on a grid x grid search."""
    grids = [_price_grid(item, grid) for item in instance.items]
    revenues = [np.asarray(g * item.sf(g), dtype=float) for g, item in zip(grids, instance.items)]
    total = revenues[0][:, None] + revenues[1][None, :]
    i, j = np.unravel_index(int(np.argmax(total)), total.shape)
    return float(total[i, j]), (float(grids[0][i]), float(grids[1][j]))


def best_bundle_pricing(instance, grid=DEFAULT_BUNDLE_PRICE_GRID, tol=DEFAULT_TOLERANCE):
    """Best grand-bundle price on an evenly spaced grid."""
    lo = sum(instance.d_minus)
    hi = sum(item.quantile_upper(0.999) for item in instance.items)
    prices = np.linspace(lo, hi, grid + 1)[1:]
    revenues = [bundle_revenue(instance, p, tol) for p in prices]
    k = int(np.argmax(revenues))
    return float(revenues[k]), float(prices[k])
