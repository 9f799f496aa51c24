"""General two-item pipeline: boundary curves, critical price, canonical partition and its mechanism."""
import logging
import math
import multiprocessing
from dataclasses import dataclass, field

import numpy as np
from tqdm import tqdm

from config import DEFAULT_CURVE_SAMPLES, DEFAULT_CURVE_TOL, DEFAULT_MASS_TOL, DEFAULT_NUM_WORKERS, \
    DEFAULT_PROBE_COUNT, DEFAULT_REFINE_STEPS
from dominance import check_region_dominance, problem_from_field
from errors import CurveNotFound, NonConcaveAssembly, NoSignChange, NoSolution, SlopeOutOfRange
from measures import Measure, mass
from mechanism import PartitionMechanism
from numerics import DEFAULT_TOLERANCE, BoundaryCurve, CheckResult, CurveBound, LinearBound, MaxBound, Region, \
    find_root, integrate_1d, maximize_on_interval

JUNCTION_TOL = 1e-6
LINE_TOL = 1e-6
SLOPE_TOL = 1e-9
BRACKET_DOUBLINGS = 60
EDGE_GAP = 1e-12
EDGE_SLACK = 1e-9
REFINE_STEP = 1e-5
REFINE_WINDOW = 5e-3


def _chebyshev(lo, hi, count):
    k = np.arange(count)
    return lo + (hi - lo) * 0.5 * (1.0 - np.cos(np.pi * k / (count - 1)))


def _upper_bracket(item, increasing, target):
    """Point where an increasing function of the item's value exceeds target."""
    if math.isfinite(item.upper):
        return item.upper - EDGE_GAP
    hi = item.lower + 1.0
    for _ in range(BRACKET_DOUBLINGS):
        if increasing(hi) > target:
            return hi
        hi = item.lower + 2.0 * (hi - item.lower)
    raise CurveNotFound(f"No bracket for level {target} on the {item.family} support")


def _solve_increasing(item, fn, target, tol):
    """Value z with fn(z) = target for fn increasing on the item's support."""
    lo = item.lower
    if fn(lo) >= target:
        return lo
    hi = _upper_bracket(item, fn, target)
    try:
        return find_root(lambda z: fn(z) - target, lo, hi, tol.scaled(1e-3))
    except NoSignChange as e:
        raise CurveNotFound(str(e)) from e


def top_point(field, z1, tol=DEFAULT_TOLERANCE):
    """z2 on S_top above z1: the upward integral of phi from z2 vanishes, i.e. g1(z1) + h2(z2) = 2."""
    d1, d2 = field.items
    return _solve_increasing(d2, d2.hazard_ratio, 2.0 - d1.elasticity(z1), tol)


def right_point(field, z1, tol=DEFAULT_TOLERANCE):
    """z2 on S_right at z1: the rightward integral of phi vanishes, i.e. h1(z1) + g2(z2) = 2."""
    d1, d2 = field.items
    return _solve_increasing(d2, d2.elasticity, 2.0 - d1.hazard_ratio(z1), tol)


def _curve_task(task):
    kind, field, z1, tol = task
    try:
        return (top_point if kind == 'top' else right_point)(field, z1, tol)
    except CurveNotFound:
        return None


def _sample_curve(field, kind, z1_values, tol, workers, progress):
    tasks = [(kind, field, float(z1), tol) for z1 in z1_values]
    desc = f"Sampling S_{kind}"
    if workers > 1:
        with multiprocessing.Pool(workers) as pool:
            values = list(tqdm(pool.imap(_curve_task, tasks), total=len(tasks), desc=desc, mininterval=0.5,
                               dynamic_ncols=True, leave=False, disable=not progress))
    else:
        values = [_curve_task(task) for task in tqdm(tasks, desc=desc, mininterval=0.5, dynamic_ncols=True,
                                                      leave=False, disable=not progress)]
    points = [(z1, z2) for z1, z2 in zip(z1_values, values) if z2 is not None]
    dropped = len(values) - len(points)
    if dropped:
        logging.info(f"S_{kind}: {dropped} grid lines without a crossing were dropped")
    if len(points) < 2:
        raise CurveNotFound(f"S_{kind} has fewer than two points")
    z1, z2 = np.array(points).T
    return z1, z2


def curve_end(field, kind, tol=DEFAULT_TOLERANCE):
    """Right end of S_top / S_right: the abscissa where the curve reaches z2 = d2-."""
    d1, d2 = field.items
    if kind == 'top':
        fn, target = d1.elasticity, 2.0 - d2.hazard_ratio(d2.lower)
    else:
        fn, target = d1.hazard_ratio, 2.0 - d2.elasticity(d2.lower)
    return _solve_increasing(d1, fn, target, tol)


def compute_boundary_curves(field, tol=DEFAULT_TOLERANCE, samples=DEFAULT_CURVE_SAMPLES,
                            workers=DEFAULT_NUM_WORKERS, progress=False):
    """S_top and S_right sampled on Chebyshev grids over their z1 domains."""
    lo = field.instance.d_minus[0]
    curves = []
    for kind in ('top', 'right'):
        end = curve_end(field, kind, tol)
        z1, z2 = _sample_curve(field, kind, _chebyshev(lo, end, samples), tol, workers, progress)
        z2[-1] = field.instance.d_minus[1] if abs(z1[-1] - end) <= EDGE_GAP else z2[-1]
        curves.append(BoundaryCurve(z1, z2, name=f"S_{kind}"))
    s_top, s_right = curves
    logging.info(f"S_top on [{s_top.domain[0]:.5f}, {s_top.domain[1]:.5f}], "
                 f"S_right on [{s_right.domain[0]:.5f}, {s_right.domain[1]:.5f}]")
    return s_top, s_right


@dataclass(frozen=True)
class CompositeBound:
    """S_top up to a, the 45-degree line z1 + z2 = p up to b, S_right up to c."""
    s_top: BoundaryCurve
    s_right: BoundaryCurve
    a: float
    b: float
    c: float
    p: float
    floor: float

    def __call__(self, x):
        if x <= self.a and self.a > self.s_top.domain[0]:
            return self.s_top(min(x, self.s_top.domain[1]))
        if x <= self.b:
            return self.p - x
        if x <= self.c:
            return self.s_right(min(max(x, self.s_right.domain[0]), self.s_right.domain[1]))
        return self.floor


@dataclass(frozen=True)
class Branches:
    """Peaks of z1 + S(z1) on both curves; left of the S_top peak and right of the S_right peak are used."""
    top_peak: float
    top_peak_value: float
    right_peak: float
    right_peak_value: float

    @property
    def max_price(self):
        return min(self.top_peak_value, self.right_peak_value)


def find_branches(s_top, s_right, tol=DEFAULT_TOLERANCE, probes=DEFAULT_PROBE_COUNT):
    t, tv = maximize_on_interval(lambda x: x + s_top(x), *s_top.domain, probes=probes, tol=tol)
    r, rv = maximize_on_interval(lambda x: x + s_right(x), *s_right.domain, probes=probes, tol=tol)
    return Branches(t, tv, r, rv)


def segment_ends(field, s_top, s_right, p, branches, tol=DEFAULT_TOLERANCE):
    """(a, b, c) where the 45-degree line at price p leaves S_top and meets S_right."""
    lo1, lo2 = field.instance.d_minus
    top_lo = s_top.domain[0]
    if p <= top_lo + s_top(top_lo) + EDGE_SLACK:
        a = lo1
    elif p <= branches.top_peak_value:
        a = find_root(lambda x: x + s_top(x) - p, top_lo, branches.top_peak, tol)
    else:
        raise NoSolution(f"Price {p} is above the S_top branch peak {branches.top_peak_value}")

    r_end = s_right.domain[1]
    if p <= r_end + s_right(r_end) + EDGE_SLACK:
        b = c = p - lo2
    elif p <= branches.right_peak_value:
        b = find_root(lambda x: x + s_right(x) - p, branches.right_peak, r_end, tol)
        c = r_end
    else:
        raise NoSolution(f"Price {p} is above the S_right branch peak {branches.right_peak_value}")
    return a, b, c


def zero_set_mass(field, s_top, s_right, p, branches, tol=DEFAULT_TOLERANCE):
    """nu-mass of the composite zero set at price p."""
    lo1, lo2 = field.instance.d_minus
    a, b, c = segment_ends(field, s_top, s_right, p, branches, tol)
    if not c > lo1:
        return 0.0
    bound = CompositeBound(s_top, s_right, a, b, c, p, lo2)
    region = Region((lo1, c), lo2, bound, outer_points=tuple(x for x in (a, b) if lo1 < x < c))
    return mass(field, Measure.NU, region, tol)


@dataclass(frozen=True, eq=False)
class CanonicalPartition:
    """Decreasing concave curve s on [d1-, c] with 45-degree segment [a, b] and critical price p_star.

    Z lies on or below s, A left of a above s, B below s(b) right of s, W is
    the rest. Boundaries A/W and B/W belong to A and B.
    """
    s: BoundaryCurve
    a: float
    b: float
    c: float
    p_star: float
    d_minus: tuple
    d_plus: tuple
    tails: tuple = (None, None)

    @property
    def s_b(self):
        return float(self.s(self.b))

    @property
    def has_lotteries(self):
        return self.a > self.d_minus[0] + EDGE_GAP or self.b < self.c - EDGE_GAP

    def classify(self, z1, z2):
        if z1 <= self.c and z2 <= self.s(z1):
            return 'Z'
        if z1 <= self.a:
            return 'A'
        if z2 <= self.s_b:
            return 'B'
        return 'W'

    def classify_array(self, z1, z2):
        z1 = np.asarray(z1, dtype=float)
        z2 = np.asarray(z2, dtype=float)
        curve = np.full(z1.shape, -np.inf)
        inside = z1 <= self.c
        if np.any(inside):
            curve[inside] = self.s(np.maximum(z1[inside], self.s.domain[0]))
        return np.where(inside & (z2 <= curve), 'Z',
                        np.where(z1 <= self.a, 'A', np.where(z2 <= self.s_b, 'B', 'W')))

    def regions(self):
        (lo1, lo2), (hi1, hi2) = self.d_minus, self.d_plus
        t1, t2 = self.tails
        regions = {'Z': Region((lo1, self.c), lo2, CurveBound(self.s, fill=lo2), outer_points=self.s.breaks,
                               outer_tail=t1, inner_tail=t2)}
        regions['A'] = None
        if self.a > lo1 + EDGE_GAP:
            regions['A'] = Region((lo1, self.a), CurveBound(self.s, fill=lo2), hi2, outer_tail=t1, inner_tail=t2)
        regions['B'] = None
        if self.s_b > lo2 + EDGE_GAP:
            regions['B'] = Region((lo2, self.s_b), CurveBound(self.s, fill=self.c, inverse=True), hi1,
                                  outer_axis=1, inner_tail=t1)
        regions['W'] = Region((self.a, hi1), MaxBound((self.s_b, LinearBound(self.p_star, -1.0))), hi2,
                              outer_points=(self.b,), outer_tail=t1, inner_tail=t2)
        return regions

    def segment(self):
        """The part of s bounding W from below, or None when a = b."""
        if not self.b > self.a + EDGE_GAP:
            return None
        return BoundaryCurve([self.a, self.b], [self.p_star - self.a, self.p_star - self.b], name='segment')

    def to_dict(self, max_points=200):
        return {
            's': self.s.to_dict(max_points),
            'a': float(self.a),
            'b': float(self.b),
            'c': float(self.c),
            'p_star': float(self.p_star),
            'has_lotteries': self.has_lotteries,
        }


def _snap(point, x0, lo, hi, p, tol):
    """Exact crossing of z1 + point(z1) = p near the interpolated crossing x0."""
    width = 1e-3 * (hi - lo)
    left, right = max(lo, x0 - width), min(hi, x0 + width)
    try:
        return find_root(lambda x: x + point(x) - p, left, right, tol.scaled(1e-3))
    except NoSignChange:
        return x0


def assemble_partition(field, s_top, s_right, p, tol=DEFAULT_TOLERANCE, samples=DEFAULT_CURVE_SAMPLES,
                       branches=None):
    """Build s for price p from exact curve points, snapping both junctions onto the 45-degree line."""
    instance = field.instance
    lo1, lo2 = instance.d_minus
    branches = branches or find_branches(s_top, s_right, tol)
    a, b, c = segment_ends(field, s_top, s_right, p, branches, tol)
    xs, ys = [], []

    if a > lo1 + EDGE_GAP:
        a = _snap(lambda x: top_point(field, x, tol), a, lo1, branches.top_peak, p, tol)
        mismatch = abs(top_point(field, a, tol) - (p - a))
        if mismatch > JUNCTION_TOL:
            raise NonConcaveAssembly(f"S_top misses the 45-degree line at a={a:.6f} by {mismatch:.2e}")
        x = _chebyshev(lo1, a, max(samples // 2, 3))
        xs.extend(x[:-1])
        ys.extend(top_point(field, v, tol) for v in x[:-1])
    xs.append(a)
    ys.append(p - a)

    if c > b + EDGE_GAP:
        b = _snap(lambda x: right_point(field, x, tol), b, branches.right_peak, c, p, tol)
        mismatch = abs(right_point(field, b, tol) - (p - b))
        if mismatch > JUNCTION_TOL:
            raise NonConcaveAssembly(f"S_right misses the 45-degree line at b={b:.6f} by {mismatch:.2e}")
    if b > a + EDGE_GAP:
        xs.append(b)
        ys.append(p - b)
    if c > b + EDGE_GAP:
        x = _chebyshev(b, c, max(samples // 2, 3))[1:]
        xs.extend(x)
        ys.extend([right_point(field, v, tol) for v in x[:-1]] + [lo2])

    breaks = tuple(v for v in (a, b) if lo1 + EDGE_GAP < v < c - EDGE_GAP)
    s = BoundaryCurve(xs, ys, breaks=breaks, concave=True, name='s')
    return CanonicalPartition(s, float(a), float(b), float(c), float(p), instance.d_minus, instance.d_plus,
                              instance.tails)


def _check_transversal(s_top, s_right, a, b, c, lo1):
    if a > lo1 + EDGE_GAP and abs(s_top.slope(a) + 1.0) < SLOPE_TOL:
        raise NoSolution(f"The 45-degree line touches S_top tangentially at a={a:.6f}")
    if c > b + EDGE_GAP and abs(s_right.slope(b) + 1.0) < SLOPE_TOL:
        raise NoSolution(f"The 45-degree line touches S_right tangentially at b={b:.6f}")


def refine_critical_price(field, s_top, s_right, p0, branches, tol=DEFAULT_TOLERANCE,
                          samples=DEFAULT_CURVE_SAMPLES, steps=DEFAULT_REFINE_STEPS):
    """Secant steps on nu(Z) of the assembled partition, whose junctions sit on exact curve points.

    Returns (p, partition); falls back to the best price seen when assembly fails
    away from p0.
    """
    atom = field.point_mass_at_dminus

    def excess(p):
        partition = assemble_partition(field, s_top, s_right, p, tol, samples, branches)
        return mass(field, Measure.NU, partition.regions()['Z'], tol) - atom, partition

    m0, best = excess(p0)
    best_p, best_m = p0, m0
    p_prev, m_prev = p0, m0
    p_cur = min(p0 + REFINE_STEP, branches.max_price) if m0 < 0 else p0 - REFINE_STEP
    for _ in range(steps):
        if abs(best_m) <= tol.target(atom):
            break
        try:
            m_cur, partition = excess(p_cur)
        except (NoSolution, NonConcaveAssembly) as e:
            logging.debug(f"Refinement stopped at p={p_cur:.9f}: {e}")
            break
        if abs(m_cur) < abs(best_m):
            best_p, best_m, best = p_cur, m_cur, partition
        if m_cur == m_prev:
            break
        p_next = p_cur - m_cur * (p_cur - p_prev) / (m_cur - m_prev)
        p_next = min(max(p_next, p0 - REFINE_WINDOW), min(p0 + REFINE_WINDOW, branches.max_price))
        if abs(p_next - p_cur) <= tol.abs_tol:
            break
        p_prev, m_prev, p_cur = p_cur, m_cur, p_next
    if best_p != p0:
        logging.info(f"Refined p* by {best_p - p0:+.3e}; nu(Z) residual {abs(m0):.2e} -> {abs(best_m):.2e}")
    return best_p, best


def find_critical_price(field, s_top, s_right, tol=DEFAULT_TOLERANCE, samples=DEFAULT_CURVE_SAMPLES):
    """p* with nu(Z) = 1 for the composite zero set; returns (p_star, s, a, b, c)."""
    lo1, lo2 = field.instance.d_minus
    branches = find_branches(s_top, s_right, tol)
    atom = field.point_mass_at_dminus
    lo, hi = lo1 + lo2, branches.max_price
    if zero_set_mass(field, s_top, s_right, hi, branches, tol) < atom:
        raise NoSolution(f"nu(Z) stays below {atom} up to the branch peak price {hi:.6f}")
    p_star = find_root(lambda p: zero_set_mass(field, s_top, s_right, p, branches, tol) - atom,
                       lo + EDGE_GAP, hi, tol)
    a, b, c = segment_ends(field, s_top, s_right, p_star, branches, tol)
    _check_transversal(s_top, s_right, a, b, c, lo1)

    p_star, partition = refine_critical_price(field, s_top, s_right, p_star, branches, tol, samples)
    a, b, c = partition.a, partition.b, partition.c
    violation = partition.s.concavity_violation()
    if violation > DEFAULT_CURVE_TOL:
        raise NonConcaveAssembly(f"Assembled s violates concavity by {violation:.2e}")
    logging.info(f"Critical price p*={p_star:.6f} with a={a:.5f}, b={b:.5f}, c={c:.5f}")
    return p_star, partition.s, partition.a, partition.b, partition.c


@dataclass
class WellFormednessReport:
    checks: dict = field(default_factory=dict)
    dominance: object = None

    @property
    def passed(self):
        return all(check.passed for check in self.checks.values()) and (
            self.dominance is None or self.dominance.passed)

    def to_dict(self):
        return {
            'passed': self.passed,
            'checks': {name: check.to_dict() for name, check in self.checks.items()},
            'dominance': self.dominance.to_dict() if self.dominance is not None else None,
        }


def _zero_set_probes(partition, count):
    lo1, lo2 = partition.d_minus
    x = np.linspace(lo1, partition.c, count)
    on_curve = np.column_stack([x, partition.s(x)])
    grid = []
    for fraction in np.linspace(0.0, 1.0, 12)[1:]:
        grid.append(np.column_stack([x, lo2 + fraction * (on_curve[:, 1] - lo2)]))
    probes = np.vstack([on_curve] + grid)
    keep = ~((probes[:, 0] == lo1) & (probes[:, 1] == lo2))
    hi1, hi2 = partition.d_plus
    keep &= (probes[:, 0] < hi1) & (probes[:, 1] < hi2)
    return probes[keep]


def _line_residuals(values, integral):
    worst, location = 0.0, None
    for v in values:
        r = abs(integral(v))
        if r > worst:
            worst, location = r, (float(v),)
    return worst, location


def verify_well_formed(field, partition, tol=DEFAULT_TOLERANCE, probe_count=DEFAULT_PROBE_COUNT,
                       progress=False):
    """The five conditions under which the partition's mechanism is optimal."""
    instance = field.instance
    d1, d2 = instance.items
    (lo1, lo2), (hi1, hi2) = instance.d_minus, instance.d_plus
    report = WellFormednessReport()

    probes = _zero_set_probes(partition, probe_count)
    margin = 3.0 - np.asarray(field.score(probes[:, 0], probes[:, 1]))
    k = int(np.nanargmin(margin))
    report.checks['zero_set_in_y'] = CheckResult('zero_set_in_y', bool(margin[k] >= -1e-12), float(margin[k]),
                                                 0.0, location=tuple(probes[k]))

    nu_z = mass(field, Measure.NU, partition.regions()['Z'], tol)
    residual = abs(nu_z - field.point_mass_at_dminus)
    report.checks['zero_set_mass'] = CheckResult('zero_set_mass', residual <= DEFAULT_MASS_TOL, residual,
                                                 DEFAULT_MASS_TOL, detail=f"nu(Z)={nu_z:.10f}")

    s = partition.s
    if partition.a > lo1 + EDGE_GAP:
        def vertical(z1):
            return integrate_1d(lambda t: d2.pdf(t) * field.eta(z1, t), s(z1), hi2, tol, tail=d2.tail)
        worst, location = _line_residuals(np.linspace(lo1, partition.a, probe_count), vertical)
        report.checks['vertical_lines'] = CheckResult('vertical_lines', worst <= LINE_TOL, worst, LINE_TOL,
                                                      location=location)
    else:
        report.checks['vertical_lines'] = CheckResult('vertical_lines', True, 0.0, LINE_TOL, detail='A is empty')

    if partition.s_b > lo2 + EDGE_GAP:
        def horizontal(z2):
            return integrate_1d(lambda t: d1.pdf(t) * field.eta(t, z2), s.inverse(z2), hi1, tol, tail=d1.tail)
        worst, location = _line_residuals(np.linspace(lo2, partition.s_b, probe_count)[:-1], horizontal)
        report.checks['horizontal_lines'] = CheckResult('horizontal_lines', worst <= LINE_TOL, worst, LINE_TOL,
                                                        location=location)
    else:
        report.checks['horizontal_lines'] = CheckResult('horizontal_lines', True, 0.0, LINE_TOL,
                                                        detail='B is empty')

    problem = problem_from_field(field, (partition.a, partition.s_b), partition.segment())
    report.dominance = check_region_dominance(problem, tol, probe_count, progress=progress)
    report.checks['dominance'] = CheckResult('dominance', report.dominance.passed, 0.0, DEFAULT_CURVE_TOL,
                                             detail='see dominance report')
    if not report.passed:
        failed = [name for name, check in report.checks.items() if not check.passed]
        logging.warning(f"Partition is not well-formed: {', '.join(failed)}")
    return report


def synthesize_mechanism(partition, probes=DEFAULT_PROBE_COUNT):
    """Region-based mechanism of a well-formed partition; slopes must give probabilities in [0, 1]."""
    lo1 = partition.d_minus[0]
    s = partition.s
    if partition.a > lo1 + EDGE_GAP:
        slopes = s.slope(np.linspace(lo1, partition.a, probes), side='left')
        if np.any(slopes > SLOPE_TOL) or np.any(slopes < -1.0 - JUNCTION_TOL):
            raise SlopeOutOfRange(f"-s' leaves [0, 1] on [d1-, a]: slopes in [{slopes.min():.6f}, {slopes.max():.6f}]")
    if partition.c > partition.b + EDGE_GAP:
        slopes = s.slope(np.linspace(partition.b, partition.c, probes), side='right')
        if np.any(slopes > -1.0 + JUNCTION_TOL):
            raise SlopeOutOfRange(f"-1/s' leaves [0, 1] on [b, c]: largest slope {slopes.max():.6f}")
    return PartitionMechanism(partition)


@dataclass
class CanonicalSolution:
    partition: CanonicalPartition
    s_top: BoundaryCurve
    s_right: BoundaryCurve
    report: WellFormednessReport
    mechanism: PartitionMechanism | None

    def to_dict(self):
        return {
            'partition': self.partition.to_dict(),
            'well_formed': self.report.to_dict(),
            's_top': self.s_top.to_dict(),
            's_right': self.s_right.to_dict(),
        }


def solve_canonical(field, tol=DEFAULT_TOLERANCE, samples=DEFAULT_CURVE_SAMPLES, probe_count=DEFAULT_PROBE_COUNT,
                    workers=DEFAULT_NUM_WORKERS, progress=False):
    """Curves, critical price, assembly and well-formedness; the mechanism only when well-formed."""
    s_top, s_right = compute_boundary_curves(field, tol, samples, workers, progress)
    p_star, s, a, b, c = find_critical_price(field, s_top, s_right, tol, samples)
    instance = field.instance
    partition = CanonicalPartition(s, a, b, c, p_star, instance.d_minus, instance.d_plus, instance.tails)
    report = verify_well_formed(field, partition, tol, probe_count, progress)
    mechanism = synthesize_mechanism(partition) if report.passed else None
    return CanonicalSolution(partition, s_top, s_right, report, mechanism)
