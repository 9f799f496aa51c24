"""Quadrature, root-finding and monotone curves shared by every solver module."""
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad
from scipy.interpolate import PchipInterpolator
from scipy.optimize import brentq, minimize_scalar

from config import DEFAULT_ABS_TOL, DEFAULT_REL_TOL, DEFAULT_MAX_DEPTH, QUAD_LIMIT_PER_DEPTH
from errors import (CurveDomainMismatch, InvalidInterval, InvalidParameter, MalformedCurve,
                    NoSignChange, NonConvergence)

DOMAIN_SLACK = 1e-12


@dataclass(frozen=True)
class Tolerance:
    """Error targets for quadrature and root-finding."""
    abs_tol: float = DEFAULT_ABS_TOL
    rel_tol: float = DEFAULT_REL_TOL
    max_depth: int = DEFAULT_MAX_DEPTH

    def __post_init__(self):
        if not self.abs_tol > 0 or not self.rel_tol > 0:
            raise InvalidParameter(f"Tolerances must be positive, got abs={self.abs_tol}, rel={self.rel_tol}")
        if self.max_depth < 1:
            raise InvalidParameter(f"max_depth must be at least 1, got {self.max_depth}")

    def scaled(self, factor):
        return Tolerance(self.abs_tol * factor, self.rel_tol, self.max_depth)

    def target(self, value):
        return self.abs_tol + self.rel_tol * abs(value)

    def to_dict(self):
        return {'abs_tol': self.abs_tol, 'rel_tol': self.rel_tol, 'max_depth': self.max_depth}


DEFAULT_TOLERANCE = Tolerance()


@dataclass(frozen=True)
class TailBound:
    """Decay family of a density near its upper support end.

    kind is 'exponential' (rate = decay rate), 'polynomial' (rate = power c of
    (1+z)^-c) or 'compact'.
    """
    kind: str
    rate: float = 0.0

    def truncation_point(self, start, eps):
        """Point past which the tail of z^2 * density is below eps, or None."""
        if self.kind == 'exponential':
            length = math.log(1.0 / eps) / self.rate
            for _ in range(4):
                length = (math.log(1.0 / eps) + 2.0 * math.log1p(self.rate * (start + length))) / self.rate
            return start + length
        return None


@dataclass(frozen=True)
class CheckResult:
    """Outcome of one named numerical check."""
    name: str
    passed: bool
    residual: float
    tolerance: float
    location: tuple | None = None
    detail: str = ''

    def to_dict(self):
        result = {'passed': bool(self.passed), 'residual': float(self.residual), 'tol': float(self.tolerance)}
        if self.location is not None:
            result['location'] = [float(v) for v in self.location]
        if self.detail:
            result['detail'] = self.detail
        return result


def _geometric_points(a, b):
    points = []
    step = 0.1
    while a + step < b:
        points.append(a + step)
        step *= 10.0
    return points


def _quad(f, a, b, tol, points):
    limit = tol.max_depth * QUAD_LIMIT_PER_DEPTH
    kwargs = {'epsabs': tol.abs_tol, 'epsrel': tol.rel_tol, 'limit': limit, 'full_output': 1}
    if points and not math.isinf(b):
        kwargs['points'] = points
    result = quad(f, a, b, **kwargs)
    value, error, info = result[0], result[1], result[2]
    if len(result) > 3:
        if info.get('last', 0) >= limit and error > 10.0 * tol.target(value):
            raise NonConvergence(
                f"Quadrature on [{a}, {b}] hit the subdivision cap with error {error:.3e}")
        logging.debug(f"quad on [{a}, {b}]: {result[3]} (error {error:.3e})")
    return value


def integrate_1d(f, a, b, tol=DEFAULT_TOLERANCE, tail=None, points=()):
    """Integrate f over [a, b); b may be +inf.

    With an exponential tail bound the infinite range is truncated where the
    bound drops below abs_tol/10; other tails use the library's own mapping
    of the half line.
    """
    if not a < b:
        raise InvalidInterval(f"Empty integration interval [{a}, {b}]")
    breaks = sorted(p for p in points if a < p < b)
    if math.isinf(b):
        truncation = tail.truncation_point(a, tol.abs_tol / 10.0) if tail is not None else None
        if truncation is None:
            if not breaks:
                return _quad(f, a, math.inf, tol, ())
            head = _quad(f, a, breaks[-1], tol, breaks[:-1])
            return head + _quad(f, breaks[-1], math.inf, tol, ())
        if truncation <= a:
            return 0.0
        b = truncation
        breaks = sorted(set(p for p in breaks if p < b) | set(_geometric_points(a, b)))
    return _quad(f, a, b, tol, breaks)


# Region bounds. Plain floats, curves and these small records are all
# picklable so regions can cross process boundaries.

@dataclass(frozen=True)
class LinearBound:
    """z_inner = intercept + slope * z_outer."""
    intercept: float
    slope: float

    def __call__(self, x):
        return self.intercept + self.slope * x


@dataclass(frozen=True, eq=False)
class CurveBound:
    """Curve value inside its domain, fill value outside."""
    curve: object
    fill: float
    inverse: bool = False

    def __call__(self, x):
        lo, hi = self.curve.range if self.inverse else self.curve.domain
        if x < lo - DOMAIN_SLACK or x > hi + DOMAIN_SLACK:
            return self.fill
        x = min(max(x, lo), hi)
        return self.curve.inverse(x) if self.inverse else self.curve(x)


@dataclass(frozen=True)
class MaxBound:
    bounds: tuple

    def __call__(self, x):
        return max(evaluate_bound(b, x) for b in self.bounds)


@dataclass(frozen=True)
class MinBound:
    bounds: tuple

    def __call__(self, x):
        return min(evaluate_bound(b, x) for b in self.bounds)


def evaluate_bound(bound, x):
    if callable(bound):
        return float(bound(x))
    return float(bound)


@dataclass(frozen=True, eq=False)
class Region:
    """Iterated-integration region.

    The outer variable runs over `outer`; the inner one between `lower` and
    `upper`, each a constant or a callable of the outer coordinate. With
    outer_axis=1 the outer variable is z2.
    """
    outer: tuple
    lower: object
    upper: object
    outer_axis: int = 0
    outer_points: tuple = ()
    inner_points: object = None
    outer_tail: TailBound | None = None
    inner_tail: TailBound | None = None

    def __post_init__(self):
        lo, hi = self.outer
        for bound in (self.lower, self.upper):
            if not isinstance(bound, BoundaryCurve):
                continue
            c_lo, c_hi = bound.domain
            if lo < c_lo - DOMAIN_SLACK or hi > c_hi + DOMAIN_SLACK:
                raise CurveDomainMismatch(
                    f"Curve defined on [{c_lo}, {c_hi}] cannot bound a region over [{lo}, {hi}]")

    @classmethod
    def box(cls, z1_lo, z1_hi, z2_lo, z2_hi, tails=(None, None)):
        return cls((z1_lo, z1_hi), z2_lo, z2_hi, outer_tail=tails[0], inner_tail=tails[1])

    def is_empty(self):
        return not self.outer[0] < self.outer[1]

    def inner_bounds(self, x):
        return evaluate_bound(self.lower, x), evaluate_bound(self.upper, x)

    def contains(self, z1, z2):
        x, y = (z2, z1) if self.outer_axis == 1 else (z1, z2)
        if not self.outer[0] <= x <= self.outer[1]:
            return False
        lo, hi = self.inner_bounds(x)
        return lo <= y <= hi


def integrate_2d(f, region, tol=DEFAULT_TOLERANCE):
    """Iterated integral of f(z1, z2) over a Region (outer, then inner)."""
    if region.is_empty():
        raise InvalidInterval(f"Degenerate region with outer range {region.outer}")
    inner_tol = tol.scaled(0.1)
    swap = region.outer_axis == 1

    def outer_integrand(x):
        lo, hi = region.inner_bounds(x)
        if not lo < hi:
            return 0.0
        if swap:
            g = lambda y: f(y, x)
        else:
            g = lambda y: f(x, y)
        points = region.inner_points(x) if region.inner_points is not None else ()
        return integrate_1d(g, lo, hi, inner_tol, tail=region.inner_tail, points=points)

    lo, hi = region.outer
    return integrate_1d(outer_integrand, lo, hi, tol, tail=region.outer_tail, points=region.outer_points)


def find_root(g, lo, hi, tol=DEFAULT_TOLERANCE):
    """Bracketed root of g on [lo, hi] (Brent's method)."""
    g_lo, g_hi = g(lo), g(hi)
    if g_lo == 0:
        return lo
    if g_hi == 0:
        return hi
    if g_lo * g_hi > 0:
        raise NoSignChange(f"No sign change on [{lo}, {hi}]: g(lo)={g_lo:.6g}, g(hi)={g_hi:.6g}")
    rtol = max(tol.rel_tol, 4.0 * np.finfo(float).eps)
    try:
        return brentq(g, lo, hi, xtol=tol.abs_tol, rtol=rtol, maxiter=max(100, 4 * tol.max_depth))
    except RuntimeError as e:
        raise NonConvergence(f"Root-finding on [{lo}, {hi}] did not converge: {e}") from e


def maximize_on_interval(f, lo, hi, probes=200, tol=DEFAULT_TOLERANCE):
    """Maximum of f on [lo, hi]: probe grid, then bounded refinement around the best probe."""
    grid = np.linspace(lo, hi, probes)
    values = np.array([f(x) for x in grid])
    k = int(np.argmax(values))
    best_x, best_value = float(grid[k]), float(values[k])
    left, right = grid[max(k - 1, 0)], grid[min(k + 1, probes - 1)]
    if right > left:
        result = minimize_scalar(lambda x: -f(x), bounds=(left, right), method='bounded',
                                 options={'xatol': max(tol.abs_tol, 1e-12)})
        if -result.fun > best_value:
            best_x, best_value = float(result.x), float(-result.fun)
    return best_x, best_value


class BoundaryCurve:
    """Decreasing curve z2 = s(z1) interpolated through samples.

    Each stretch between breakpoints is a monotone piecewise cubic, so the
    slope can jump at a breakpoint; `side` picks the one-sided value there.
    """

    def __init__(self, z1, z2, breaks=(), concave=False, name='s'):
        z1 = np.asarray(z1, dtype=float)
        z2 = np.asarray(z2, dtype=float)
        if z1.ndim != 1 or z1.shape != z2.shape or len(z1) < 2:
            raise MalformedCurve(f"Curve {name} needs at least two matching samples")
        if not np.all(np.diff(z1) > 0):
            raise MalformedCurve(f"Curve {name}: z1 samples must be strictly increasing")
        scale = max(1.0, float(np.max(np.abs(z2))))
        if np.any(np.diff(z2) > 1e-12 * scale):
            raise MalformedCurve(f"Curve {name}: z2 samples must be non-increasing")
        self.z1 = z1
        self.z2 = np.minimum.accumulate(z2)
        self.name = name
        self.concave = concave

        cuts = [0]
        for b in sorted(breaks):
            if not z1[0] < b < z1[-1]:
                continue
            k = int(np.argmin(np.abs(z1 - b)))
            if abs(z1[k] - b) > 1e-12 * max(1.0, abs(b)):
                raise MalformedCurve(f"Curve {name}: breakpoint {b} is not a sample")
            if k not in cuts:
                cuts.append(k)
        cuts.append(len(z1) - 1)
        self.breaks = tuple(float(z1[k]) for k in cuts[1:-1])
        self._pieces = [PchipInterpolator(z1[i:j + 1], self.z2[i:j + 1]) for i, j in zip(cuts[:-1], cuts[1:])]
        self._starts = np.array([z1[i] for i in cuts[:-1]])
        self._inverse_cache = {}

    @property
    def domain(self):
        return float(self.z1[0]), float(self.z1[-1])

    @property
    def range(self):
        return float(self.z2[-1]), float(self.z2[0])

    def samples(self):
        return self.z1.copy(), self.z2.copy()

    def _piece_index(self, x, side):
        if side == 'left':
            idx = np.searchsorted(self._starts, x, side='left') - 1
        else:
            idx = np.searchsorted(self._starts, x, side='right') - 1
        return np.clip(idx, 0, len(self._pieces) - 1)

    def evaluate(self, x, nu=0, side='right'):
        scalar = np.ndim(x) == 0
        x = np.atleast_1d(np.asarray(x, dtype=float))
        lo, hi = self.domain
        if np.any(x < lo - DOMAIN_SLACK) or np.any(x > hi + DOMAIN_SLACK):
            raise CurveDomainMismatch(f"Curve {self.name} is defined on [{lo}, {hi}]")
        x = np.clip(x, lo, hi)
        idx = self._piece_index(x, side)
        out = np.empty_like(x)
        for k, piece in enumerate(self._pieces):
            mask = idx == k
            if np.any(mask):
                out[mask] = piece(x[mask], nu)
        return float(out[0]) if scalar else out

    def __call__(self, x):
        return self.evaluate(x)

    def slope(self, x, side='right'):
        return self.evaluate(x, nu=1, side=side)

    def inverse(self, y):
        """z1 with s(z1) = y; vectorized by bisection, scalars by Brent."""
        lo, hi = self.domain
        y_min, y_max = self.range
        if np.ndim(y) == 0:
            y = float(y)
            cached = self._inverse_cache.get(y)
            if cached is not None:
                return cached
            if y < y_min - DOMAIN_SLACK or y > y_max + DOMAIN_SLACK:
                raise CurveDomainMismatch(f"Curve {self.name} takes values in [{y_min}, {y_max}], not {y}")
            if y >= y_max:
                value = lo
            elif y <= y_min:
                value = hi
            else:
                value = brentq(lambda x: self.evaluate(x) - y, lo, hi, xtol=1e-14, rtol=1e-15)
            if len(self._inverse_cache) > 100_000:
                self._inverse_cache.clear()
            self._inverse_cache[y] = value
            return value
        y = np.asarray(y, dtype=float)
        if np.any(y < y_min - DOMAIN_SLACK) or np.any(y > y_max + DOMAIN_SLACK):
            raise CurveDomainMismatch(f"Curve {self.name} takes values in [{y_min}, {y_max}]")
        left = np.full(y.shape, lo)
        right = np.full(y.shape, hi)
        for _ in range(64):
            mid = 0.5 * (left + right)
            above = self.evaluate(mid) > y
            left = np.where(above, mid, left)
            right = np.where(above, right, mid)
        return 0.5 * (left + right)

    def concavity_violation(self, count=1000, seed=0):
        """Largest midpoint excess (s(x)+s(y))/2 - s((x+y)/2) over random pairs."""
        rng = np.random.default_rng(seed)
        lo, hi = self.domain
        x = rng.uniform(lo, hi, count)
        y = rng.uniform(lo, hi, count)
        excess = 0.5 * (self.evaluate(x) + self.evaluate(y)) - self.evaluate(0.5 * (x + y))
        return float(max(np.max(excess), 0.0))

    def to_dict(self, max_points=200):
        step = max(1, len(self.z1) // max_points)
        z1 = np.append(self.z1[::step], self.z1[-1]) if (len(self.z1) - 1) % step else self.z1[::step]
        return {
            'name': self.name,
            'domain': list(self.domain),
            'breaks': list(self.breaks),
            'concave': self.concave,
            'points': [[float(a), float(self.evaluate(a))] for a in z1],
        }
