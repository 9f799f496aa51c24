"""Item value distributions: exponential, power-law, beta and user-defined densities."""
import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats
from scipy.stats import qmc

from errors import InvalidParameter
from numerics import DEFAULT_TOLERANCE, CheckResult, TailBound, find_root, integrate_1d

FD_STEP = 1e-5
FD_TOL = 1e-5
NORMALIZATION_TOL = 1e-8
BOUNDARY_TOL = 1e-12
TAIL_LIMIT_TOL = 1e-4


def _scalar(values):
    return float(values) if np.ndim(values) == 0 else values


class ItemDistribution(ABC):
    """Density of one item's value on the support [lower, upper).

    Subclasses provide pdf and dpdf; cdf, sf and ppf fall back to quadrature
    and bisection when no closed form is available.
    """
    family = 'custom'
    lower = 0.0
    upper = math.inf
    tail = TailBound('compact')
    elasticity_increasing = False

    @abstractmethod
    def pdf(self, z):
        ...

    @abstractmethod
    def dpdf(self, z):
        ...

    def params(self):
        return {}

    def describe(self):
        return {'family': self.family, **self.params(),
                'support': [self.lower, self.upper if math.isfinite(self.upper) else 'inf']}

    def cdf(self, z):
        if np.ndim(z) > 0:
            return np.array([self.cdf(float(v)) for v in np.ravel(z)]).reshape(np.shape(z))
        z = float(z)
        if z <= self.lower:
            return 0.0
        if z >= self.upper:
            return 1.0
        return min(1.0, integrate_1d(self.pdf, self.lower, z, DEFAULT_TOLERANCE))

    def sf(self, z):
        return _scalar(1.0 - np.asarray(self.cdf(z)))

    def ppf(self, u):
        if np.ndim(u) > 0:
            return np.array([self.ppf(float(v)) for v in np.ravel(u)]).reshape(np.shape(u))
        u = float(u)
        if u <= 0.0:
            return self.lower
        hi = self.upper if math.isfinite(self.upper) else self.lower + 1.0
        while not math.isfinite(self.upper) and self.cdf(hi) < u:
            hi = self.lower + 2.0 * (hi - self.lower)
        return find_root(lambda z: self.cdf(z) - u, self.lower, hi)

    def elasticity(self, z):
        """g(z) = -z f'(z) / f(z), the per-item term of the transform's sign."""
        z = np.asarray(z, dtype=float)
        f = np.asarray(self.pdf(z), dtype=float)
        with np.errstate(divide='ignore', invalid='ignore'):
            g = np.where(f > 0, -z * np.asarray(self.dpdf(z)) / np.where(f > 0, f, 1.0), np.nan)
        return _scalar(g)

    def hazard_ratio(self, z):
        """z f(z) / sf(z); E[g | value >= z] = 1 + hazard_ratio(z) when z f(z) -> 0 at the upper end."""
        z = np.asarray(z, dtype=float)
        sf = np.asarray(self.sf(z), dtype=float)
        with np.errstate(divide='ignore', invalid='ignore'):
            h = np.where(sf > 0, z * np.asarray(self.pdf(z)) / np.where(sf > 0, sf, 1.0), np.inf)
        return _scalar(h)

    def conditional_elasticity(self, z):
        return _scalar(1.0 + np.asarray(self.hazard_ratio(z)))

    def quantile_upper(self, q=0.999):
        return self.upper if math.isfinite(self.upper) else float(self.ppf(q))

    def sample(self, rng, size):
        return self.ppf(rng.random(size))


class Exponential(ItemDistribution):
    family = 'exponential'
    elasticity_increasing = True

    def __init__(self, rate):
        if not rate > 0:
            raise InvalidParameter(f"Exponential rate must be positive, got {rate}")
        self.rate = float(rate)
        self.tail = TailBound('exponential', self.rate)
        self._dist = stats.expon(scale=1.0 / self.rate)

    def params(self):
        return {'rate': self.rate}

    def pdf(self, z):
        if np.ndim(z) == 0:
            return self.rate * math.exp(-self.rate * z) if z >= 0 else 0.0
        z = np.asarray(z, dtype=float)
        return np.where(z >= 0, self.rate * np.exp(-self.rate * np.maximum(z, 0.0)), 0.0)

    def dpdf(self, z):
        return -self.rate * self.pdf(z)

    def cdf(self, z):
        return _scalar(self._dist.cdf(z))

    def sf(self, z):
        return _scalar(self._dist.sf(z))

    def ppf(self, u):
        return _scalar(-np.log1p(-np.asarray(u, dtype=float)) / self.rate)

    def elasticity(self, z):
        return _scalar(self.rate * np.asarray(z, dtype=float))

    def hazard_ratio(self, z):
        return _scalar(self.rate * np.asarray(z, dtype=float))


class PowerLaw(ItemDistribution):
    """f(z) = (c-1) / (1+z)^c on [0, inf)."""
    family = 'powerlaw'
    elasticity_increasing = True

    def __init__(self, c):
        if not c > 2:
            raise InvalidParameter(f"Power-law exponent must exceed 2 so that z^2 f(z) -> 0, got {c}")
        self.c = float(c)
        self.tail = TailBound('polynomial', self.c)
        self._dist = stats.lomax(self.c - 1.0)

    def params(self):
        return {'c': self.c}

    def pdf(self, z):
        if np.ndim(z) == 0:
            return (self.c - 1.0) * (1.0 + z) ** (-self.c) if z >= 0 else 0.0
        z = np.asarray(z, dtype=float)
        return np.where(z >= 0, (self.c - 1.0) * (1.0 + np.maximum(z, 0.0)) ** (-self.c), 0.0)

    def dpdf(self, z):
        if np.ndim(z) == 0:
            return -self.c * (self.c - 1.0) * (1.0 + z) ** (-self.c - 1.0) if z >= 0 else 0.0
        z = np.asarray(z, dtype=float)
        return np.where(z >= 0, -self.c * (self.c - 1.0) * (1.0 + np.maximum(z, 0.0)) ** (-self.c - 1.0), 0.0)

    def cdf(self, z):
        return _scalar(self._dist.cdf(z))

    def sf(self, z):
        return _scalar(self._dist.sf(z))

    def ppf(self, u):
        return _scalar((1.0 - np.asarray(u, dtype=float)) ** (1.0 / (1.0 - self.c)) - 1.0)

    def elasticity(self, z):
        z = np.asarray(z, dtype=float)
        return _scalar(self.c * z / (1.0 + z))

    def hazard_ratio(self, z):
        z = np.asarray(z, dtype=float)
        return _scalar((self.c - 1.0) * z / (1.0 + z))


class Beta(ItemDistribution):
    """Beta(shape1, shape2) on [0, 1)."""
    family = 'beta'
    upper = 1.0
    elasticity_increasing = True

    def __init__(self, shape1, shape2):
        if not shape1 > 1 or not shape2 > 1:
            raise InvalidParameter(f"Beta shapes must exceed 1, got ({shape1}, {shape2})")
        self.shape1 = float(shape1)
        self.shape2 = float(shape2)
        if self.shape1.is_integer() and self.shape2.is_integer():
            a, b = int(self.shape1), int(self.shape2)
            self.norm = math.factorial(a - 1) * math.factorial(b - 1) / math.factorial(a + b - 1)
        else:
            self.norm = float(special.beta(self.shape1, self.shape2))
        self._dist = stats.beta(self.shape1, self.shape2)

    def params(self):
        return {'shape1': self.shape1, 'shape2': self.shape2}

    def pdf(self, z):
        a, b = self.shape1, self.shape2
        if np.ndim(z) == 0:
            if z < 0 or z >= 1:
                return 0.0
            return z ** (a - 1.0) * (1.0 - z) ** (b - 1.0) / self.norm
        z = np.asarray(z, dtype=float)
        inside = (z >= 0) & (z < 1)
        zc = np.clip(z, 0.0, 1.0)
        return np.where(inside, zc ** (a - 1.0) * (1.0 - zc) ** (b - 1.0) / self.norm, 0.0)

    def dpdf(self, z):
        a, b = self.shape1, self.shape2
        if np.ndim(z) == 0:
            if z < 0 or z >= 1:
                return 0.0
            if z == 0 and a < 2:
                return math.inf
            return ((a - 1.0) * z ** (a - 2.0) * (1.0 - z) ** (b - 1.0)
                    - (b - 1.0) * z ** (a - 1.0) * (1.0 - z) ** (b - 2.0)) / self.norm
        z = np.asarray(z, dtype=float)
        inside = (z >= 0) & (z < 1)
        zc = np.clip(z, 0.0, 1.0)
        with np.errstate(divide='ignore', invalid='ignore'):
            value = ((a - 1.0) * zc ** (a - 2.0) * (1.0 - zc) ** (b - 1.0)
                     - (b - 1.0) * zc ** (a - 1.0) * (1.0 - zc) ** (b - 2.0)) / self.norm
        return np.where(inside, value, 0.0)

    def cdf(self, z):
        return _scalar(self._dist.cdf(z))

    def sf(self, z):
        return _scalar(self._dist.sf(z))

    def ppf(self, u):
        return _scalar(self._dist.ppf(u))

    def elasticity(self, z):
        z = np.asarray(z, dtype=float)
        with np.errstate(divide='ignore'):
            return _scalar((self.shape2 - 1.0) * z / (1.0 - z) - (self.shape1 - 1.0))


_EXPRESSION_NAMESPACE = {
    'np': np, 'exp': np.exp, 'log': np.log, 'sqrt': np.sqrt, 'power': np.power,
    'where': np.where, 'pi': np.pi, 'abs': np.abs,
}


class CustomDistribution(ItemDistribution):
    """User density given as numpy expressions in z (or as callables)."""

    def __init__(self, pdf, dpdf, lower=0.0, upper=math.inf, tail=None, increasing=False):
        self.lower = float(lower)
        self.upper = float(upper)
        self.tail = tail if tail is not None else TailBound('compact')
        self.elasticity_increasing = increasing
        self._pdf_source, self._dpdf_source = pdf, dpdf
        self._pdf = self._compile(pdf)
        self._dpdf = self._compile(dpdf)

    @staticmethod
    def _compile(source):
        if callable(source):
            return source
        code = compile(str(source), '<density>', 'eval')
        return lambda z: eval(code, _EXPRESSION_NAMESPACE, {'z': z})

    def __getstate__(self):
        if callable(self._pdf_source) or callable(self._dpdf_source):
            raise TypeError("Callable densities cannot be sent to worker processes; use expressions")
        state = self.__dict__.copy()
        del state['_pdf'], state['_dpdf']
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        self._pdf = self._compile(self._pdf_source)
        self._dpdf = self._compile(self._dpdf_source)

    def params(self):
        if callable(self._pdf_source):
            return {}
        return {'pdf': str(self._pdf_source), 'dpdf': str(self._dpdf_source)}

    def _inside(self, z):
        return (z >= self.lower) & (z < self.upper)

    def pdf(self, z):
        z_arr = np.asarray(z, dtype=float)
        with np.errstate(all='ignore'):
            value = np.where(self._inside(z_arr), self._pdf(z_arr), 0.0)
        return _scalar(value)

    def dpdf(self, z):
        z_arr = np.asarray(z, dtype=float)
        with np.errstate(all='ignore'):
            value = np.where(self._inside(z_arr), self._dpdf(z_arr), 0.0)
        return _scalar(value)


@dataclass
class ValidationReport:
    """Per-assumption results for one item distribution."""
    distribution: dict
    checks: dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(check.passed for check in self.checks.values())

    def to_dict(self):
        return {
            'distribution': self.distribution,
            'passed': self.passed,
            'checks': {name: check.to_dict() for name, check in self.checks.items()},
        }


def _interior_points(dist, count):
    u = qmc.Halton(d=1, scramble=False).random(count + 1)[1:, 0]
    lo = dist.lower + 2 * FD_STEP
    if math.isfinite(dist.upper):
        hi = dist.upper - 2 * FD_STEP
    else:
        hi = max(dist.quantile_upper(0.9999), lo + 1.0)
    return lo + (hi - lo) * u


def _tail_sequence(dist):
    if math.isfinite(dist.upper):
        return dist.upper - 10.0 ** -np.arange(1, 13, dtype=float)
    return dist.lower + 10.0 ** np.arange(1, 13, dtype=float)


def validate(dist, tol=DEFAULT_TOLERANCE, points=1000):
    """Check a distribution against the regularity assumptions the solvers rely on."""
    report = ValidationReport(distribution=dist.describe())

    mass = integrate_1d(dist.pdf, dist.lower, dist.upper, tol, tail=dist.tail)
    residual = abs(mass - 1.0)
    report.checks['normalization'] = CheckResult('normalization', residual <= NORMALIZATION_TOL,
                                                 residual, NORMALIZATION_TOL)

    boundary = abs(dist.lower * dist.pdf(dist.lower))
    report.checks['boundary'] = CheckResult('boundary', boundary <= BOUNDARY_TOL, boundary, BOUNDARY_TOL,
                                            location=(dist.lower,))

    z = _tail_sequence(dist)
    with np.errstate(over='ignore', invalid='ignore'):
        tail_values = np.abs(z ** 2 * np.asarray(dist.pdf(z), dtype=float))
    tail_ok = bool(np.isfinite(tail_values[-1]) and tail_values[-1] <= TAIL_LIMIT_TOL
                   and tail_values[-1] <= tail_values[-3] + TAIL_LIMIT_TOL)
    report.checks['tail_limit'] = CheckResult('tail_limit', tail_ok, float(tail_values[-1]), TAIL_LIMIT_TOL,
                                              location=(float(z[-1]),))

    x = _interior_points(dist, points)
    finite_difference = (np.asarray(dist.pdf(x + FD_STEP)) - np.asarray(dist.pdf(x - FD_STEP))) / (2 * FD_STEP)
    error = np.abs(np.asarray(dist.dpdf(x)) - finite_difference)
    worst = int(np.argmax(error))
    report.checks['derivative'] = CheckResult('derivative', bool(error[worst] <= FD_TOL), float(error[worst]),
                                              FD_TOL, location=(float(x[worst]),))

    if not report.passed:
        failed = [name for name, check in report.checks.items() if not check.passed]
        logging.warning(f"Distribution {dist.describe()} failed checks: {', '.join(failed)}")
    return report


FAMILIES = {
    'exponential': (Exponential, ('rate',)),
    'powerlaw': (PowerLaw, ('c',)),
    'beta': (Beta, ('shape1', 'shape2')),
}

PARAMETER_ALIASES = {'lambda': 'rate', 'lam': 'rate', 'a': 'shape1', 'b': 'shape2'}


def make_family(family, tol=DEFAULT_TOLERANCE, **params):
    """Build and validate a built-in distribution, e.g. make_family('beta', shape1=3, shape2=3)."""
    if family not in FAMILIES:
        raise InvalidParameter(f"Unknown family '{family}'. Choose from: {', '.join(FAMILIES)}")
    cls, names = FAMILIES[family]
    params = {PARAMETER_ALIASES.get(k, k): v for k, v in params.items()}
    unknown = set(params) - set(names)
    missing = set(names) - set(params)
    if unknown or missing:
        raise InvalidParameter(f"Family '{family}' takes parameters {names}, got {sorted(params)}")
    dist = cls(**{name: float(params[name]) for name in names})
    report = validate(dist, tol)
    if not report.passed:
        raise InvalidParameter(f"{family}{params} violates the distribution assumptions")
    return dist


@dataclass(frozen=True, eq=False)
class Instance:
    """Two independent items; the joint density is the product."""
    items: tuple

    def __post_init__(self):
        if len(self.items) != 2:
            raise InvalidParameter(f"Exactly two items are supported, got {len(self.items)}")

    n = 2

    @property
    def d_minus(self):
        return (self.items[0].lower, self.items[1].lower)

    @property
    def d_plus(self):
        return (self.items[0].upper, self.items[1].upper)

    @property
    def tails(self):
        return (self.items[0].tail, self.items[1].tail)

    def pdf(self, z1, z2):
        return self.items[0].pdf(z1) * self.items[1].pdf(z2)

    def in_support(self, z1, z2):
        (lo1, lo2), (hi1, hi2) = self.d_minus, self.d_plus
        return lo1 <= z1 < hi1 and lo2 <= z2 < hi2

    def quantile_box(self, q=0.999):
        return tuple(item.quantile_upper(q) for item in self.items)

    def sample(self, rng, size):
        return np.column_stack([item.sample(rng, size) for item in self.items])

    def swapped(self):
        return Instance((self.items[1], self.items[0]))

    def describe(self):
        return [item.describe() for item in self.items]
