"""Closed-form optimal menu for two exponential items."""
import logging
import math
from dataclasses import dataclass

import numpy as np

from canonical import CanonicalPartition
from distributions import Exponential, Instance
from errors import InvalidParameter, NotOnHyperplane
from measures import Measure, TransformField, mass
from mechanism import NULL_OPTION, MenuMechanism, MenuOption
from numerics import DEFAULT_TOLERANCE, BoundaryCurve, LinearBound, MinBound, Region, TailBound, find_root, \
    integrate_1d

HYPERPLANE_TOL = 1e-8
PRICE_FLOOR = 1e-9


def _check_rates(l1, l2):
    for rate in (l1, l2):
        try:
            rate = float(rate)
        except (TypeError, ValueError):
            raise InvalidParameter(f"Exponential rates must be numbers, got {rate!r}")
        if not (rate > 0 and math.isfinite(rate)):
            raise InvalidParameter(f"Exponential rates must be positive and finite, got {rate}")


def exponential_field(l1, l2):
    return TransformField(Instance((Exponential(l1), Exponential(l2))))


def zero_space_region(lam, p):
    """{z >= 0 : z1 + z2 <= p and lam1 z1 + lam2 z2 <= 2} for lam1 >= lam2."""
    l1, l2 = lam
    end = min(p, 2.0 / l1)
    tails = (TailBound('exponential', l1), TailBound('exponential', l2))
    if p <= 2.0 / l1 or l1 == l2:
        upper = LinearBound(min(p, 2.0 / l2), -1.0)
        return Region((0.0, end), 0.0, upper, outer_tail=tails[0], inner_tail=tails[1])
    crossing = (2.0 - l2 * p) / (l1 - l2)
    upper = MinBound((LinearBound(p, -1.0), LinearBound(2.0 / l2, -l1 / l2)))
    return Region((0.0, end), 0.0, upper, outer_points=(crossing,), outer_tail=tails[0], inner_tail=tails[1])


def zero_space_mass(lam, p, tol=DEFAULT_TOLERANCE):
    """nu-mass of the zero space at price p."""
    if p <= 0:
        return 0.0
    field = exponential_field(*lam)
    return mass(field, Measure.NU, zero_space_region(lam, p), tol)


@dataclass(frozen=True)
class ExponentialSolution:
    """Optimal menu in canonical order (lam1 >= lam2); `relabeled` records a swap of the caller's items."""
    lam: tuple
    relabeled: bool
    p_star: float
    pure_bundling: bool

    @property
    def lottery_option(self):
        l1, l2 = self.lam
        return MenuOption(1.0, l2 / l1, 2.0 / l1)

    @property
    def menu(self):
        options = [NULL_OPTION]
        if not self.pure_bundling:
            options.append(self.lottery_option)
        options.append(MenuOption(1.0, 1.0, self.p_star))
        return options

    def menu_in_item_order(self):
        if not self.relabeled:
            return self.menu
        return [MenuOption(o.q2, o.q1, o.t) for o in self.menu]

    def mechanism(self):
        return MenuMechanism(self.menu_in_item_order())

    def field(self):
        return exponential_field(*self.lam)

    def utility(self, z1, z2):
        """Three-branch utility in canonical coordinates."""
        l1, l2 = self.lam
        return max(0.0, z1 + z2 * l2 / l1 - 2.0 / l1 if not self.pure_bundling else 0.0, z1 + z2 - self.p_star)

    def partition(self):
        """Zero set bounded by the 45-degree segment and the hyperplane lam1 z1 + lam2 z2 = 2."""
        l1, l2 = self.lam
        p = self.p_star
        tails = (TailBound('exponential', l1), TailBound('exponential', l2))
        if self.pure_bundling:
            s = BoundaryCurve([0.0, p], [p, 0.0], concave=True, name='s')
            b = c = p
        else:
            b = (2.0 - l2 * p) / (l1 - l2)
            c = 2.0 / l1
            s = BoundaryCurve([0.0, b, c], [p, p - b, 0.0], breaks=(b,), concave=True, name='s')
        return CanonicalPartition(s, 0.0, b, c, p, (0.0, 0.0), (math.inf, math.inf), tails)

    def to_dict(self):
        return {
            'lambda': [float(v) for v in self.lam],
            'relabeled': self.relabeled,
            'p_star': float(self.p_star),
            'pure_bundling': self.pure_bundling,
            'menu': [o.to_dict() for o in self.menu_in_item_order()],
        }


def solve_two_exponential(l1, l2, tol=DEFAULT_TOLERANCE):
    """Critical price of the zero space and the resulting menu."""
    _check_rates(l1, l2)
    l1, l2 = float(l1), float(l2)
    relabeled = l1 < l2
    lam = (float(max(l1, l2)), float(min(l1, l2)))
    upper = 2.0 / lam[1]
    p_star = find_root(lambda p: zero_space_mass(lam, p, tol) - 1.0, PRICE_FLOOR, upper, tol)
    pure = p_star <= 2.0 / lam[0]
    logging.info(f"Exponential rates {lam}: p*={p_star:.8f}, pure bundling={pure}")
    return ExponentialSolution(lam, relabeled, p_star, pure)


def absorption_residual(lam, z, v, tol=DEFAULT_TOLERANCE):
    """Outward integral of (3 - lam.x) exp(-lam.x) along z + tau v from a point of lam.z = 2."""
    lam = np.asarray(lam, dtype=float)
    z = np.asarray(z, dtype=float)
    v = np.asarray(v, dtype=float)
    level = float(lam @ z)
    if abs(level - 2.0) > HYPERPLANE_TOL * max(1.0, abs(level)):
        raise NotOnHyperplane(f"lam.z = {level} is not 2")
    if np.any(v < 0) or not np.any(v > 0):
        raise InvalidParameter(f"Direction must be nonnegative and nonzero, got {v.tolist()}")
    speed = float(lam @ v)

    def integrand(tau):
        x = level + speed * tau
        return (3.0 - x) * math.exp(-x)

    return integrate_1d(integrand, 0.0, math.inf, tol, tail=TailBound('exponential', speed))
