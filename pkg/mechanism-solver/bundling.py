"""Critical bundle price and the grand-bundle optimality certificate."""
import logging
import math
from dataclasses import dataclass

import numpy as np

from config import DEFAULT_MASS_TOL, DEFAULT_PROBE_COUNT
from dominance import check_region_dominance, problem_from_field
from errors import NonConvergence, NoSolution
from measures import Measure, mass, sum_half_plane
from mechanism import MenuMechanism, MenuOption, bundle_revenue
from numerics import DEFAULT_TOLERANCE, BoundaryCurve, find_root, maximize_on_interval

MAX_DOUBLINGS = 60
MARGIN_SLACK = 1e-12
MONOTONE_SLACK = 1e-9

__all__ = ['BundleCertificate', 'bundle_mechanism', 'bundle_revenue', 'certify_grand_bundle',
           'critical_bundle_price', 'zero_set_mass']


def zero_set_mass(field, p, tol=DEFAULT_TOLERANCE):
    """nu({z in D : z1 + z2 <= p})."""
    if p <= sum(field.instance.d_minus):
        return 0.0
    return mass(field, Measure.NU, sum_half_plane(field.instance, p), tol)


def critical_bundle_price(field, tol=DEFAULT_TOLERANCE):
    """Price p* at which the triangle below z1 + z2 = p* carries nu-mass equal to the atom at d_minus."""
    instance = field.instance
    atom = field.point_mass_at_dminus
    lo = sum(instance.d_minus)
    top = sum(instance.d_plus)
    step = 1.0
    hi, previous = lo + step, 0.0
    for _ in range(MAX_DOUBLINGS):
        value = zero_set_mass(field, min(hi, top), tol)
        if value < previous - MONOTONE_SLACK:
            raise NonConvergence(f"nu(Z_p) decreased from {previous:.10f} to {value:.10f} at p={hi}")
        if value >= atom:
            break
        if hi >= top:
            raise NoSolution(f"nu(Z_p) stays below {atom} on the whole support")
        previous = value
        lo, hi = hi, lo + 2.0 * (hi - lo) + step
    else:
        raise NoSolution(f"nu(Z_p) stays below {atom} up to p={hi}")
    hi = min(hi, top)
    p_star = find_root(lambda p: zero_set_mass(field, p, tol) - atom, lo, hi, tol)
    logging.info(f"Critical bundle price p*={p_star:.8f}")
    return p_star


def bundle_mechanism(p):
    return MenuMechanism([MenuOption(1.0, 1.0, p)])


@dataclass
class BundleCertificate:
    """Grand-bundle optimality evidence; valid only when every part passes."""
    p_star: float
    z_subset_Y_margin: float
    mass_residual: float
    dominance: object
    line_max: float
    line_argmax: float
    mass_tol: float = DEFAULT_MASS_TOL

    @property
    def line_passed(self):
        return self.line_max <= 3.0

    @property
    def valid(self):
        return (self.z_subset_Y_margin >= -MARGIN_SLACK and self.line_passed
                and self.mass_residual <= self.mass_tol and self.dominance is not None and self.dominance.passed)

    def to_dict(self):
        return {
            'p_star': float(self.p_star),
            'valid': self.valid,
            'line_max': float(self.line_max),
            'line_argmax': float(self.line_argmax),
            'z_subset_Y_margin': float(self.z_subset_Y_margin),
            'mass_residual': float(self.mass_residual),
            'mass_tol': self.mass_tol,
            'dominance': self.dominance.to_dict() if self.dominance is not None else None,
            'scope': 'two items',
        }


def _line_range(instance, p):
    (lo1, lo2), (hi1, hi2) = instance.d_minus, instance.d_plus
    start = max(lo1, p - hi2)
    end = min(p - lo2, hi1)
    return start, end


def _zero_set_probes(instance, p, line_points, count):
    (lo1, lo2), (hi1, hi2) = instance.d_minus, instance.d_plus
    side = int(max(10, math.sqrt(2 * count)))
    x, y = np.meshgrid(np.linspace(lo1, p - lo2, side), np.linspace(lo2, p - lo1, side))
    grid = np.column_stack([x.ravel(), y.ravel()])
    grid = grid[(grid.sum(axis=1) <= p) & ~((grid[:, 0] == lo1) & (grid[:, 1] == lo2))]
    probes = np.vstack([line_points, grid])
    return probes[(probes[:, 0] < hi1) & (probes[:, 1] < hi2)]


def certify_grand_bundle(field, p_star, tol=DEFAULT_TOLERANCE, probe_count=DEFAULT_PROBE_COUNT, progress=False):
    """Z below z1 + z2 = p* lies in Y, carries unit nu-mass, and mu dominates nu on its complement."""
    instance = field.instance
    lo1, lo2 = instance.d_minus
    start, end = _line_range(instance, p_star)

    line_argmax, line_max = maximize_on_interval(lambda x: field.score(x, p_star - x), start, end,
                                                 probes=probe_count, tol=tol)
    x = np.linspace(start, end, probe_count)
    line_points = np.column_stack([x, p_star - x])
    probes = _zero_set_probes(instance, p_star, line_points, probe_count)
    margin = float(np.min(-np.asarray(field.phi_at(probes[:, 0], probes[:, 1]))))

    residual = abs(zero_set_mass(field, p_star, tol) - field.point_mass_at_dminus)

    boundary = BoundaryCurve([start, end], [p_star - start, p_star - end], name='bundle_line')
    problem = problem_from_field(field, instance.d_minus, boundary)
    dominance = check_region_dominance(problem, tol, probe_count, progress=progress)

    certificate = BundleCertificate(p_star=p_star, z_subset_Y_margin=margin, mass_residual=residual,
                                    dominance=dominance, line_max=float(line_max), line_argmax=float(line_argmax))
    if certificate.valid:
        logging.info(f"Grand bundle at p*={p_star:.6f} certified (line max {line_max:.5f} at z1={line_argmax:.6f})")
    else:
        logging.info(f"Grand bundle certificate inconclusive at p*={p_star:.6f}")
    return certificate
