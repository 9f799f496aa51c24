"""Signed transform field of an instance, its X/Y split and region masses."""
import logging
import math
import multiprocessing
from dataclasses import dataclass
from enum import Enum

import numpy as np
from tqdm import tqdm

from config import DEFAULT_NUM_WORKERS
from errors import OutOfSupport
from numerics import (DEFAULT_TOLERANCE, CurveBound, LinearBound, MaxBound, MinBound, Region, Tolerance,
                      integrate_2d)


class RegionLabel(str, Enum):
    X = 'X'
    Y = 'Y'
    DMINUS = 'DMINUS'


class Measure(str, Enum):
    MU = 'MU'
    NU = 'NU'


@dataclass(frozen=True, eq=False)
class TransformField:
    """phi(z) = -grad f(z).z - 3 f(z) for the product density f = f1 f2.

    mu is the positive part of phi plus a unit atom at d_minus, nu the
    negative part.
    """
    instance: object
    point_mass_at_dminus: float = 1.0

    @property
    def items(self):
        return self.instance.items

    def phi_at(self, z1, z2):
        d1, d2 = self.instance.items
        f1, f2 = d1.pdf(z1), d2.pdf(z2)
        return -z1 * d1.dpdf(z1) * f2 - z2 * f1 * d2.dpdf(z2) - 3.0 * f1 * f2

    def score(self, z1, z2):
        """g1(z1) + g2(z2); X is where this exceeds 3."""
        d1, d2 = self.instance.items
        return d1.elasticity(z1) + d2.elasticity(z2)

    def eta(self, z1, z2):
        return self.score(z1, z2) - 3.0

    @property
    def eta_increasing(self):
        return all(item.elasticity_increasing for item in self.instance.items)

    def check_support(self, z):
        z1, z2 = z
        if not self.instance.in_support(z1, z2):
            raise OutOfSupport(f"Point {tuple(z)} lies outside the support")


def phi(field, z):
    field.check_support(z)
    return float(field.phi_at(z[0], z[1]))


def classify(field, z):
    """Boundary points (phi = 0) count as Y; d_minus has its own label."""
    field.check_support(z)
    if tuple(float(v) for v in z) == tuple(field.instance.d_minus):
        return RegionLabel.DMINUS
    return RegionLabel.X if field.phi_at(z[0], z[1]) > 0 else RegionLabel.Y


def classify_array(field, z1, z2):
    """Vectorized labels as a string array ('X' or 'Y'), d_minus excluded."""
    return np.where(np.asarray(field.phi_at(np.asarray(z1, float), np.asarray(z2, float))) > 0, 'X', 'Y')


@dataclass(frozen=True, eq=False)
class PartDensity:
    """Density of mu (positive part of phi) or nu (negative part)."""
    field: TransformField
    which: Measure

    def __call__(self, z1, z2):
        value = self.field.phi_at(z1, z2)
        if self.which is Measure.NU:
            value = -value
        if np.ndim(value) == 0:
            return value if value > 0 else 0.0
        return np.maximum(value, 0.0)


@dataclass(frozen=True, eq=False)
class SignedDensity:
    field: TransformField

    def __call__(self, z1, z2):
        return self.field.phi_at(z1, z2)


@dataclass(frozen=True, eq=False)
class ExcludedDensity:
    """A density set to zero on and below a decreasing curve."""
    density: object
    curve: object

    def __call__(self, z1, z2):
        if self.curve is not None:
            lo, hi = self.curve.domain
            if lo <= z1 <= hi and z2 <= self.curve(z1):
                return 0.0
        return self.density(z1, z2)


# Region builders

def whole_domain(instance):
    (lo1, lo2), (hi1, hi2) = instance.d_minus, instance.d_plus
    return Region.box(lo1, hi1, lo2, hi2, tails=instance.tails)


def box(instance, z1_lo, z1_hi, z2_lo, z2_hi):
    return Region.box(z1_lo, z1_hi, z2_lo, z2_hi, tails=instance.tails)


def sum_half_plane(instance, p):
    """{z in D : z1 + z2 <= p}."""
    (lo1, lo2), (hi1, hi2) = instance.d_minus, instance.d_plus
    end = min(p - lo2, hi1)
    upper = MinBound((LinearBound(p, -1.0), hi2)) if math.isfinite(hi2) else LinearBound(p, -1.0)
    return Region((lo1, max(end, lo1)), lo2, upper, outer_tail=instance.tails[0], inner_tail=instance.tails[1])


def weighted_half_plane(instance, weights, level):
    """{z in D : w1 z1 + w2 z2 <= level}."""
    (lo1, lo2), (hi1, hi2) = instance.d_minus, instance.d_plus
    w1, w2 = weights
    end = min((level - w2 * lo2) / w1, hi1)
    line = LinearBound(level / w2, -w1 / w2)
    upper = MinBound((line, hi2)) if math.isfinite(hi2) else line
    return Region((lo1, max(end, lo1)), lo2, upper, outer_tail=instance.tails[0], inner_tail=instance.tails[1])


def below_curve(instance, curve):
    lo, hi = curve.domain
    return Region((lo, hi), instance.d_minus[1], curve, outer_points=curve.breaks,
                  outer_tail=instance.tails[0], inner_tail=instance.tails[1])


def above_curve(instance, curve):
    (lo1, lo2), (hi1, hi2) = instance.d_minus, instance.d_plus
    points = tuple(curve.breaks) + (curve.domain[1],)
    return Region((lo1, hi1), CurveBound(curve, fill=lo2), hi2, outer_points=points,
                  outer_tail=instance.tails[0], inner_tail=instance.tails[1])


def intersect(*regions):
    """Intersection of z1-outer regions: overlap of outer ranges, max of lowers, min of uppers."""
    lo = max(r.outer[0] for r in regions)
    hi = min(r.outer[1] for r in regions)
    points = tuple(sorted({p for r in regions for p in r.outer_points}))
    return Region((lo, max(hi, lo)), MaxBound(tuple(r.lower for r in regions)),
                  MinBound(tuple(r.upper for r in regions)), outer_points=points,
                  outer_tail=regions[0].outer_tail, inner_tail=regions[0].inner_tail)


def mass(field, which, region, tol=DEFAULT_TOLERANCE, include_atom=False):
    """mu or nu mass of a region; the d_minus atom only when asked for."""
    which = Measure(which)
    total = 0.0
    if region is not None and not region.is_empty():
        total = integrate_2d(PartDensity(field, which), region, tol)
    if include_atom and which is Measure.MU and region is not None:
        if region.contains(*field.instance.d_minus):
            total += field.point_mass_at_dminus
    return total


def signed_mass(field, region, tol=DEFAULT_TOLERANCE):
    if region is None or region.is_empty():
        return 0.0
    return integrate_2d(SignedDensity(field), region, tol)


def check_mass_identity(field, tol=DEFAULT_TOLERANCE):
    """nu(Y) - mu(X); equals the unit atom for every valid instance."""
    domain = whole_domain(field.instance)
    nu_total = mass(field, Measure.NU, domain, tol)
    mu_total = mass(field, Measure.MU, domain, tol)
    logging.info(f"Mass identity: nu(Y)={nu_total:.10f}, mu(X)={mu_total:.10f}")
    return nu_total - mu_total


def _integrate_cell(task):
    densities, x_lo, x_hi, y_lo, y_hi, lower, tails, tol = task
    region_lower = MaxBound((y_lo, lower)) if lower is not None else y_lo
    region = Region((x_lo, x_hi), region_lower, y_hi, outer_tail=tails[0], inner_tail=tails[1])
    return [integrate_2d(density, region, tol) for density in densities]


def integrate_cells(densities, x_edges, y_edges, tails=(None, None), lower=None,
                    tol=Tolerance(1e-11, 1e-8), workers=DEFAULT_NUM_WORKERS, progress=True, desc='Cell masses'):
    """Integrals of each density over every grid cell, optionally above a lower bound.

    Returns an array of shape (len(densities), len(x_edges)-1, len(y_edges)-1).
    Infinite outer edges use the given tails.
    """
    kx, ky = len(x_edges) - 1, len(y_edges) - 1
    tasks = []
    for i in range(kx):
        for j in range(ky):
            cell_tails = (tails[0] if math.isinf(x_edges[i + 1]) else None,
                          tails[1] if math.isinf(y_edges[j + 1]) else None)
            tasks.append((densities, x_edges[i], x_edges[i + 1], y_edges[j], y_edges[j + 1], lower, cell_tails, tol))

    if workers > 1:
        with multiprocessing.Pool(workers) as pool:
            results = list(tqdm(pool.imap(_integrate_cell, tasks), total=len(tasks), desc=desc,
                                mininterval=0.5, dynamic_ncols=True, leave=False, disable=not progress))
    else:
        results = [_integrate_cell(task) for task in tqdm(tasks, desc=desc, mininterval=0.5,
                                                          dynamic_ncols=True, leave=False, disable=not progress)]
    return np.asarray(results, dtype=float).T.reshape(len(densities), kx, ky)


def cell_masses(field, x_edges, y_edges, tol=Tolerance(1e-11, 1e-8), workers=DEFAULT_NUM_WORKERS, progress=True):
    """(mu, nu) masses of every cell, without the d_minus atom."""
    densities = (PartDensity(field, Measure.MU), PartDensity(field, Measure.NU))
    masses = integrate_cells(densities, x_edges, y_edges, tails=field.instance.tails, tol=tol,
                             workers=workers, progress=progress)
    return masses[0], masses[1]
