import math

import numpy as np
import pytest

from errors import OutOfSupport
from measures import (Measure, RegionLabel, cell_masses, check_mass_identity, classify, classify_array, mass, phi,
                      signed_mass, sum_half_plane, whole_domain)


class TestTransform:
    def test_phi_exponential(self, exp11_field):
        # phi = exp(-s) (s - 3) with s = z1 + z2
        assert phi(exp11_field, (1.0, 1.0)) == pytest.approx(-math.exp(-2.0))
        assert phi(exp11_field, (2.0, 2.0)) == pytest.approx(math.exp(-4.0))

    def test_phi_matches_score(self, beta_field):
        z1, z2 = 0.4, 0.7
        density = beta_field.instance.pdf(z1, z2)
        assert beta_field.phi_at(z1, z2) == pytest.approx(density * beta_field.eta(z1, z2), rel=1e-12)

    def test_classify(self, exp11_field):
        assert classify(exp11_field, (0.0, 0.0)) is RegionLabel.DMINUS
        assert classify(exp11_field, (1.0, 1.0)) is RegionLabel.Y
        assert classify(exp11_field, (2.0, 2.0)) is RegionLabel.X

    def test_classify_array(self, exp11_field):
        labels = classify_array(exp11_field, [1.0, 2.0, 0.5], [1.0, 2.0, 4.0])
        assert labels.tolist() == ['Y', 'X', 'X']

    def test_out_of_support(self, exp11_field, beta_field):
        with pytest.raises(OutOfSupport):
            phi(exp11_field, (-1.0, 0.5))
        with pytest.raises(OutOfSupport):
            classify(beta_field, (0.5, 1.0))

    def test_eta_increasing_flag(self, exp11_field, powerlaw_field, beta_field):
        assert exp11_field.eta_increasing
        assert powerlaw_field.eta_increasing
        assert beta_field.eta_increasing


class TestMasses:
    def test_exponential_totals(self, exp11_field):
        domain = whole_domain(exp11_field.instance)
        assert mass(exp11_field, Measure.MU, domain) == pytest.approx(5.0 * math.exp(-3.0), rel=1e-6)
        assert mass(exp11_field, Measure.NU, domain) == pytest.approx(1.0 + 5.0 * math.exp(-3.0), rel=1e-6)
        assert mass(exp11_field, Measure.MU, domain, include_atom=True) == pytest.approx(1.0 + 5.0 * math.exp(-3.0),
                                                                                        rel=1e-6)

    def test_signed_mass_of_domain(self, exp11_field):
        assert signed_mass(exp11_field, whole_domain(exp11_field.instance)) == pytest.approx(-1.0, abs=1e-7)

    def test_triangle_below_bundle_line(self, exp11_field):
        # nu({z1 + z2 <= p}) = 1 + (p^2 - p - 1) exp(-p)
        for p in (1.0, 2.0, 2.5):
            region = sum_half_plane(exp11_field.instance, p)
            expected = 1.0 + (p * p - p - 1.0) * math.exp(-p)
            assert mass(exp11_field, 'NU', region) == pytest.approx(expected, abs=1e-8)

    def test_mass_identity_exponential(self, exp11_field, exp21_field):
        assert check_mass_identity(exp11_field) == pytest.approx(1.0, abs=1e-6)
        assert check_mass_identity(exp21_field) == pytest.approx(1.0, abs=1e-6)

    @pytest.mark.slow
    def test_mass_identity_powerlaw(self, powerlaw_field):
        assert check_mass_identity(powerlaw_field) == pytest.approx(1.0, abs=1e-5)

    @pytest.mark.slow
    def test_mass_identity_beta(self, beta_field):
        assert check_mass_identity(beta_field) == pytest.approx(1.0, abs=1e-6)


class TestCellMasses:
    EDGES = np.array([0.0, 1.0, 2.0, math.inf])

    def test_cells_cover_domain(self, exp11_field):
        mu, nu = cell_masses(exp11_field, self.EDGES, self.EDGES, workers=1, progress=False)
        assert mu.shape == nu.shape == (3, 3)
        assert mu.sum() == pytest.approx(5.0 * math.exp(-3.0), abs=1e-8)
        assert nu.sum() == pytest.approx(1.0 + 5.0 * math.exp(-3.0), abs=1e-8)
        # the unit square lies inside Y
        assert mu[0, 0] == 0.0

    def test_workers_match_serial(self, exp11_field):
        serial = cell_masses(exp11_field, self.EDGES, self.EDGES, workers=1, progress=False)
        parallel = cell_masses(exp11_field, self.EDGES, self.EDGES, workers=2, progress=False)
        np.testing.assert_allclose(parallel[0], serial[0], atol=1e-14)
        np.testing.assert_allclose(parallel[1], serial[1], atol=1e-14)
