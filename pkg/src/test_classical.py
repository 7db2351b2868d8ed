#!/usr/bin/env python3

import itertools
import unittest

import numpy as np

from classical import (
    ContractionCertificate,
    EquilibriumMatrix,
    analytic_delta,
    convergence_report,
    inhomogeneous_product,
    minorization_delta,
    semigroup_bounds_check,
)
from compound import RngStream, StochasticMatrix, sample_timeline, timeline_factors
from errors import ConfigurationError, ContractViolation, DomainError
from linalg import HermitianMatrix, max_abs, random_hermitian
from model import GeneratorSpec, GraphKind, ScheduleParams


def random_doubly_stochastic(m, rng, delta):
    """delta * Pi plus a random mixture of permutation matrices."""
    perms = [np.eye(m)[list(p)] for p in itertools.permutations(range(m))]
    weights = rng.dirichlet(np.ones(len(perms)))
    mixture = sum(w * p for w, p in zip(weights, perms))
    return StochasticMatrix(delta * np.full((m, m), 1.0 / m) + (1 - delta) * mixture)


class TestEquilibrium(unittest.TestCase):
    """Test the uniform equilibrium matrix."""

    def test_idempotent(self):
        """Pi Pi = Pi to rounding."""
        for m in (2, 3, 7):
            pi = EquilibriumMatrix(m).entries
            self.assertLessEqual(max_abs(pi @ pi - pi), 1e-15)

    def test_rows(self):
        """Every row is the uniform distribution."""
        np.testing.assert_array_equal(EquilibriumMatrix(4).entries.sum(axis=1), np.ones(4))


class TestMinorization(unittest.TestCase):
    """Test minorization constants."""

    def test_equal_to_pi(self):
        """P = Pi gives delta = 1."""
        pi = EquilibriumMatrix(2)
        self.assertEqual(minorization_delta(StochasticMatrix(pi.entries), pi), 1.0)

    def test_zero_entry(self):
        """Any zero entry gives delta = 0."""
        p = StochasticMatrix(np.array([[1.0, 0.0], [0.5, 0.5]]))
        self.assertEqual(minorization_delta(p, EquilibriumMatrix(2)), 0.0)

    def test_dimension_mismatch(self):
        """Dimensions must agree."""
        with self.assertRaises(ConfigurationError):
            minorization_delta(StochasticMatrix(np.eye(3)), EquilibriumMatrix(2))


class TestProducts(unittest.TestCase):
    """Test inhomogeneous products and their certificates."""

    def setUp(self):
        """Set up a reproducible generator."""
        self.rng = np.random.default_rng(101)

    def test_empty_product(self):
        """The empty product is the identity."""
        np.testing.assert_array_equal(inhomogeneous_product([], dim=3).entries, np.eye(3))
        with self.assertRaises(ConfigurationError):
            inhomogeneous_product([])

    def test_product_of_pi(self):
        """Products of Pi stay at Pi."""
        pi = EquilibriumMatrix(3)
        out = inhomogeneous_product([StochasticMatrix(pi.entries)] * 5)
        self.assertLessEqual(max_abs(out.entries - pi.entries), 1e-15)

    def test_mixed_dimensions(self):
        """Factors of different size are rejected."""
        with self.assertRaises(ConfigurationError):
            inhomogeneous_product([StochasticMatrix(np.eye(2)), StochasticMatrix(np.eye(3))])

    def test_contraction_bound(self):
        """200 factors with delta >= 0.1 converge within 0.9^200."""
        pi = EquilibriumMatrix(3)
        factors = [random_doubly_stochastic(3, self.rng, 0.1) for _ in range(200)]
        product = inhomogeneous_product(factors)
        self.assertLessEqual(max_abs(product.entries - pi.entries), 0.9 ** 200 + 1e-9)
        cert = convergence_report(factors, pi)
        self.assertTrue(np.all(cert.deltas >= 0.1 - 1e-12))
        self.assertTrue(cert.holds())

    def test_single_pi_factor(self):
        """One Pi factor: deviation 0 and bound 0."""
        pi = EquilibriumMatrix(2)
        cert = convergence_report([StochasticMatrix(pi.entries)], pi)
        self.assertEqual(cert.final_deviation, 0.0)
        self.assertEqual(cert.product_bound, 0.0)

    def test_vacuous_bound(self):
        """Permutations have delta 0; the bound is 1 and the deviation still reported."""
        pi = EquilibriumMatrix(2)
        swap = StochasticMatrix(np.array([[0.0, 1.0], [1.0, 0.0]]))
        cert = convergence_report([swap, swap, swap], pi)
        self.assertEqual(cert.product_bound, 1.0)
        self.assertEqual(cert.final_deviation, 0.5)
        self.assertTrue(cert.holds())

    def test_sampled_timeline(self):
        """Q sequences of a sampled timeline stay below the running bound."""
        spec = GeneratorSpec(dim=2, coupling=1.0)
        timeline = sample_timeline(0.5, 1000, RngStream(8))
        qs, _ = timeline_factors(timeline, spec, ScheduleParams(0.5))
        cert = convergence_report(qs, EquilibriumMatrix(2))
        self.assertTrue(cert.holds())
        self.assertTrue(np.all(np.diff(cert.running_bounds) <= 0))

    def test_certificate_csv(self):
        """Rows carry k, delta, alpha, running bound and deviation."""
        cert = ContractionCertificate(np.array([0.5, 0.2]), np.array([0.3, 0.1]))
        self.assertEqual(cert.csv_header(), ["k", "delta", "alpha", "running_bound", "running_deviation"])
        rows = list(cert.csv_rows())
        self.assertEqual(rows[0][0], 1)
        self.assertAlmostEqual(rows[1][3], 0.4)

    def test_certificate_csv_with_analytic(self):
        """Theoretical deltas add a trailing analytic_delta column."""
        pi = EquilibriumMatrix(2)
        spec = GeneratorSpec(dim=2, coupling=1.0)
        timeline = sample_timeline(0.5, 200, RngStream(3))
        qs, _ = timeline_factors(timeline, spec, ScheduleParams(0.5))
        analytic = [analytic_delta(2, spec.epsilon0, gap, sigma, 0.5)
                    for gap, sigma in zip(timeline.gaps, timeline.within())]
        cert = convergence_report(qs, pi, analytic)
        self.assertEqual(cert.csv_header()[-1], "analytic_delta")
        rows = list(cert.csv_rows())
        self.assertEqual(len(rows), len(qs))
        self.assertTrue(all(len(row) == 6 for row in rows))
        self.assertEqual([row[-1] for row in rows], analytic)

    def test_analytic_length_mismatch(self):
        """One analytic delta per factor is required."""
        pi = EquilibriumMatrix(2)
        with self.assertRaises(ContractViolation):
            convergence_report([StochasticMatrix(np.eye(2))] * 3, pi, [0.1, 0.2])


class TestAnalyticDelta(unittest.TestCase):
    """Test the theoretical minorization constant."""

    def test_formula(self):
        """m eps0^2 T^2 / (4 sigma^zeta)."""
        self.assertAlmostEqual(analytic_delta(2, 1.0, 2, 100, 1.0), 2 * 4 / 400)

    def test_capped(self):
        """Values above 1 are capped."""
        self.assertEqual(analytic_delta(5, 1.0, 10, 1, 1.0), 1.0)


class TestSemigroupBounds(unittest.TestCase):
    """Test entry bounds of e^{i theta G}."""

    def test_all_lambda(self):
        """lambda = 1, 2x2: theta0 = 1/16 and the bounds hold at 1/32."""
        g = GeneratorSpec(dim=2, coupling=1.0).generator
        report = semigroup_bounds_check(g, 1 / 32)
        self.assertAlmostEqual(report.theta0, 1 / 16)
        self.assertTrue(report.in_hypothesis)
        self.assertTrue(report.passed)

    def test_zero_angle(self):
        """theta = 0: diagonal 1, off-diagonal bounds collapse to 0."""
        report = semigroup_bounds_check(HermitianMatrix(np.ones((3, 3))), 0.0)
        self.assertTrue(report.passed)

    def test_cyclic_rejected(self):
        """A zero entry breaks the hypothesis."""
        g = GeneratorSpec(GraphKind.CYCLIC, 4, 1.0).generator
        with self.assertRaises(DomainError):
            semigroup_bounds_check(g, 0.01)

    def test_out_of_hypothesis(self):
        """theta above theta0 is reported but not asserted."""
        report = semigroup_bounds_check(GeneratorSpec(dim=2, coupling=1.0).generator, 0.5)
        self.assertFalse(report.in_hypothesis)
        self.assertFalse(report.asserted)

    def test_random_generators(self):
        """Random generators with entries at least 0.1 satisfy the bounds."""
        rng = np.random.default_rng(5)
        for _ in range(100):
            g = random_hermitian(int(rng.integers(2, 6)), rng, min_modulus=0.1)
            theta0 = semigroup_bounds_check(g, 0.0).theta0
            self.assertTrue(semigroup_bounds_check(g, rng.uniform(0, theta0)).passed)


if __name__ == '__main__':
    unittest.main()
