#!/usr/bin/env python3

import math
import unittest

import numpy as np

from compound import (
    MeasurementTimeline,
    RngStream,
    StochasticMatrix,
    TransitionKernel,
    enumerate_distribution,
    enumerate_paths,
    mc_estimate,
    path_probability,
    q_matrix,
    sample_outcomes,
    sample_timeline,
    timeline_factors,
    w_matrix,
)
from errors import ContractViolation, DomainError, InvariantError, SizeError
from linalg import HermitianMatrix, max_abs, random_hermitian
from model import (
    DecoherenceParams,
    DensityMatrix,
    GeneratorSpec,
    GraphKind,
    ScheduleParams,
    evolve,
    pure_evolve_fast,
    step_unitary,
)


class TestTimelines(unittest.TestCase):
    """Test geometric measurement timelines."""

    def test_full_measurement(self):
        """p = 1 measures at every step."""
        timeline = sample_timeline(1.0, 5, RngStream(1))
        self.assertEqual(timeline.within(), (1, 2, 3, 4, 5))
        self.assertEqual(timeline.count, 5)
        self.assertEqual(timeline.arrivals[-1], 6)

    def test_zero_horizon(self):
        """t = 0 has no arrivals inside the horizon."""
        timeline = sample_timeline(0.5, 0, RngStream(1))
        self.assertEqual(timeline.count, 0)
        self.assertEqual(timeline.within(), ())
        self.assertEqual(timeline.last_arrival, 0)

    def test_materialized_past_horizon(self):
        """The first arrival beyond t is kept for the terminal kernel."""
        timeline = sample_timeline(0.3, 100, RngStream(5))
        arrivals = timeline.arrivals
        self.assertLessEqual(timeline.last_arrival, 100)
        self.assertGreater(arrivals[-1], 100)
        self.assertEqual(len(arrivals), timeline.count + 1)

    def test_mean_gap(self):
        """Sampled gaps have mean 1/p within three standard errors."""
        timeline = sample_timeline(0.5, 200000, RngStream(2024))
        gaps = np.array(timeline.gaps, dtype=float)
        self.assertGreater(len(gaps), 90000)
        stderr = math.sqrt((1 - 0.5) / 0.5 ** 2 / len(gaps))
        self.assertLess(abs(gaps.mean() - 2.0), 3 * stderr)

    def test_zero_probability_rejected(self):
        """p = 0 never measures, so there is no timeline."""
        with self.assertRaises(DomainError):
            sample_timeline(0.0, 10, RngStream(1))

    def test_invalid_gap(self):
        """Gaps must be positive."""
        with self.assertRaises(InvariantError):
            MeasurementTimeline((1, 0, 2), 5)

    def test_reproducible(self):
        """Equal (seed, stream) gives equal timelines; other streams differ."""
        a = sample_timeline(0.2, 500, RngStream(99, 3))
        b = sample_timeline(0.2, 500, RngStream(99, 3))
        c = sample_timeline(0.2, 500, RngStream(99, 4))
        self.assertEqual(a.gaps, b.gaps)
        self.assertNotEqual(a.gaps, c.gaps)


class TestRngStream(unittest.TestCase):
    """Test random stream keying."""

    def test_seed_range(self):
        """Seeds must fit in 64 unsigned bits."""
        with self.assertRaises(DomainError):
            RngStream(-1)
        with self.assertRaises(DomainError):
            RngStream(2 ** 64)

    def test_spawn_key(self):
        """Children append their index to the parent key."""
        child = RngStream(7, 2).spawn(5)
        self.assertEqual(child.key, (2, 5))
        self.assertEqual(child.stream, 5)
        self.assertEqual(child.seed, 7)

    def test_uniform_open_at_zero(self):
        """Uniform draws lie in (0, 1]."""
        u = RngStream(3).uniform(10000)
        self.assertGreater(u.min(), 0.0)
        self.assertLessEqual(u.max(), 1.0)


class TestStochasticMatrix(unittest.TestCase):
    """Test stochastic matrix invariants."""

    def test_row_sums_enforced(self):
        """Rows must sum to one."""
        with self.assertRaises(InvariantError):
            StochasticMatrix(np.array([[0.5, 0.4], [0.5, 0.5]]))

    def test_negative_rejected(self):
        """Entries must be nonnegative."""
        with self.assertRaises(InvariantError):
            StochasticMatrix(np.array([[1.5, -0.5], [0.5, 0.5]]))

    def test_doubly_stochastic_flag(self):
        """Column sums decide double stochasticity."""
        self.assertTrue(StochasticMatrix(np.full((3, 3), 1 / 3)).is_doubly_stochastic())
        self.assertFalse(StochasticMatrix(np.array([[1.0, 0.0], [1.0, 0.0]])).is_doubly_stochastic())


class TestKernels(unittest.TestCase):
    """Test Q and W matrices."""

    def setUp(self):
        """Set up a random 3x3 generator."""
        self.rng = np.random.default_rng(17)
        self.g = random_hermitian(3, self.rng)

    def test_q_doubly_stochastic(self):
        """Q rows and columns sum to one."""
        for sigma, gap in ((0, 1), (10, 7), (1000, 40)):
            q = q_matrix(self.g, 0.7, sigma, gap)
            self.assertLessEqual(max_abs(q.row_sums() - 1.0), 1e-12)
            self.assertLessEqual(max_abs(q.column_sums() - 1.0), 1e-12)

    def test_q_fair_coin(self):
        """e^{iG} with G = (pi/4) sigma_x gives the uniform kernel."""
        g = HermitianMatrix(np.array([[0.0, math.pi / 4], [math.pi / 4, 0.0]]))
        np.testing.assert_allclose(q_matrix(g, 0.0, 0, 1).entries, np.full((2, 2), 0.5), atol=1e-15)

    def test_q_matches_unitary_entries(self):
        """Q(i, j) = |U(j, i)|^2 for one step."""
        u = step_unitary(self.g, 1.0, 4).entries
        q = q_matrix(self.g, 1.0, 3, 1)
        np.testing.assert_allclose(q.entries, (np.abs(u) ** 2).T, atol=1e-14)

    def test_q_tends_to_identity(self):
        """Tiny segment angles make Q close to the identity."""
        q = q_matrix(self.g, 2.0, 10 ** 7, 1)
        self.assertLess(max_abs(q.entries - np.eye(3)), 1e-12)

    def test_w_identity_at_horizon(self):
        """sigma_last = t gives exactly the identity."""
        np.testing.assert_array_equal(w_matrix(self.g, 1.0, 8, 8).entries, np.eye(3))

    def test_w_contract(self):
        """sigma_last beyond t violates the contract."""
        with self.assertRaises(ContractViolation):
            w_matrix(self.g, 1.0, 9, 8)

    def test_w_approaches_identity(self):
        """For a fixed gap, W tends to I as sigma grows (zeta = 1)."""
        g = GeneratorSpec(dim=2, coupling=1.0).generator
        gaps = [max_abs(w_matrix(g, 1.0, s, s + 5).entries - np.eye(2)) for s in (100, 1000, 10000)]
        self.assertGreater(gaps[0], gaps[1])
        self.assertGreater(gaps[1], gaps[2])

    def test_kernel_batch_matches_q(self):
        """TransitionKernel segments agree with q_matrix."""
        spec = GeneratorSpec(GraphKind.CUSTOM, 3, custom=self.g)
        kernel = TransitionKernel(spec, ScheduleParams(0.6))
        stack = kernel.batch([0, 5, 20], [3, 6, 50])
        for (a, b), q in zip(((0, 3), (5, 6), (20, 50)), stack):
            np.testing.assert_allclose(q, q_matrix(self.g, 0.6, a, b - a).entries, atol=1e-12)


class TestEnumeration(unittest.TestCase):
    """Test brute-force path enumeration."""

    def test_single_step(self):
        """t = 1 gives |U_1(j, i)|^2 for every p."""
        spec = GeneratorSpec(dim=2, coupling=1.0)
        u = step_unitary(spec.generator, 0.5, 1).entries
        for p in (0.0, 0.3, 1.0):
            value = enumerate_paths(1, 2, spec, ScheduleParams(0.5), DecoherenceParams(p), 1)
            self.assertAlmostEqual(value, abs(u[1, 0]) ** 2, places=14)

    def test_matches_evolution(self):
        """m = 2, lambda = 1, zeta = 0.5, p = 0.4, t = 6 agrees with the channel to 1e-10."""
        spec = GeneratorSpec(dim=2, coupling=1.0)
        sched = ScheduleParams(0.5)
        dec = DecoherenceParams(0.4)
        traj = evolve(DensityMatrix.basis(2, 1), spec, sched, dec, 6)
        for j in (1, 2):
            self.assertLess(abs(enumerate_paths(1, j, spec, sched, dec, 6) - traj.final()[j - 1]), 1e-10)

    def test_coherent_limit(self):
        """p = 0 keeps only the empty decoherence set."""
        spec = GeneratorSpec(dim=3, coupling=0.5)
        sched = ScheduleParams(1.0)
        exact = enumerate_distribution(1, spec, sched, DecoherenceParams(0.0), 5)
        np.testing.assert_allclose(exact, pure_evolve_fast(1, spec, sched, 5).final(), atol=1e-13)

    def test_size_limit(self):
        """Instances beyond t = 12 or m = 4 are refused."""
        with self.assertRaises(SizeError):
            enumerate_paths(1, 1, GeneratorSpec(), ScheduleParams(1.0), DecoherenceParams(0.5), 13)
        with self.assertRaises(SizeError):
            enumerate_paths(1, 1, GeneratorSpec(dim=5), ScheduleParams(1.0), DecoherenceParams(0.5), 2)


class TestMonteCarlo(unittest.TestCase):
    """Test the compound-chain Monte Carlo estimator."""

    def setUp(self):
        """Set up the two-state reference model."""
        self.spec = GeneratorSpec(dim=2, coupling=1.0)
        self.sched = ScheduleParams(1.0)

    def test_zero_horizon(self):
        """t = 0 is unit mass at the start state."""
        est, err = mc_estimate(2, self.spec, self.sched, DecoherenceParams(0.5), 0, 100, RngStream(1))
        np.testing.assert_array_equal(est, [0.0, 1.0])

    def test_deterministic_timeline(self):
        """p = 1, zeta = 0 has no randomness; the estimate is exact."""
        sched = ScheduleParams(0.0)
        dec = DecoherenceParams(1.0)
        est, err = mc_estimate(1, self.spec, sched, dec, 7, 500, RngStream(4))
        exact = evolve(DensityMatrix.basis(2, 1), self.spec, sched, dec, 7).final()
        np.testing.assert_allclose(est, exact, atol=1e-12)
        self.assertLess(err.max(), 1e-6)

    def test_against_evolution(self):
        """N = 1e5 estimate lies within 4 standard errors of the exact value."""
        dec = DecoherenceParams(0.3)
        est, err = mc_estimate(1, self.spec, self.sched, dec, 50, 100000, RngStream(12345))
        exact = evolve(DensityMatrix.basis(2, 1), self.spec, self.sched, dec, 50).final()
        for j in range(2):
            self.assertLessEqual(abs(est[j] - exact[j]), 4 * err[j])

    def test_reproducible_and_worker_independent(self):
        """Same seed gives identical output for any worker count."""
        dec = DecoherenceParams(0.4)
        n = 2 * 8192 + 100
        one = mc_estimate(1, self.spec, self.sched, dec, 30, n, RngStream(77))
        again = mc_estimate(1, self.spec, self.sched, dec, 30, n, RngStream(77))
        two = mc_estimate(1, self.spec, self.sched, dec, 30, n, RngStream(77), workers=2)
        np.testing.assert_array_equal(one.estimates, again.estimates)
        np.testing.assert_array_equal(one.estimates, two.estimates)
        np.testing.assert_array_equal(one.stderrs, two.stderrs)

    def test_csv_rows(self):
        """One row per state with the sample count and seed."""
        est = mc_estimate(1, self.spec, self.sched, DecoherenceParams(0.5), 10, 50, RngStream(9))
        rows = list(est.csv_rows())
        self.assertEqual(est.csv_header(), ["j", "estimate", "stderr", "n_samples", "seed"])
        self.assertEqual([r[0] for r in rows], [1, 2])
        self.assertEqual(rows[0][3:], [50, 9])

    def test_rejects_pure_case(self):
        """p = 0 has no timelines to sample."""
        with self.assertRaises(DomainError):
            mc_estimate(1, self.spec, self.sched, DecoherenceParams(0.0), 10, 10, RngStream(1))


class TestOutcomes(unittest.TestCase):
    """Test measured-site sampling."""

    def setUp(self):
        """Set up a three-state model."""
        self.spec = GeneratorSpec(dim=3, coupling=0.6)
        self.sched = ScheduleParams(0.5)

    def test_path_probability_chain_rule(self):
        """The path probability is the product of kernel entries along the path."""
        timeline = sample_timeline(0.4, 20, RngStream(8))
        outcomes = sample_outcomes(1, timeline, self.spec, self.sched, RngStream(8, 1))
        self.assertEqual(len(outcomes), timeline.count)
        qs, _ = timeline_factors(timeline, self.spec, self.sched)
        expected = 1.0
        prev = 0
        for q, x in zip(qs, outcomes):
            expected *= q.entries[prev, x - 1]
            prev = x - 1
        self.assertAlmostEqual(path_probability(1, outcomes, timeline, self.spec, self.sched), expected, places=15)

    def test_one_step_frequencies(self):
        """Empirical first-outcome frequencies match the kernel row."""
        timeline = MeasurementTimeline((3, 2), 4)
        row = q_matrix(self.spec.generator, 0.5, 0, 3).entries[0]
        rng = RngStream(31)
        n = 20000
        counts = np.zeros(3)
        for _ in range(n):
            counts[sample_outcomes(1, timeline, self.spec, self.sched, rng)[0] - 1] += 1
        freq = counts / n
        stderr = np.sqrt(row * (1 - row) / n)
        for j in range(3):
            self.assertLessEqual(abs(freq[j] - row[j]), 4 * stderr[j] + 1e-12)

    def test_timeline_factors(self):
        """One Q per arrival and an identity W when the last arrival is t."""
        timeline = MeasurementTimeline((2, 3, 4), 5)
        qs, w = timeline_factors(timeline, self.spec, self.sched)
        self.assertEqual(len(qs), 2)
        np.testing.assert_array_equal(w.entries, np.eye(3))

    def test_outcome_count_mismatch(self):
        """path_probability needs exactly n_t outcomes."""
        with self.assertRaises(ContractViolation):
            path_probability(1, [1], MeasurementTimeline((1, 1), 2), self.spec, self.sched)


class TestProductConvergence(unittest.TestCase):
    """The induced classical chain forgets its start on long timelines."""

    def setUp(self):
        """Set up a two-state kernel with zeta = 1/2."""
        self.kernel = TransitionKernel(GeneratorSpec(dim=2, coupling=1.0), ScheduleParams(0.5))

    def test_running_product_reaches_uniform(self):
        """Q_1 ... Q_n W is within 0.01 of 1/m after about 5000 measurements, for 20 seeds."""
        t = 10000
        for seed in range(20):
            timeline = sample_timeline(0.5, t, RngStream(seed))
            self.assertGreater(timeline.count, 4500, msg=f"seed={seed}")
            bounds = (0,) + timeline.within()
            stack = self.kernel.batch(bounds[:-1], bounds[1:])
            product = np.eye(2)
            for q in stack:
                product = product @ q
            product = product @ self.kernel.matrix(bounds[-1], t)
            self.assertLessEqual(max_abs(product - 0.5), 0.01, msg=f"seed={seed}")


if __name__ == '__main__':
    unittest.main()
