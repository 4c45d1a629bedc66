import math

import numpy as np
import pytest

from kabi.errors import ConfigurationError, IntegrationDivergedError
from kabi.oscillator import (
    ComplexNetwork,
    FixedFrequencies,
    GaussianFrequencies,
    MeanField,
    NetworkSpec,
    PairwiseUniform,
    PhaseState,
    SimConfig,
    coupling_matrix_from_params,
    critical_coupling,
    drift_complex,
    drift_meanfield,
    drift_pairwise,
    integrate,
    load_trajectory,
    order_parameter,
    params_from_coupling_matrix,
    save_trajectory,
    three_node_adjacency,
)


class TestDriftPairwise:
    def test_identical_phases_gives_omega(self):
        omega = np.array([0.3, -1.2, 2.0])
        out = drift_pairwise(np.full(3, 1.7), omega, kappa=4.0)
        np.testing.assert_array_equal(out, omega)

    def test_two_oscillator_hand_value(self):
        out = drift_pairwise(np.array([0.0, math.pi / 2]), np.zeros(2), kappa=2.0)
        np.testing.assert_allclose(out, [1.0, -1.0], atol=1e-15)

    def test_zero_coupling_gives_omega(self):
        rng = np.random.default_rng(0)
        omega = rng.normal(1, 0.5, 7)
        out = drift_pairwise(rng.normal(0, 2, 7), omega, kappa=0.0)
        np.testing.assert_array_equal(out, omega)

    def test_dimension_mismatch(self):
        with pytest.raises(ConfigurationError):
            drift_pairwise(np.zeros(3), np.zeros(4), kappa=1.0)


class TestOrderParameter:
    def test_full_synchrony(self):
        r, psi = order_parameter(np.full(5, 0.4))
        assert r == pytest.approx(1.0, abs=1e-12)
        assert psi == pytest.approx(0.4, abs=1e-12)

    def test_balanced_configuration(self):
        r, _ = order_parameter(np.array([0, math.pi / 2, math.pi, 3 * math.pi / 2]))
        assert r == pytest.approx(0.0, abs=1e-15)

    def test_two_phase_complex_mean(self):
        r, psi = order_parameter(np.array([0.0, math.pi / 2]))
        assert r == pytest.approx(math.sqrt(2) / 2, abs=1e-12)
        assert psi == pytest.approx(math.pi / 4, abs=1e-12)

    def test_accepts_phase_state(self):
        r, _ = order_parameter(PhaseState(np.zeros(3)))
        assert r == pytest.approx(1.0)

    def test_r_bounded(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            r, _ = order_parameter(rng.uniform(-10, 10, rng.integers(1, 30)))
            assert 0.0 <= r <= 1.0 + 1e-12


class TestDriftMeanfield:
    def test_matches_pairwise_randomized(self):
        rng = np.random.default_rng(7)
        for n in (2, 5, 20):
            for _ in range(200):
                phases = rng.uniform(-math.pi, math.pi, n)
                omega = rng.normal(1, 0.5, n)
                kappa = rng.uniform(0, 5)
                np.testing.assert_allclose(
                    drift_meanfield(phases, omega, kappa),
                    drift_pairwise(phases, omega, kappa), atol=1e-10)

    def test_synchronized_gives_omega(self):
        omega = np.array([1.0, 2.0])
        out = drift_meanfield(np.full(2, -0.3), omega, kappa=3.0)
        np.testing.assert_allclose(out, omega, atol=1e-14)

    def test_zero_coupling(self):
        omega = np.array([1.0, 2.0, 3.0])
        out = drift_meanfield(np.array([0.1, 0.2, 0.3]), omega, kappa=0.0)
        np.testing.assert_array_equal(out, omega)


class TestDriftComplex:
    def test_disconnected_network(self):
        spec = ComplexNetwork(np.zeros((3, 3)), np.zeros((3, 3)))
        omega = np.array([1.0, -1.0, 0.5])
        out = drift_complex(np.array([0.0, 1.0, 2.0]), omega, spec)
        np.testing.assert_array_equal(out, omega)

    def test_synchronized_three_node(self):
        spec = ComplexNetwork(three_node_adjacency(),
                              coupling_matrix_from_params(np.full(6, 0.3)))
        out = drift_complex(np.full(3, 0.9), np.zeros(3), spec)
        np.testing.assert_allclose(out, np.zeros(3), atol=1e-14)

    def test_three_node_hand_values(self):
        # frozen from an independent term-by-term evaluation of the triple sum
        spec = ComplexNetwork(
            three_node_adjacency(),
            coupling_matrix_from_params([0.6, 0.5, 0.4, 0.3, 0.2, 0.1]))
        out = drift_complex(np.array([0.0, 1.0, 2.0]), np.zeros(3), spec)
        np.testing.assert_allclose(
            out, [0.595812333567306, -0.0841470984807896, -0.4343007808075053],
            atol=1e-12)

    def test_uniform_all_to_all_matches_pairwise(self):
        rng = np.random.default_rng(3)
        n = 8
        kappa = 1.7
        adjacency = np.ones((n, n)) - np.eye(n)
        couplings = np.full((n, n), kappa / n)
        np.fill_diagonal(couplings, 0.0)
        spec = ComplexNetwork(adjacency, couplings)
        for _ in range(50):
            phases = rng.uniform(-3, 3, n)
            omega = rng.normal(0, 1, n)
            np.testing.assert_allclose(
                drift_complex(phases, omega, spec),
                drift_pairwise(phases, omega, kappa), atol=1e-10)

    def test_matrix_validation(self):
        with pytest.raises(ConfigurationError):
            ComplexNetwork(np.ones((3, 3)), np.zeros((3, 3)))  # nonzero diagonal
        with pytest.raises(ConfigurationError):
            ComplexNetwork(np.array([[0, 1], [0, 0]]), np.zeros((2, 2)))  # asymmetric


class TestGlobalPhaseShift:
    def test_shift_invariance(self):
        rng = np.random.default_rng(11)
        phases = rng.uniform(-2, 2, 10)
        omega = rng.normal(1, 0.5, 10)
        c = 1.234
        r0, psi0 = order_parameter(phases)
        r1, psi1 = order_parameter(phases + c)
        assert r1 == pytest.approx(r0, abs=1e-12)
        assert (psi1 - psi0 - c) % (2 * math.pi) == pytest.approx(0.0, abs=1e-9) or \
               (psi1 - psi0 - c) % (2 * math.pi) == pytest.approx(2 * math.pi, abs=1e-9)
        np.testing.assert_allclose(drift_pairwise(phases + c, omega, 2.0),
                                   drift_pairwise(phases, omega, 2.0), atol=1e-12)
        np.testing.assert_allclose(drift_meanfield(phases + c, omega, 2.0),
                                   drift_meanfield(phases, omega, 2.0), atol=1e-12)


class TestCriticalCoupling:
    def test_paper_value(self):
        assert critical_coupling(0.5) == pytest.approx(0.79788, abs=1e-4)

    def test_unit_sigma(self):
        assert critical_coupling(1.0) == pytest.approx(1.5957691216057308, rel=1e-12)

    def test_algebraic_identity(self):
        sigma = 0.73
        g0 = 1.0 / (math.sqrt(2 * math.pi) * sigma)
        assert critical_coupling(sigma) == pytest.approx(2.0 / (math.pi * g0), rel=1e-12)

    def test_domain_error(self):
        with pytest.raises(ConfigurationError):
            critical_coupling(0.0)
        with pytest.raises(ConfigurationError):
            critical_coupling(-1.0)


class TestIntegrate:
    def test_strong_coupling_synchronizes(self):
        network = NetworkSpec(100, MeanField(5.0))
        freq = GaussianFrequencies(1.0, 0.5)
        config = SimConfig(obs_noise_std=0.0, seed=2)
        traj = integrate(network, freq, config)
        r_final, _ = order_parameter(traj.observed_phases[-1])
        assert r_final >= 0.9

    def test_decoupled_linear_drift(self):
        omega = np.array([0.5, -0.2, 1.5])
        network = NetworkSpec(3, PairwiseUniform(0.0))
        config = SimConfig(obs_noise_std=0.0, n_steps=100, subsample=10, seed=5)
        traj = integrate(network, FixedFrequencies(omega), config)
        expected = traj.observed_phases[0] + traj.times[:, None] * omega[None, :]
        np.testing.assert_allclose(traj.observed_phases, expected, atol=1e-10)

    def test_seed_determinism(self):
        network = NetworkSpec(20, MeanField(2.0))
        freq = GaussianFrequencies(1.0, 0.5)
        config = SimConfig(seed=9)
        a = integrate(network, freq, config)
        b = integrate(network, freq, config)
        assert np.array_equal(a.observed_phases, b.observed_phases)
        assert a.config_hash == b.config_hash

    def test_row_count(self):
        network = NetworkSpec(5, MeanField(1.0))
        config = SimConfig(n_steps=1000, subsample=10, seed=1)
        traj = integrate(network, GaussianFrequencies(1.0, 0.5), config)
        assert traj.observed_phases.shape == (101, 5)

    def test_divergence_reports_step(self):
        # enormous dt and coupling overflow the Euler update to inf
        network = NetworkSpec(10, MeanField(1e300))
        config = SimConfig(dt=1e30, n_steps=10, subsample=1, obs_noise_std=0.0, seed=0)
        with pytest.raises(IntegrationDivergedError) as err:
            integrate(network, GaussianFrequencies(1.0, 0.5), config)
        assert err.value.step >= 1

    def test_meanfield_matches_pairwise_trajectory(self):
        freq = FixedFrequencies(np.linspace(0.5, 1.5, 10))
        config = SimConfig(n_steps=200, subsample=10, obs_noise_std=0.0, seed=4)
        a = integrate(NetworkSpec(10, MeanField(1.5)), freq, config)
        b = integrate(NetworkSpec(10, PairwiseUniform(1.5)), freq, config)
        np.testing.assert_allclose(a.observed_phases, b.observed_phases, atol=1e-8)


class TestCouplingMatrixPlacement:
    def test_round_trip(self):
        params = np.array([0.6, 0.5, 0.4, 0.3, 0.2, 0.1])
        np.testing.assert_array_equal(
            params_from_coupling_matrix(coupling_matrix_from_params(params)), params)

    def test_placement_rows(self):
        m = coupling_matrix_from_params([1, 2, 3, 4, 5, 6])
        np.testing.assert_array_equal(m, [[0, 1, 6], [2, 0, 3], [5, 4, 0]])


class TestTrajectoryIO:
    def test_round_trip(self, tmp_path):
        network = NetworkSpec(4, MeanField(1.0))
        freq = GaussianFrequencies(1.0, 0.5)
        config = SimConfig(n_steps=50, subsample=5, seed=3)
        traj = integrate(network, freq, config)
        path = tmp_path / "traj.csv"
        save_trajectory(traj, path, network, freq, config)
        loaded = load_trajectory(path)
        np.testing.assert_allclose(loaded.observed_phases, traj.observed_phases,
                                   atol=1e-12)
        assert loaded.config_hash == traj.config_hash
        np.testing.assert_array_equal(loaded.true_params, traj.true_params)


class TestSimConfigValidation:
    def test_subsample_must_divide(self):
        with pytest.raises(ConfigurationError):
            SimConfig(n_steps=100, subsample=7)

    def test_negative_noise(self):
        with pytest.raises(ConfigurationError):
            SimConfig(obs_noise_std=-0.1)
