import numpy as np
import pytest

from backend.algebra import (
    basis_state,
    diagonal_mixture,
    random_density_matrix,
    syndrome_expectations,
)
from backend.filters import (
    FilterParams,
    SyndromeFilterState,
    advance_full_filter,
    advance_syndromes,
    full_filter_step,
    initial_syndrome_state,
    populations_from_syndromes,
    reduced_filter_dm_step,
    reduced_filter_step,
)
from backend.model import PlantParams, StepNoise, advance


def block_diagonal_state(rng, ops):
    """Half a random state with cross-subspace coherences removed, half I/8."""
    rho = random_density_matrix(rng)
    mask = sum(np.outer(m, m) for m in ops.subspace_membership)
    blocks = rho * mask
    return 0.5 * blocks / np.trace(blocks).real + 0.5 * np.eye(8) / 8


# ═══════════════════════════════════════════════════════════════════
# Syndrome Populations
# ═══════════════════════════════════════════════════════════════════


class TestPopulationsFromSyndromes:
    @pytest.mark.parametrize(
        "s, expected",
        [
            ((1, 1, 1), (1, 0, 0, 0)),
            ((1, -1, -1), (0, 1, 0, 0)),
            ((-1, 1, -1), (0, 0, 1, 0)),
            ((-1, -1, 1), (0, 0, 0, 1)),
            ((0, 0, 0), (0.25, 0.25, 0.25, 0.25)),
        ],
    )
    def test_known_values(self, s, expected):
        np.testing.assert_allclose(populations_from_syndromes(s), expected, atol=1e-15)

    def test_infeasible_syndromes_are_clipped_and_rescaled(self):
        np.testing.assert_allclose(populations_from_syndromes((1, 1, -1)), [1 / 3, 1 / 3, 1 / 3, 0.0])

    def test_batched(self):
        p = populations_from_syndromes(np.array([[1, 1, 1], [0, 0, 0]]))
        assert p.shape == (2, 4)

    def test_initial_state_from_density_matrix(self):
        assert initial_syndrome_state(basis_state("000")).s_hat == (1.0, 1.0, 1.0)
        assert initial_syndrome_state(basis_state("100")).s_hat == (1.0, -1.0, -1.0)


class TestFilterParams:
    def test_mismatch_scaling(self):
        filt = FilterParams.from_plant(PlantParams(), gamma_scale=0.8, Gamma_scale=0.9, eta_scale=0.9)
        np.testing.assert_allclose(filt.gamma, [0.0125] * 3)
        np.testing.assert_allclose(filt.Gamma, [0.9] * 3)
        np.testing.assert_allclose(filt.eta, [0.72] * 3)

    def test_validated_like_the_plant(self):
        with pytest.raises(ValueError, match="eta"):
            FilterParams.from_plant(PlantParams(eta=1.0), eta_scale=1.2)


# ═══════════════════════════════════════════════════════════════════
# Reduced Filter
# ═══════════════════════════════════════════════════════════════════


class TestReducedFilter:
    def test_code_syndromes_are_stationary_without_flips(self, rng):
        params = FilterParams(gamma=0.0)
        s = np.ones(3)
        for _ in range(100):
            s, clipped = advance_syndromes(s, rng.normal(0.0, 0.1, 3), np.zeros(3), params, 1e-3)
            assert not clipped
        np.testing.assert_array_equal(s, np.ones(3))

    def test_exponential_decay_without_readout(self):
        params = FilterParams(eta=0.0, gamma=[0.1, 0.2, 0.3])
        dt, steps = 1e-4, 10_000
        s = np.ones(3)
        for _ in range(steps):
            s, _ = advance_syndromes(s, np.zeros(3), np.zeros(3), params, dt)
        rates = 2.0 * np.array([0.2 + 0.3, 0.3 + 0.1, 0.1 + 0.2])
        np.testing.assert_allclose(s, (1.0 - rates * dt) ** steps, rtol=1e-10)
        np.testing.assert_allclose(s, np.exp(-rates * dt * steps), rtol=1e-4)

    def test_gains_add_to_flip_rates(self):
        params = FilterParams(eta=0.0, gamma=0.0)
        s, _ = advance_syndromes(np.ones(3), np.zeros(3), [0.5, 0.0, 0.0], params, 1e-3)
        np.testing.assert_allclose(s, [1.0, 1.0 - 2 * 0.25e-3, 1.0 - 2 * 0.25e-3])

    def test_matches_density_matrix_form(self, rng):
        n, dt = 20, 1e-4
        params = FilterParams(gamma=0.1)
        rho = np.stack([diagonal_mixture(w) for w in rng.dirichlet(np.full(4, 2.0), size=n) * 0.8 + 0.05])
        s = syndrome_expectations(rho)
        sigma = np.tile([0.5, 0.0, 1.0], (n, 1))
        for _ in range(1000):
            dY = rng.normal(0.0, np.sqrt(dt), (n, 3))
            rho = reduced_filter_dm_step(rho, dY, sigma, params, dt)
            s, _ = advance_syndromes(s, dY, sigma, params, dt)
        np.testing.assert_allclose(syndrome_expectations(rho), s, atol=1e-5)

    def test_coherences_do_not_affect_syndromes(self, rng, ops):
        params = FilterParams()
        rho = block_diagonal_state(rng, ops)
        coherent = rho.copy()
        coherent[0, 4] += 0.02
        coherent[4, 0] += 0.02
        s = syndrome_expectations(rho)
        for _ in range(200):
            dY = rng.normal(0.0, np.sqrt(1e-3), 3)
            rho = reduced_filter_dm_step(rho, dY, np.zeros(3), params, 1e-3)
            coherent = reduced_filter_dm_step(coherent, dY, np.zeros(3), params, 1e-3)
            s, _ = advance_syndromes(s, dY, np.zeros(3), params, 1e-3)
        np.testing.assert_allclose(syndrome_expectations(coherent), syndrome_expectations(rho), atol=1e-6)
        np.testing.assert_allclose(syndrome_expectations(rho), s, atol=1e-6)

    def test_clipping_is_counted(self, nominal_plant):
        state = SyndromeFilterState(s_hat=(0.9, 0.9, 0.9))
        state = reduced_filter_step(state, np.full(3, 5.0), np.zeros(3), nominal_plant, 1e-3)
        assert state.clip_events == 1
        assert max(state.s_hat) == 1.0

    def test_step_rejects_large_dt(self, nominal_plant):
        with pytest.raises(ValueError, match="dt"):
            reduced_filter_step(SyndromeFilterState(), np.zeros(3), np.zeros(3), nominal_plant, 0.1)


# ═══════════════════════════════════════════════════════════════════
# Full Filter
# ═══════════════════════════════════════════════════════════════════


class TestFullFilter:
    def test_tracks_the_plant_from_the_true_state(self, rng, nominal_plant):
        n, dt = 4, 1e-3
        rho = np.stack([random_density_matrix(rng) for _ in range(n)])
        estimate = rho.copy()
        sigma = np.tile([2.0, 0.0, 1.0], (n, 1))
        worst = 0.0
        for _ in range(1000):
            noise = StepNoise(dW=rng.normal(0.0, np.sqrt(dt), (n, 3)), dB=rng.normal(0.0, np.sqrt(dt), (n, 3)))
            rho, record, _ = advance(rho, nominal_plant, sigma, dt, noise)
            estimate, blown = advance_full_filter(estimate, record.dY, noise.dB, sigma, nominal_plant, dt)
            assert not blown.any()
            worst = max(worst, float(np.abs(estimate - rho).max()))
        assert worst <= 1e-6

    def test_code_state_is_stationary(self, rng):
        params = PlantParams(gamma=0.0)
        rho = basis_state("000")
        a = params.readout_amplitudes
        for _ in range(50):
            dY = 2.0 * a * 1e-3 + rng.normal(0.0, np.sqrt(1e-3), 3)
            rho = full_filter_step(rho, dY, np.zeros(3), np.zeros(3), params, 1e-3)
        np.testing.assert_allclose(rho, basis_state("000"), atol=1e-12)

    def test_zero_innovation_is_deterministic(self, rng, nominal_plant):
        rho = random_density_matrix(rng)
        dY = 2.0 * nominal_plant.readout_amplitudes * syndrome_expectations(rho) * 1e-3
        first = full_filter_step(rho, dY, np.zeros(3), np.zeros(3), nominal_plant, 1e-3)
        second = full_filter_step(rho, dY, np.zeros(3), np.zeros(3), nominal_plant, 1e-3)
        np.testing.assert_array_equal(first, second)

    def test_exponential_filter_reproduces_the_plant(self, rng, nominal_plant):
        n, dt = 4, 1e-3
        rho = np.stack([random_density_matrix(rng) for _ in range(n)])
        estimate = rho.copy()
        sigma = np.tile([2.0, 0.0, 1.0], (n, 1))
        for _ in range(500):
            noise = StepNoise(dW=rng.normal(0.0, np.sqrt(dt), (n, 3)), dB=rng.normal(0.0, np.sqrt(dt), (n, 3)))
            rho, record, _ = advance(rho, nominal_plant, sigma, dt, noise, integrator="exponential")
            estimate, blown = advance_full_filter(
                estimate, record.dY, noise.dB, sigma, nominal_plant, dt, integrator="exponential"
            )
            assert not blown.any()
        np.testing.assert_allclose(estimate, rho, atol=1e-12)

    def test_unknown_integrator(self, nominal_plant):
        with pytest.raises(ValueError, match="integrator"):
            zeros = np.zeros(3)
            full_filter_step(basis_state("000"), zeros, zeros, zeros, nominal_plant, 1e-3, integrator="rk4")
