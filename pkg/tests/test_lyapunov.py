"""
Tests for the Lyapunov functions, the g-function minimization behind the
decay-rate estimate, and the Monte Carlo generator estimate.
"""

import numpy as np
import pytest

from backend.algebra import basis_state, build_operators, diagonal_mixture, random_density_matrix, syndrome_expectations
from backend.controller import ControllerParams, gain_levels
from backend.lyapunov import (
    RateEstimate,
    compare_g_conventions,
    g_from_populations,
    g_of,
    generator_bound,
    generator_check,
    heuristic_rate,
    minimize_g,
    rate_estimate,
    v_closed,
    v_closed_from_populations,
    v_open,
    v_open_from_populations,
)
from backend.model import PlantParams

HEURISTIC_NOMINAL = 0.011313708498984762
# s = 1, x = (0.95, 0.05, 0) is a corner of the feasible set at alpha = 0.95.
G_AT_CORNER = 0.0052797


@pytest.fixture(scope="module")
def nominal_estimate():
    return rate_estimate(ControllerParams(), PlantParams())


def measurement_generator(rho, plant, ops):
    """Exact A V_closed without flips or control: only the Ito correction of the readout remains."""
    diag = np.real(np.diagonal(rho))
    s = syndrome_expectations(rho, ops)
    flipped = ops.subspace_membership[1:]
    eta_gamma = np.asarray(plant.eta) * np.asarray(plant.Gamma)
    total = 0.0
    for j in range(3):
        weights = flipped[j] + flipped.sum(axis=0)
        f = weights @ diag
        variance = sum(
            4.0 * eta_gamma[k] * (np.sum(weights * diag * (ops.syndrome_signs[k] - s[k]))) ** 2 for k in range(3)
        )
        total -= variance / (8.0 * f**1.5)
    return total


# ═══════════════════════════════════════════════════════════════════
# Lyapunov Functions
# ═══════════════════════════════════════════════════════════════════


class TestLyapunovFunctions:
    def test_zero_on_the_code_space(self):
        assert v_open(basis_state("000")) == 0.0
        assert v_closed(basis_state("000")) == 0.0
        assert v_closed(basis_state("111")) == 0.0

    def test_single_flip(self):
        assert v_open(basis_state("100")) == pytest.approx(0.0, abs=1e-15)
        assert v_closed(basis_state("100")) == pytest.approx(np.sqrt(2.0) + 2.0)

    def test_maximally_mixed(self):
        assert v_open(np.eye(8) / 8) == pytest.approx(3.0)
        assert v_closed(np.eye(8) / 8) == pytest.approx(3.0)

    def test_open_form_is_sum_over_pairs(self, rng):
        p = rng.dirichlet(np.ones(4))
        pairs = sum(np.sqrt(p[k] * p[l]) for k in range(4) for l in range(4) if k != l)
        assert v_open_from_populations(p) == pytest.approx(pairs, rel=1e-12)

    def test_batched(self, rng):
        p = rng.dirichlet(np.ones(4), size=10)
        assert v_closed_from_populations(p).shape == (10,)
        assert np.all(v_closed_from_populations(p) > 0)


# ═══════════════════════════════════════════════════════════════════
# g-function
# ═══════════════════════════════════════════════════════════════════


class TestG:
    def test_cyclic_symmetry(self, rng):
        s = rng.random(50)
        x = rng.dirichlet(np.ones(3), size=50)
        np.testing.assert_allclose(g_of(s, x[:, 0], x[:, 1], x[:, 2]), g_of(s, x[:, 1], x[:, 2], x[:, 0]), rtol=1e-12)

    def test_symmetric_point(self):
        s = 0.3
        q = 1.0 - 4.0 * s / 3.0
        expected = 3.0 * ((2.0 / 3.0 * q) ** 2 + 2.0 * (1.0 / 3.0 + 2.0 / 3.0 * q) ** 2) / (4.0 / 3.0) ** 2
        assert g_of(s, 1 / 3, 1 / 3, 1 / 3) == pytest.approx(expected, rel=1e-12)

    def test_corner_value(self):
        assert g_of(1.0, 0.95, 0.05, 0.0) == pytest.approx(G_AT_CORNER, rel=1e-4)

    def test_vanishes_outside_the_feasible_set(self):
        assert g_of(1.0, 1.0, 0.0, 0.0) == pytest.approx(0.0, abs=1e-15)

    def test_limit_at_the_code_space(self):
        assert g_of(0.0, 1.0, 0.0, 0.0) == pytest.approx(6.0)
        assert g_from_populations([1.0 - 1e-9, 1e-9, 0.0, 0.0]) == pytest.approx(6.0, rel=1e-6)

    def test_undefined_on_the_code_space(self):
        assert np.isnan(g_from_populations([1.0, 0.0, 0.0, 0.0]))

    def test_population_form_matches_derived_convention(self, rng):
        gaps = compare_g_conventions(rng, n_states=100)
        assert gaps["derived"] <= 1e-10
        assert gaps["literal"] > 1e-3

    def test_unknown_convention(self):
        with pytest.raises(ValueError, match="convention"):
            g_of(0.5, 1.0, 0.0, 0.0, convention="other")

    def test_bound_is_negative_without_control(self, rng):
        p = rng.dirichlet(np.ones(4), size=20)
        assert np.all(generator_bound(p, np.zeros(3), 0.8) < 0)

    def test_bound_is_zero_on_the_code_space(self):
        assert generator_bound(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3), 0.8) == 0.0


# ═══════════════════════════════════════════════════════════════════
# Rate Estimate
# ═══════════════════════════════════════════════════════════════════


class TestRateEstimate:
    def test_heuristic_nominal(self):
        assert heuristic_rate([0.95] * 3, [0.8] * 3, 1.5) == pytest.approx(HEURISTIC_NOMINAL, abs=1e-12)

    def test_heuristic_takes_the_c_branch_for_small_c(self):
        assert heuristic_rate([0.95] * 3, [0.8, 0.5, 1.0], 1e-3) == pytest.approx(0.5e-3)

    def test_minimum_is_positive_and_below_a_feasible_point(self, nominal_estimate):
        assert 0.0 < nominal_estimate.g_min <= g_of(1.0, 0.95, 0.05, 0.0) + 1e-12

    def test_argmin_is_feasible(self, nominal_estimate):
        s, x1, x2, x3 = nominal_estimate.argmin
        assert 0.0 <= s <= 1.0
        assert min(x1, x2, x3) >= -1e-9
        assert x1 + x2 + x3 == pytest.approx(1.0, abs=1e-9)
        assert max(s * x1, s * x2, s * x3) <= 0.95 + 1e-9
        assert g_of(s, x1, x2, x3) == pytest.approx(nominal_estimate.g_min, abs=1e-12)

    def test_branches(self, nominal_estimate):
        scale = 4.0 / (3.0 * np.sqrt(2.0))
        assert nominal_estimate.c_branch == pytest.approx(1.2)
        assert nominal_estimate.g_branch == pytest.approx(0.8 * scale * nominal_estimate.g_min)
        assert nominal_estimate.r == min(nominal_estimate.c_branch, nominal_estimate.g_branch)
        assert nominal_estimate.heuristic_r == pytest.approx(HEURISTIC_NOMINAL, abs=1e-12)

    def test_small_c_selects_the_c_branch(self, nominal_estimate):
        c = nominal_estimate.g_branch / 0.8 / 2.0
        estimate = rate_estimate(ControllerParams(c=c), PlantParams())
        assert estimate.r == estimate.c_branch == pytest.approx(0.8 * c)

    def test_minimize_rejects_coarse_grids(self):
        with pytest.raises(ValueError, match="resolution"):
            minimize_g([0.95] * 3, resolution=1)

    def test_report_fields(self, nominal_estimate):
        report = nominal_estimate.to_dict()
        assert set(report) == {
            "r", "c_branch", "g_branch", "g_min", "heuristic_r", "argmin_s_x1_x2_x3", "grid_resolution", "convention",
        }
        assert report["convention"] == "derived"
        assert isinstance(nominal_estimate, RateEstimate)


# ═══════════════════════════════════════════════════════════════════
# Generator Estimate
# ═══════════════════════════════════════════════════════════════════


class TestGeneratorCheck:
    def test_code_space_is_an_equilibrium(self, rng):
        estimate, se = generator_check(basis_state("000"), np.zeros(3), PlantParams(gamma=0.0), 1e-5, 1000, rng=rng)
        assert estimate == 0.0
        assert se == 0.0

    def test_active_channel_drives_v_down(self, rng):
        plant = PlantParams(gamma=0.0)
        controller = ControllerParams.for_plant(plant)
        sigma = np.array([gain_levels(controller)[0], 0.0, 0.0])
        rho = diagonal_mixture([0.0, 1.0, 0.0, 0.0])
        estimate, _ = generator_check(rho, sigma, plant, 1e-5, 1000, rng=rng)
        assert estimate == pytest.approx(-4.0 * (2.0 + np.sqrt(2.0)), rel=1e-4)
        bound = -controller.c * 0.8 * float(v_closed(rho))
        assert estimate <= bound

    def test_matches_ito_correction_of_the_readout(self, rng):
        ops = build_operators()
        plant = PlantParams(gamma=0.0)
        for _ in range(5):
            rho = random_density_matrix(rng)
            estimate, se = generator_check(rho, np.zeros(3), plant, 1e-5, 20_000, rng=rng, ops=ops)
            assert se > 0
            assert abs(estimate - measurement_generator(rho, plant, ops)) <= 4 * se + 1e-6

    def test_single_pair_has_no_error_bar(self, rng):
        _, se = generator_check(random_density_matrix(rng), np.zeros(3), PlantParams(), 1e-5, 2, rng=rng)
        assert se == 0.0
