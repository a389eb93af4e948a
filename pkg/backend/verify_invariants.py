# backend/verify_invariants.py
"""
The `verify` suite: structural invariants, filter equivalence, rate
formulas and generator bounds, each reported as one pass/fail row.
"""
import numpy as np
import pandas as pd

import backend.config as config
from backend.algebra import (
    build_operators,
    diagonal_mixture,
    populations,
    purity,
    random_density_matrix,
    random_state_in_subspace,
    state_errors,
    syndrome_expectations,
)
from backend.controller import ControllerParams, gain_levels, hysteresis_violations, triggered_channels, update_arrays
from backend.experiments import (
    Estimator,
    ExperimentConfig,
    integrate_single_qubit_lindblad,
    run_ensemble,
    single_qubit_baseline,
)
from backend.filters import FilterParams, advance_syndromes, reduced_filter_dm_step
from backend.lyapunov import (
    compare_g_conventions,
    generator_check,
    heuristic_rate,
    rate_estimate,
    v_closed_from_populations,
)
from backend.model import PlantParams, StepNoise, advance, sme_increment

HEURISTIC_RATE_NOMINAL = 4.0 * np.sqrt(2.0) * 0.05**2 * 0.8


def check_operator_algebra(quick, rng):
    ops = build_operators()
    I8 = ops.I8
    errors = []
    for S in ops.S:
        errors.append(np.abs(S @ S - I8).max())
        errors.append(np.abs(S - S.conj().T).max())
        for T in ops.S:
            errors.append(np.abs(S @ T - T @ S).max())
    for X in ops.X:
        errors.append(np.abs(X @ X - I8).max())
    errors.append(np.abs(ops.projectors.sum(axis=0) - I8).max())
    for a, Pa in enumerate(ops.projectors):
        errors.append(abs(np.trace(Pa).real - 2.0))
        for b, Pb in enumerate(ops.projectors):
            errors.append(np.abs(Pa @ Pb - (Pa if a == b else 0)).max())
    for X, Pi in zip(ops.X, ops.projectors[1:]):
        errors.append(np.abs(X @ ops.PiC @ X - Pi).max())
    worst = float(max(errors))
    return worst <= 1e-14, f"max deviation {worst:.1e}"


def check_population_sums(quick, rng):
    n = 200 if quick else 1000
    p = populations(np.stack([random_density_matrix(rng) for _ in range(n)]))
    worst = float(np.abs(p.sum(axis=-1) - 1.0).max())
    return worst <= config.POPULATION_TOLERANCE, f"{n} random states, max |sum - 1| = {worst:.1e}"


def check_trace_before_repair(quick, rng):
    n = 200 if quick else 1000
    dt = 1e-4
    plant = PlantParams()
    rho = np.stack([random_density_matrix(rng) for _ in range(n)])
    sigma = rng.uniform(0.0, 3.0, (n, 3))
    dW = rng.normal(0.0, np.sqrt(dt), (n, 3))
    dB = rng.normal(0.0, np.sqrt(dt), (n, 3))
    drho = sme_increment(rho, plant, dt, dW, sigma=sigma, dB=dB)
    worst = float(np.abs(np.trace(drho, axis1=-2, axis2=-1)).max())
    return worst <= config.TRACE_TOLERANCE, f"max |tr(d rho)| = {worst:.1e} at dt = {dt:g}"


def _closed_loop_traces(quick, rng):
    """True-state closed loop from |100> at dt = 1e-4, recording states, estimates and flags."""
    n = 8 if quick else 32
    steps = 2000 if quick else 10000
    dt = 1e-4
    plant = PlantParams(gamma=0.05)
    controller = ControllerParams.for_plant(plant)
    on = gain_levels(controller)
    rho = np.repeat(diagonal_mixture([0.0, 1.0, 0.0, 0.0])[None], n, axis=0)
    active = np.zeros((n, 3), dtype=bool)
    p_trace, active_trace, sigma_trace = [], [], []
    worst = {"hermitian": 0.0, "trace": 0.0, "eigenvalue": 0.0, "purity": 0.0}
    for _ in range(steps):
        p = populations(rho)
        active = update_arrays(active, p[:, 1:], controller)
        sigma = np.where(active, on, 0.0)
        p_trace.append(p[:, 1:])
        active_trace.append(active)
        sigma_trace.append(sigma)
        noise = StepNoise(dW=rng.normal(0.0, np.sqrt(dt), (n, 3)), dB=rng.normal(0.0, np.sqrt(dt), (n, 3)))
        rho, _, _ = advance(rho, plant, sigma, dt, noise)
        hermitian, trace_error, lowest = state_errors(rho)
        worst["hermitian"] = max(worst["hermitian"], float(hermitian.max()))
        worst["trace"] = max(worst["trace"], float(trace_error.max()))
        worst["eigenvalue"] = min(worst["eigenvalue"], float(lowest.min()))
        worst["purity"] = max(worst["purity"], float(purity(rho).max()))
    return (
        np.stack(p_trace, axis=1),
        np.stack(active_trace, axis=1),
        np.stack(sigma_trace, axis=1),
        worst,
        controller,
    )


def check_states_after_repair(quick, rng):
    _, _, _, worst, _ = _closed_loop_traces(quick, rng)
    passed = (
        worst["hermitian"] <= config.HERMITIAN_TOLERANCE
        and worst["trace"] <= config.TRACE_TOLERANCE
        and worst["eigenvalue"] >= -config.PSD_TOLERANCE
        and worst["purity"] <= 1.0 + 1e-10
    )
    detail = (
        f"hermitian {worst['hermitian']:.1e}, trace {worst['trace']:.1e}, "
        f"lambda_min {worst['eigenvalue']:.1e}, max purity {worst['purity']:.12f}"
    )
    return passed, detail


def check_pure_state_preservation(quick, rng):
    """Unit efficiency, no bit flips: random pure states under kicks stay pure with the exponential scheme."""
    n = 4 if quick else 16
    steps = 1000 if quick else 10000
    dt = 1e-4
    plant = PlantParams(eta=1.0, gamma=0.0)
    rho = np.stack([random_density_matrix(rng, rank=1) for _ in range(n)])
    sigma = rng.uniform(0.0, 3.0, (n, 3))
    worst = 0.0
    for _ in range(steps):
        noise = StepNoise(dW=rng.normal(0.0, np.sqrt(dt), (n, 3)), dB=rng.normal(0.0, np.sqrt(dt), (n, 3)))
        rho, _, _ = advance(rho, plant, sigma, dt, noise, integrator="exponential")
        worst = max(worst, float(np.abs(purity(rho) - 1.0).max()))
    return worst <= 1e-6, f"{n} states, {steps} steps at dt = {dt:g}, max |tr rho^2 - 1| = {worst:.1e}"


def check_controller(quick, rng):
    p_trace, active_trace, sigma_trace, _, controller = _closed_loop_traces(quick, rng)
    on = gain_levels(controller)
    two_valued = bool(np.all((sigma_trace == 0.0) | (sigma_trace == on)))
    violations = sum(hysteresis_violations(p, a, controller) for p, a in zip(p_trace, active_trace))
    most_triggered = int(triggered_channels(p_trace, controller).sum(axis=-1).max())
    most_active = int(active_trace.sum(axis=-1).max())
    passed = two_valued and violations == 0 and most_triggered <= 1
    detail = (
        f"two-valued gains: {two_valued}, hysteresis violations: {violations}, "
        f"max triggered: {most_triggered}, max active: {most_active}"
    )
    return passed, detail


def check_filter_equivalence(quick, rng):
    n = 20
    steps = 1000
    dt = 1e-4
    params = FilterParams(gamma=0.1)
    weights = rng.dirichlet(np.full(4, 2.0), size=n) * 0.8 + 0.05
    rho = np.stack([diagonal_mixture(w) for w in weights])
    s_hat = syndrome_expectations(rho)
    sigma = np.tile([0.5, 0.0, 1.0], (n, 1))
    worst = 0.0
    for _ in range(steps):
        dY = rng.normal(0.0, np.sqrt(dt), (n, 3))
        rho = reduced_filter_dm_step(rho, dY, sigma, params, dt)
        s_hat, _ = advance_syndromes(s_hat, dY, sigma, params, dt)
        expected = syndrome_expectations(rho)
        worst = max(worst, float(np.abs(expected - s_hat).max()))
    return worst <= 1e-5, f"{n} states, {steps} steps, max |s_hat difference| = {worst:.1e}"


def check_clip_fraction(quick, rng, threads):
    cfg = ExperimentConfig(
        seed=int(rng.integers(2**32)),
        estimator=Estimator.REDUCED_FILTER,
        dt=1e-4,
        horizon=1.0 if quick else 8.0,
        n_traj=16 if quick else 100,
        record_stride=1000,
    )
    result = run_ensemble(cfg, threads=threads)
    return result.clip_fraction < 1e-3, f"clipping in {result.clip_fraction:.2e} of steps"


def check_rate_formula(quick, rng):
    controller = ControllerParams()
    plant = PlantParams(gamma=0.0)
    heuristic = heuristic_rate(controller.alpha, np.asarray(plant.eta) * np.asarray(plant.Gamma), controller.c)
    estimate = rate_estimate(controller, plant, resolution=config.RATE_GRID_RESOLUTION)
    passed = (
        abs(heuristic - HEURISTIC_RATE_NOMINAL) <= 1e-12
        and estimate.g_min > 0
        and estimate.r <= estimate.c_branch
    )
    detail = f"heuristic_r = {heuristic:.12f}, g_min = {estimate.g_min:.3e}, r = {estimate.r:.3e}"
    return passed, detail


def check_g_conventions(quick, rng):
    gaps = compare_g_conventions(rng, n_states=100)
    adopted = gaps[config.G_CONVENTION]
    return adopted <= 1e-10, ", ".join(f"{k}: {v:.1e}" for k, v in gaps.items())


def check_generator_equilibrium(quick, rng):
    plant = PlantParams(gamma=0.0)
    rho = random_state_in_subspace(rng, 0)
    estimate, se = generator_check(rho, np.zeros(3), plant, 1e-5, 10_000 if quick else 100_000, rng=rng)
    return abs(estimate) <= 3 * se + 1e-12, f"A V = {estimate:.2e} +- {se:.1e}"


def check_generator_in_q(quick, rng):
    n_states = 3 if quick else 20
    n_samples = 20_000 if quick else 100_000
    plant = PlantParams(gamma=0.0)
    controller = ControllerParams.for_plant(plant)
    on = gain_levels(controller)
    eta_gamma = plant.eta[0] * plant.Gamma[0]
    worst = -np.inf
    for i in range(n_states):
        j = i % 3 + 1
        rho = 0.96 * random_state_in_subspace(rng, j) + 0.04 * random_density_matrix(rng)
        sigma = np.zeros(3)
        sigma[j - 1] = on[j - 1]
        estimate, se = generator_check(rho, sigma, plant, 1e-5, n_samples, rng=rng)
        bound = -controller.c * eta_gamma * float(v_closed_from_populations(populations(rho)))
        worst = max(worst, estimate - bound - 3 * se)
    return worst <= 0.0, f"{n_states} states, max (A V - bound - 3 SE) = {worst:.3f}"


def check_baseline(quick, rng):
    times = np.linspace(0.0, config.NOMINAL_HORIZON, 65)
    gamma = config.NOMINAL_BIT_FLIP_RATE
    gap = float(np.abs(single_qubit_baseline(gamma, times) - integrate_single_qubit_lindblad(gamma, times)).max())
    value = float(single_qubit_baseline(gamma, [config.NOMINAL_HORIZON])[0])
    return gap <= 1e-6, f"baseline(64) = {value:.4f}, max gap to numerical solution {gap:.1e}"


def check_martingale(quick, rng, threads):
    cfg = ExperimentConfig(
        seed=int(rng.integers(2**32)),
        plant=PlantParams(gamma=0.0),
        estimator=Estimator.TRUE_STATE,
        control=False,
        dt=1e-3,
        horizon=2.0 if quick else 10.0,
        n_traj=200 if quick else 1000,
        record_stride=500,
        initial_state=(0.4, 0.3, 0.2, 0.1),
    )
    result = run_ensemble(cfg, threads=threads)
    worst = 0.0
    for k, label in enumerate(("p_C", "p_1", "p_2", "p_3")):
        drift = np.abs(result.means[label] - cfg.initial_state[k])
        allowed = 3 * result.standard_errors[label] + 1e-12
        worst = max(worst, float((drift / allowed).max()))
    return worst <= 1.0, f"max |mean p_k(t) - p_k(0)| = {worst * 3:.2f} SE"


CHECKS = [
    ("operator algebra", check_operator_algebra),
    ("populations sum to one", check_population_sums),
    ("trace preserved before repair", check_trace_before_repair),
    ("states valid after repair", check_states_after_repair),
    ("pure states stay pure", check_pure_state_preservation),
    ("controller gains and hysteresis", check_controller),
    ("reduced filter equivalence", check_filter_equivalence),
    ("rate formula spot values", check_rate_formula),
    ("g convention cross-check", check_g_conventions),
    ("generator on the code space", check_generator_equilibrium),
    ("generator bound on Q", check_generator_in_q),
    ("single-qubit baseline", check_baseline),
]
ENSEMBLE_CHECKS = [
    ("reduced filter clipping", check_clip_fraction),
    ("population martingale", check_martingale),
]


def run_suite(quick=True, threads=1, seed=0):
    """
    Runs every check and collects the outcome table.

    Returns:
        DataFrame with columns `check`, `passed` and `detail`.
    """
    rows = []
    for name, check in CHECKS + ENSEMBLE_CHECKS:
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(len(rows),))))
        try:
            if (name, check) in ENSEMBLE_CHECKS:
                passed, detail = check(quick, rng, threads)
            else:
                passed, detail = check(quick, rng)
        except Exception as e:
            passed, detail = False, f"Error: {e}"
        rows.append({"check": name, "passed": bool(passed), "detail": detail})
    return pd.DataFrame(rows)
