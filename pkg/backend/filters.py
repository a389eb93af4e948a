# backend/filters.py
"""
State estimators driven by the syndrome records.

- full filter: the measured model re-run on the records, with the applied
  control noise dB known a posteriori.
- reduced filter: the estimate that does not see dB. Its syndrome
  expectations s_hat = tr(S_k rho_hat) obey a closed classical system,
  which is what `reduced_filter_step` integrates.
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np

import backend.config as config
from backend.algebra import OperatorSet, build_operators, renormalize, repair, syndrome_expectations
from backend.model import PlantParams, check_integrator, check_step_size, propagate, sme_increment


@dataclass(frozen=True)
class FilterParams(PlantParams):
    """Rates the filter assumes, possibly mismatched from the plant."""

    @classmethod
    def from_plant(cls, plant: PlantParams, gamma_scale=1.0, Gamma_scale=1.0, eta_scale=1.0):
        return cls(
            Gamma=np.asarray(plant.Gamma) * Gamma_scale,
            eta=np.asarray(plant.eta) * eta_scale,
            gamma=np.asarray(plant.gamma) * gamma_scale,
        )


@dataclass(frozen=True)
class SyndromeFilterState:
    s_hat: tuple = (1.0, 1.0, 1.0)
    clip_events: int = 0


def initial_syndrome_state(rho_hat0, ops: Optional[OperatorSet] = None):
    s = syndrome_expectations(rho_hat0, ops)
    return SyndromeFilterState(s_hat=tuple(float(v) for v in np.clip(s, -1.0, 1.0)))


def filter_innovations(estimate_expectations, dY, params: PlantParams, dt):
    """dY_k - 2 sqrt(eta_k Gamma_k) s_hat_k dt."""
    return np.asarray(dY) - 2.0 * params.readout_amplitudes * estimate_expectations * dt


def advance_full_filter(
    rho_hat,
    dY,
    dB,
    sigma,
    params: PlantParams,
    dt,
    ops: Optional[OperatorSet] = None,
    integrator=config.DEFAULT_INTEGRATOR,
):
    """Batched full-filter step. Returns (estimates, blow-up mask)."""
    ops = ops or build_operators()
    innovations = filter_innovations(syndrome_expectations(rho_hat, ops), dY, params, dt)
    return repair(propagate(rho_hat, params, dt, innovations, dY, sigma=sigma, dB=dB, ops=ops, integrator=integrator))


def full_filter_step(
    rho_hat,
    dY,
    dB,
    sigma,
    params: PlantParams,
    dt,
    ops: Optional[OperatorSet] = None,
    integrator=config.DEFAULT_INTEGRATOR,
):
    check_step_size(params, dt)
    check_integrator(integrator)
    ops = ops or build_operators()
    innovations = filter_innovations(syndrome_expectations(rho_hat, ops), dY, params, dt)
    return renormalize(propagate(rho_hat, params, dt, innovations, dY, sigma=sigma, dB=dB, ops=ops, integrator=integrator))


def reduced_filter_dm_step(rho_hat, dY, sigma, params: PlantParams, dt, ops: Optional[OperatorSet] = None):
    """
    Density-matrix form of the reduced filter: the control enters only
    through its averaged dissipation (gamma_j + sigma_j^2) D_Xj.
    """
    check_step_size(params, dt)
    ops = ops or build_operators()
    innovations = filter_innovations(syndrome_expectations(rho_hat, ops), dY, params, dt)
    drho = sme_increment(rho_hat, params, dt, innovations, sigma=sigma, dB=None, ops=ops)
    return renormalize(rho_hat + drho)


def advance_syndromes(s_hat, dY, sigma, params: PlantParams, dt):
    """
    Batched Euler step of the classical syndrome filter.

    For channel 1 (others by the cyclic shift 1 -> 2 -> 3 -> 1):

        ds1 = -2 (r2 + r3) s1 dt + (1 - s1^2) w1 + (s3 - s1 s2) w2 + (s2 - s1 s3) w3

    with r_j = gamma_j + sigma_j^2 and w_k = 2 a_k (dY_k - 2 a_k s_k dt),
    a_k = sqrt(eta_k Gamma_k).

    Returns:
        (clipped s_hat, boolean mask of entries whose step needed clipping)
    """
    s = np.asarray(s_hat, dtype=float)
    rates = np.asarray(params.gamma) + np.asarray(sigma, dtype=float) ** 2
    a = params.readout_amplitudes
    w = 2.0 * a * filter_innovations(s, dY, params, dt)

    s_next = np.roll(s, -1, axis=-1)
    s_after = np.roll(s, -2, axis=-1)
    w_next = np.roll(w, -1, axis=-1)
    w_after = np.roll(w, -2, axis=-1)
    drift = -2.0 * (np.roll(rates, -1, axis=-1) + np.roll(rates, -2, axis=-1)) * s * dt
    ds = drift + (1.0 - s**2) * w + (s_after - s * s_next) * w_next + (s_next - s * s_after) * w_after

    updated = s + ds
    clipped = np.clip(updated, -1.0, 1.0)
    return clipped, np.any(clipped != updated, axis=-1)


def reduced_filter_step(state: SyndromeFilterState, dY, sigma, params: PlantParams, dt):
    check_step_size(params, dt)
    s, clipped = advance_syndromes(state.s_hat, dY, sigma, params, dt)
    return SyndromeFilterState(
        s_hat=tuple(float(v) for v in s),
        clip_events=state.clip_events + int(clipped),
    )


def populations_from_syndromes(s_hat):
    """
    (pC, p1, p2, p3) from syndrome expectations, shape (..., 4).

    pC = (1 + s1 + s2 + s3) / 4 and p1 = (1 + s1 - s2 - s3) / 4, cyclic for
    p2, p3. Values are clipped to [0, 1] and rescaled to sum to 1.
    """
    s = np.asarray(s_hat, dtype=float)
    s1, s2, s3 = s[..., 0], s[..., 1], s[..., 2]
    p = np.stack(
        [
            1.0 + s1 + s2 + s3,
            1.0 + s1 - s2 - s3,
            1.0 - s1 + s2 - s3,
            1.0 - s1 - s2 + s3,
        ],
        axis=-1,
    ) / 4.0
    p = np.clip(p, 0.0, 1.0)
    return p / p.sum(axis=-1, keepdims=True)
