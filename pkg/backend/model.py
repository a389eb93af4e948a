# backend/model.py
"""
The measured plant: superoperators, the Ito increment of the stochastic
master equation and one-step integrators.

Two schemes share the same measurement record. "euler-maruyama" adds the
Ito increment and repairs the result. "exponential" applies the exact
update of the commuting syndrome measurement for the step's record, then
the flip channel and the control kick as positive maps, so positivity
holds before any repair and unit-efficiency measurement keeps pure states
pure.

The stepping kernel exploits the operator structure instead of dense
products: each syndrome S_k is a diagonal sign vector d_k and each X_j is
an index permutation, so

    D_S(rho)  = rho * (d d^T - 1)
    M_S(rho)  = rho * (d_i + d_j) - 2 <S> rho
    X rho X   = rho[perm][:, perm]

All stepping functions accept a leading batch axis on `rho` and on the
noise / gain arrays.
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np

import backend.config as config
from backend.algebra import OperatorSet, adjoint, build_operators, renormalize, repair, syndrome_expectations


def as_channel_vector(value, name):
    """Broadcasts a scalar or 3-sequence into a tuple of three floats."""
    try:
        array = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise ValueError(f"{name}: expected numbers, got {value!r}") from None
    if array.ndim == 0:
        array = np.full(3, float(array))
    if array.shape != (3,):
        raise ValueError(f"{name}: expected a scalar or 3 values, got {value!r}")
    if not np.all(np.isfinite(array)):
        raise ValueError(f"{name}: values must be finite, got {value!r}")
    return tuple(float(v) for v in array)


@dataclass(frozen=True)
class PlantParams:
    Gamma: tuple = (config.NOMINAL_MEASUREMENT_STRENGTH,) * 3
    eta: tuple = (config.NOMINAL_EFFICIENCY,) * 3
    gamma: tuple = (config.NOMINAL_BIT_FLIP_RATE,) * 3

    def __post_init__(self):
        for name in ("Gamma", "eta", "gamma"):
            object.__setattr__(self, name, as_channel_vector(getattr(self, name), name))
        if any(g <= 0 for g in self.Gamma):
            raise ValueError(f"Gamma: requires Gamma_k > 0, got {self.Gamma}")
        if any(not 0.0 <= e <= 1.0 for e in self.eta):
            raise ValueError(f"eta: requires 0 <= eta_k <= 1, got {self.eta}")
        if any(g < 0 for g in self.gamma):
            raise ValueError(f"gamma: requires gamma_j >= 0, got {self.gamma}")

    @property
    def readout_amplitudes(self):
        """sqrt(eta_k Gamma_k)."""
        return np.sqrt(np.asarray(self.eta) * np.asarray(self.Gamma))

    @property
    def max_rate(self):
        return max(max(self.Gamma), max(self.gamma))

    def to_dict(self):
        return {"Gamma": list(self.Gamma), "eta": list(self.eta), "gamma": list(self.gamma)}


@dataclass(frozen=True)
class StepNoise:
    dW: np.ndarray
    dB: np.ndarray


@dataclass(frozen=True)
class MeasurementRecord:
    dY: np.ndarray


def draw_noise(rng, dt, size=None):
    """Independent Normal(0, dt) increments for the records (dW) and the control (dB)."""
    shape = (3,) if size is None else (size, 3)
    scale = np.sqrt(dt)
    return StepNoise(dW=rng.normal(0.0, scale, shape), dB=rng.normal(0.0, scale, shape))


def default_dt(params: PlantParams):
    return config.DEFAULT_DT_FRACTION / max(params.Gamma)


def check_step_size(params: PlantParams, dt):
    if not dt > 0:
        raise ValueError(f"dt: requires dt > 0, got {dt}")
    if dt * params.max_rate > config.STABILITY_GUARD:
        raise ValueError(
            f"dt: requires dt * max(Gamma, gamma) <= {config.STABILITY_GUARD}, "
            f"got {dt} * {params.max_rate} = {dt * params.max_rate:.3g}"
        )


def dissipator(L, rho):
    """D_L(rho) = L rho L^+ - (L^+ L rho + rho L^+ L) / 2."""
    L_dag = adjoint(L)
    LdL = L_dag @ L
    return L @ rho @ L_dag - 0.5 * (LdL @ rho + rho @ LdL)


def innovation(L, rho):
    """M_L(rho) = L rho + rho L^+ - tr(rho (L + L^+)) rho."""
    L_dag = adjoint(L)
    weight = np.trace(rho @ (L + L_dag), axis1=-2, axis2=-1)
    return L @ rho + rho @ L_dag - np.asarray(weight)[..., None, None] * rho


def sme_increment(rho, params: PlantParams, dt, dW, sigma=None, dB=None, ops: Optional[OperatorSet] = None):
    """
    Ito increment d rho of the measured three-qubit model, before repair.

        sum_k Gamma_k D_Sk dt + sqrt(eta_k Gamma_k) M_Sk dW_k
      + sum_j (gamma_j + sigma_j^2) D_Xj dt - i sigma_j [X_j, rho] dB_j

    Args:
        rho: state(s), shape (..., 8, 8).
        params: rates used by the increment (plant or filter values).
        dt: step size.
        dW: driving increments of the syndrome channels, shape (..., 3).
            Filters pass their innovations dY - 2 sqrt(eta Gamma) <S> dt.
        sigma: feedback gains, shape (..., 3); None means no feedback.
        dB: control noise, shape (..., 3); None drops the commutator term
            while keeping the sigma^2 dissipation.

    Returns:
        The increment, same shape as `rho`.
    """
    ops = ops or build_operators()
    rho = np.asarray(rho, dtype=complex)
    signs = ops.syndrome_signs
    dW = np.asarray(dW, dtype=float)

    weights = np.tensordot(np.asarray(params.Gamma), ops.syndrome_outer - 1.0, axes=1)
    drho = rho * (weights * dt)

    coefficients = params.readout_amplitudes * dW
    expectations = syndrome_expectations(rho, ops)
    mixed = sum(coefficients[..., k, None] * signs[k] for k in range(3))
    shift = (coefficients * expectations).sum(axis=-1)
    drho = drho + rho * (mixed[..., :, None] + mixed[..., None, :]) - 2.0 * np.asarray(shift)[..., None, None] * rho

    flip_rates = np.asarray(params.gamma)
    if sigma is not None:
        sigma = np.asarray(sigma, dtype=float)
        flip_rates = flip_rates + sigma**2
    for j, perm in enumerate(ops.flip_permutations):
        rows = rho[..., perm, :]
        flipped = rows[..., :, perm]
        drho = drho + (flip_rates[..., j, None, None] * dt) * (flipped - rho)
        if sigma is not None and dB is not None:
            kick = sigma[..., j] * np.asarray(dB)[..., j]
            drho = drho - 1j * np.asarray(kick)[..., None, None] * (rows - rho[..., :, perm])
    return drho


def exponential_update(rho, params: PlantParams, dt, dY, sigma=None, dB=None, ops: Optional[OperatorSet] = None):
    """
    Unnormalized positive-map step driven by the record dY.

    The linear measurement equation is solved exactly over the step:

        rho_ij <- rho_ij exp(a_k (d_i + d_j) dY_k + (1 - eta_k) Gamma_k d_i d_j dt)

    summed over k in the exponent, a_k = sqrt(eta_k Gamma_k). Bit flips then
    mix rho with X_j rho X_j with probability (1 - exp(-2 r_j dt)) / 2, and
    the control applies exp(-i sigma_j dB_j X_j). With dB = None the control
    enters through r_j = gamma_j + sigma_j^2 instead of the kick.

    Returns:
        The updated state(s); the trace is not renormalized.
    """
    ops = ops or build_operators()
    rho = np.asarray(rho, dtype=complex)
    weights = params.readout_amplitudes * np.asarray(dY, dtype=float)
    v = weights @ ops.syndrome_signs
    dephasing = np.tensordot((1.0 - np.asarray(params.eta)) * np.asarray(params.Gamma) * dt, ops.syndrome_outer, axes=1)
    rho = rho * np.exp(v[..., :, None] + v[..., None, :] + dephasing)

    flip_rates = np.asarray(params.gamma, dtype=float)
    kicks = None
    if sigma is not None:
        sigma = np.asarray(sigma, dtype=float)
        if dB is None:
            flip_rates = flip_rates + sigma**2
        else:
            kicks = sigma * np.asarray(dB, dtype=float)
    flip_probability = 0.5 * (1.0 - np.exp(-2.0 * flip_rates * dt))
    for j, perm in enumerate(ops.flip_permutations):
        p = np.asarray(flip_probability[..., j])[..., None, None]
        rho = (1.0 - p) * rho + p * rho[..., perm, :][..., :, perm]
        if kicks is not None:
            c = np.cos(kicks[..., j])[..., None, None]
            s = np.sin(kicks[..., j])[..., None, None]
            rows = rho[..., perm, :]
            cols = rho[..., :, perm]
            rho = c * c * rho + s * s * rows[..., :, perm] - 1j * c * s * (rows - cols)
    return rho


def measurement_record(rho, params: PlantParams, dt, dW, ops: Optional[OperatorSet] = None):
    """dY_k = 2 sqrt(eta_k Gamma_k) <S_k> dt + dW_k with <S_k> taken before the step."""
    expectations = syndrome_expectations(rho, ops)
    return MeasurementRecord(dY=2.0 * params.readout_amplitudes * expectations * dt + np.asarray(dW))


def check_integrator(integrator):
    if integrator not in config.INTEGRATORS:
        raise ValueError(f"integrator: expected one of {', '.join(config.INTEGRATORS)}, got {integrator!r}")


def propagate(rho, params: PlantParams, dt, dW, dY, sigma=None, dB=None, ops=None, integrator=config.DEFAULT_INTEGRATOR):
    """
    Unrepaired state after one step of `integrator`.

    Euler-Maruyama is driven by dW (plant noise, or filter innovations);
    the exponential scheme by the record dY itself.
    """
    if integrator == "euler-maruyama":
        return rho + sme_increment(rho, params, dt, dW, sigma=sigma, dB=dB, ops=ops)
    if integrator == "exponential":
        return exponential_update(rho, params, dt, dY, sigma=sigma, dB=dB, ops=ops)
    check_integrator(integrator)


def advance(
    rho,
    params: PlantParams,
    sigma,
    dt,
    noise: StepNoise,
    ops: Optional[OperatorSet] = None,
    integrator=config.DEFAULT_INTEGRATOR,
):
    """
    Batched closed-loop step that flags blow-ups instead of raising.

    Returns:
        (next states, measurement record, blow-up mask)
    """
    ops = ops or build_operators()
    record = measurement_record(rho, params, dt, noise.dW, ops)
    updated = propagate(rho, params, dt, noise.dW, record.dY, sigma=sigma, dB=noise.dB, ops=ops, integrator=integrator)
    next_rho, blown = repair(updated)
    return next_rho, record, blown


def step_open_loop(
    rho,
    params: PlantParams,
    dt,
    noise: StepNoise,
    ops: Optional[OperatorSet] = None,
    integrator=config.DEFAULT_INTEGRATOR,
):
    check_step_size(params, dt)
    check_integrator(integrator)
    ops = ops or build_operators()
    record = measurement_record(rho, params, dt, noise.dW, ops)
    return renormalize(propagate(rho, params, dt, noise.dW, record.dY, ops=ops, integrator=integrator)), record


def step_closed_loop(
    rho,
    params: PlantParams,
    sigma,
    dt,
    noise: StepNoise,
    ops: Optional[OperatorSet] = None,
    integrator=config.DEFAULT_INTEGRATOR,
):
    check_step_size(params, dt)
    check_integrator(integrator)
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma < 0):
        raise ValueError(f"sigma: requires sigma_j >= 0, got {sigma.tolist()}")
    ops = ops or build_operators()
    record = measurement_record(rho, params, dt, noise.dW, ops)
    updated = propagate(rho, params, dt, noise.dW, record.dY, sigma=sigma, dB=noise.dB, ops=ops, integrator=integrator)
    return renormalize(updated), record
