# backend/controller.py
"""
Noise-assisted hysteresis feedback.

Channel j switches on when its flipped-subspace population reaches alpha_j
and off once it falls to beta_j; in between it keeps its previous state.
An active channel drives X_j with white noise of gain
sigma_j = sqrt(6 c eta_j Gamma_j / (2 alpha_j - 1)).
"""
from dataclasses import dataclass

import numpy as np

import backend.config as config
from backend.model import as_channel_vector


@dataclass(frozen=True)
class ControllerParams:
    alpha: tuple = (config.NOMINAL_ALPHA,) * 3
    beta: tuple = (config.NOMINAL_BETA,) * 3
    c: float = config.NOMINAL_C
    eta: tuple = (config.NOMINAL_EFFICIENCY,) * 3
    Gamma: tuple = (config.NOMINAL_MEASUREMENT_STRENGTH,) * 3

    def __post_init__(self):
        for name in ("alpha", "beta", "eta", "Gamma"):
            object.__setattr__(self, name, as_channel_vector(getattr(self, name), name))
        object.__setattr__(self, "c", float(self.c))
        for j, (a, b) in enumerate(zip(self.alpha, self.beta), start=1):
            if not 0.5 < a < 1.0:
                raise ValueError(f"alpha: requires 1/2 < alpha < 1, got alpha_{j} = {a}")
            if not 0.5 < b:
                raise ValueError(f"beta: requires beta > 1/2, got beta_{j} = {b}")
            if not b < a:
                raise ValueError(f"requires beta < alpha, got beta_{j} = {b} >= alpha_{j} = {a}")
        if not self.c > 0:
            raise ValueError(f"c: requires c > 0, got {self.c}")
        if any(not 0.0 <= e <= 1.0 for e in self.eta) or any(g <= 0 for g in self.Gamma):
            raise ValueError("controller gains require 0 <= eta_j <= 1 and Gamma_j > 0")

    @classmethod
    def for_plant(cls, plant, alpha=config.NOMINAL_ALPHA, beta=config.NOMINAL_BETA, c=config.NOMINAL_C):
        """Gain law designed from the plant's nominal eta and Gamma."""
        return cls(alpha=alpha, beta=beta, c=c, eta=plant.eta, Gamma=plant.Gamma)

    def to_dict(self):
        return {"alpha": list(self.alpha), "beta": list(self.beta), "c": self.c}


@dataclass(frozen=True)
class ControllerState:
    active: tuple = (False, False, False)
    sigma: tuple = (0.0, 0.0, 0.0)


def gain_levels(params: ControllerParams):
    """The 'on' gain of each channel."""
    alpha = np.asarray(params.alpha)
    return np.sqrt(6.0 * params.c * np.asarray(params.eta) * np.asarray(params.Gamma) / (2.0 * alpha - 1.0))


def initial_state():
    return ControllerState()


def update_arrays(active, p, params: ControllerParams):
    """
    Hysteresis rule on arrays of shape (..., 3).

    Args:
        active: previous on/off flags.
        p: flipped-subspace populations (p1, p2, p3), clipped to [0, 1].
        params: thresholds.

    Returns:
        The new flags.
    """
    p = np.clip(np.asarray(p, dtype=float), 0.0, 1.0)
    alpha = np.asarray(params.alpha)
    beta = np.asarray(params.beta)
    return np.where(p >= alpha, True, np.where(p <= beta, False, np.asarray(active, dtype=bool)))


def gains_for(active, params: ControllerParams):
    return np.where(active, gain_levels(params), 0.0)


def update(state: ControllerState, p, params: ControllerParams):
    active = update_arrays(state.active, p, params)
    sigma = gains_for(active, params)
    return ControllerState(active=tuple(bool(a) for a in active), sigma=tuple(float(s) for s in sigma))


def triggered_channels(p, params: ControllerParams):
    """Channels whose population reached alpha_j. At most one can be set while alpha_j > 1/2."""
    return np.asarray(p, dtype=float) >= np.asarray(params.alpha)


def hysteresis_violations(p_trace, active_trace, params: ControllerParams, initial_active=(False, False, False)):
    """
    Counts recorded switches that the hysteresis rule does not explain.

    Args:
        p_trace: populations (p1, p2, p3) fed to the controller, shape (T, 3).
        active_trace: flags after each update, shape (T, 3).
        params: thresholds.
        initial_active: flags before the first update.

    Returns:
        Number of (step, channel) entries where the recorded flag differs
        from the rule applied to the previous flag.
    """
    active_trace = np.asarray(active_trace, dtype=bool)
    previous = np.vstack([np.asarray(initial_active, dtype=bool)[None, :], active_trace[:-1]])
    expected = update_arrays(previous, p_trace, params)
    return int(np.count_nonzero(expected != active_trace))
