# backend/lyapunov.py
"""
Lyapunov functions of the open and closed loop, the g-function of the
closed-loop decay estimate, and Monte Carlo estimates of the Markov
generator A V(rho) = E[dV | rho] / dt.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from statsmodels.stats.weightstats import DescrStatsW

import backend.config as config
from backend.algebra import build_operators, populations, random_density_matrix
from backend.model import PlantParams, sme_increment

G_CONVENTIONS = ("derived", "literal")
SQRT2 = np.sqrt(2.0)


# ==============================================================================
# === Lyapunov functions                 =======================================
# ==============================================================================
def v_open_from_populations(p):
    """sum over ordered pairs k != k' of sqrt(p_k p_k') = (sum_k sqrt(p_k))^2 - 1."""
    roots = np.sqrt(np.clip(p, 0.0, None)).sum(axis=-1)
    return np.clip(roots**2 - 1.0, 0.0, None)


def v_closed_from_populations(p):
    p = np.clip(np.asarray(p, dtype=float), 0.0, None)
    flipped = p[..., 1:]
    s = flipped.sum(axis=-1, keepdims=True)
    return np.sqrt(flipped + s).sum(axis=-1)


def v_open(rho, ops=None):
    return v_open_from_populations(populations(rho, ops))


def v_closed(rho, ops=None):
    return v_closed_from_populations(populations(rho, ops))


# ==============================================================================
# === g-function                         =======================================
# ==============================================================================
def _one_minus_f(s, x, convention):
    if convention == "derived":
        return 1.0 - s - s * x
    if convention == "literal":
        return s + s * x
    raise ValueError(f"convention: expected one of {G_CONVENTIONS}, got {convention!r}")


def g_of(s, x1, x2, x3, convention=config.G_CONVENTION):
    """
    g(s, x) on the compact set K, vectorized over its arguments.

    `convention` selects the reading of the (1 - f_j) factors: "derived"
    takes f_j = s (1 + x_j), "literal" takes f_j = 1 - s - s x_j.
    """
    s = np.asarray(s, dtype=float)
    x = [np.asarray(v, dtype=float) for v in (x1, x2, x3)]
    total = 0.0
    for j in range(3):
        xj, xn, xa = x[j], x[(j + 1) % 3], x[(j + 2) % 3]
        q = _one_minus_f(s, xj, convention)
        numerator = ((xn + xa) * q) ** 2 + (xj + (xj + xa) * q) ** 2 + (xj + (xj + xn) * q) ** 2
        total = total + numerator / (1.0 + xj) ** 2
    return total


def g_from_populations(p):
    """
    g written directly in the populations (pC, p1, p2, p3) with
    f_j = 2 p_j + p_j' + p_j''. Undefined (nan) on the code space.
    """
    p = np.asarray(p, dtype=float)
    flipped = p[..., 1:]
    s = flipped.sum(axis=-1)
    total = 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        for j in range(3):
            pj, pn, pa = flipped[..., j], flipped[..., (j + 1) % 3], flipped[..., (j + 2) % 3]
            f = pj + s
            q = 1.0 - f
            numerator = ((pn + pa) * q) ** 2 + (pj + (pj + pa) * q) ** 2 + (pj + (pj + pn) * q) ** 2
            total = total + numerator / f**2
    return total


def channel_gains_g(p):
    """Coefficients g_j of sigma_j^2 in the closed-loop generator bound, shape (..., 3)."""
    p = np.asarray(p, dtype=float)
    flipped = p[..., 1:]
    s = flipped.sum(axis=-1, keepdims=True)
    f = flipped + s
    out = []
    with np.errstate(divide="ignore", invalid="ignore"):
        for j in range(3):
            n, a = (j + 1) % 3, (j + 2) % 3
            pj, pn, pa = flipped[..., j], flipped[..., n], flipped[..., a]
            out.append(
                (1.0 - f[..., j]) / np.sqrt(f[..., j])
                + (1.0 - 2.0 * (pj + pn)) / (2.0 * np.sqrt(f[..., n]))
                + (1.0 - 2.0 * (pj + pa)) / (2.0 * np.sqrt(f[..., a]))
            )
    return np.stack(out, axis=-1)


def generator_bound(p, sigma, eta_gamma):
    """
    Right-hand side sum_j sigma_j^2 g_j - 4 eta Gamma / (3 sqrt 2) g V of the
    closed-loop generator inequality for equal channels.
    """
    sigma = np.asarray(sigma, dtype=float)
    v = v_closed_from_populations(p)
    control = np.where(sigma == 0.0, 0.0, sigma**2 * np.nan_to_num(channel_gains_g(p))).sum(axis=-1)
    decay = np.where(v == 0.0, 0.0, np.nan_to_num(g_from_populations(p)) * v)
    return control - 4.0 * eta_gamma / (3.0 * SQRT2) * decay


def compare_g_conventions(rng, n_states=100, ops=None):
    """
    Largest gap between g_from_populations and g_of under each convention
    on random full-rank states.

    Returns:
        {convention: max absolute difference}
    """
    ops = ops or build_operators()
    p = np.stack([populations(random_density_matrix(rng), ops) for _ in range(n_states)])
    s = p[:, 1:].sum(axis=-1)
    x = p[:, 1:] / s[:, None]
    reference = g_from_populations(p)
    return {
        convention: float(np.max(np.abs(g_of(s, x[:, 0], x[:, 1], x[:, 2], convention) - reference)))
        for convention in G_CONVENTIONS
    }


# ==============================================================================
# === Rate estimate                      =======================================
# ==============================================================================
@dataclass(frozen=True)
class RateEstimate:
    r: float
    c_branch: float
    g_branch: float
    g_min: float
    heuristic_r: float
    argmin: tuple = field(default=())
    grid_resolution: int = config.RATE_GRID_RESOLUTION
    convention: str = config.G_CONVENTION

    def to_dict(self):
        return {
            "r": self.r,
            "c_branch": self.c_branch,
            "g_branch": self.g_branch,
            "g_min": self.g_min,
            "heuristic_r": self.heuristic_r,
            "argmin_s_x1_x2_x3": list(self.argmin),
            "grid_resolution": self.grid_resolution,
            "convention": self.convention,
        }


def heuristic_rate(alpha, eta_gamma, c):
    """min(eta_j Gamma_j) * min(c, 4 sqrt 2 (1 - max alpha)^2)."""
    alpha_bar = float(np.max(alpha))
    return float(np.min(eta_gamma)) * min(float(c), 4.0 * SQRT2 * (1.0 - alpha_bar) ** 2)


def _simplex_grid(resolution):
    i, j = np.meshgrid(np.arange(resolution + 1), np.arange(resolution + 1), indexing="ij")
    keep = i + j <= resolution
    x1 = i[keep] / resolution
    x2 = j[keep] / resolution
    return x1, x2, np.clip(1.0 - x1 - x2, 0.0, None)


def minimize_g(alpha, resolution=config.RATE_GRID_RESOLUTION, convention=config.G_CONVENTION):
    """
    Minimum of g over K = {s in [0, 1], x on the simplex, s x_j <= alpha_j}.

    Dense grid search, then an SLSQP refinement from the best grid point.

    Returns:
        (minimum, (s, x1, x2, x3))
    """
    if resolution < 2:
        raise ValueError(f"resolution: requires at least 2 grid points per axis, got {resolution}")
    alpha = np.asarray(alpha, dtype=float)
    x1, x2, x3 = _simplex_grid(resolution)
    best_value, best_point = np.inf, None
    for s in np.linspace(0.0, 1.0, resolution + 1):
        feasible = (s * x1 <= alpha[0]) & (s * x2 <= alpha[1]) & (s * x3 <= alpha[2])
        if not feasible.any():
            continue
        values = g_of(s, x1[feasible], x2[feasible], x3[feasible], convention)
        k = int(np.argmin(values))
        if values[k] < best_value:
            best_value = float(values[k])
            best_point = (float(s), float(x1[feasible][k]), float(x2[feasible][k]), float(x3[feasible][k]))

    def objective(v):
        return float(g_of(v[0], v[1], v[2], 1.0 - v[1] - v[2], convention))

    constraints = [
        {"type": "ineq", "fun": lambda v: 1.0 - v[1] - v[2]},
        {"type": "ineq", "fun": lambda v: alpha[0] - v[0] * v[1]},
        {"type": "ineq", "fun": lambda v: alpha[1] - v[0] * v[2]},
        {"type": "ineq", "fun": lambda v: alpha[2] - v[0] * (1.0 - v[1] - v[2])},
    ]
    result = minimize(
        objective,
        x0=np.array(best_point[:3]),
        method="SLSQP",
        bounds=[(0.0, 1.0)] * 3,
        constraints=constraints,
        options={"ftol": 1e-14, "maxiter": 500},
    )
    s, r1, r2 = result.x
    r3 = 1.0 - r1 - r2
    feasible = (
        min(r1, r2, r3) >= -1e-9
        and 0.0 <= s <= 1.0
        and s * r1 <= alpha[0] + 1e-9
        and s * r2 <= alpha[1] + 1e-9
        and s * r3 <= alpha[2] + 1e-9
    )
    if feasible and result.fun < best_value:
        return float(result.fun), (float(s), float(r1), float(r2), float(r3))
    return best_value, best_point


def rate_estimate(controller, plant: PlantParams, resolution=config.RATE_GRID_RESOLUTION, convention=config.G_CONVENTION):
    eta_gamma = np.asarray(plant.eta) * np.asarray(plant.Gamma)
    scale = float(np.min(eta_gamma))
    g_min, argmin = minimize_g(controller.alpha, resolution, convention)
    c_branch = scale * controller.c
    g_branch = scale * 4.0 / (3.0 * SQRT2) * g_min
    return RateEstimate(
        r=min(c_branch, g_branch),
        c_branch=c_branch,
        g_branch=g_branch,
        g_min=g_min,
        heuristic_r=heuristic_rate(controller.alpha, eta_gamma, controller.c),
        argmin=argmin,
        grid_resolution=resolution,
        convention=convention,
    )


# ==============================================================================
# === Generator estimate                 =======================================
# ==============================================================================
def generator_check(
    rho,
    sigma,
    params: PlantParams,
    dt,
    n_samples,
    rng=None,
    lyapunov_function=v_closed_from_populations,
    chunk_size=10_000,
    ops=None,
):
    """
    Monte Carlo estimate of A V(rho) for one Euler-Maruyama step.

    Noise draws come in antithetic pairs (dW, dB) and (-dW, -dB); the mean
    of each pair is one sample. The increment is taken before repair.

    Returns:
        (estimate of A V, standard error)
    """
    ops = ops or build_operators()
    rng = rng or np.random.Generator(np.random.Philox(0))
    rho = np.asarray(rho, dtype=complex)
    sigma = np.asarray(sigma, dtype=float)
    base = float(lyapunov_function(populations(rho, ops)))
    n_pairs = max(int(n_samples) // 2, 1)

    samples = []
    remaining = n_pairs
    while remaining > 0:
        size = min(chunk_size, remaining)
        dW = rng.normal(0.0, np.sqrt(dt), (size, 3))
        dB = rng.normal(0.0, np.sqrt(dt), (size, 3))
        batch = np.broadcast_to(rho, (size, 8, 8))
        gains = np.broadcast_to(sigma, (size, 3))
        plus = batch + sme_increment(batch, params, dt, dW, sigma=gains, dB=dB, ops=ops)
        minus = batch + sme_increment(batch, params, dt, -dW, sigma=gains, dB=-dB, ops=ops)
        pair = 0.5 * (lyapunov_function(populations(plus, ops)) + lyapunov_function(populations(minus, ops)))
        samples.append((pair - base) / dt)
        remaining -= size

    stats = DescrStatsW(np.concatenate(samples))
    se = float(stats.std_mean) if n_pairs > 1 else 0.0
    return float(stats.mean), se
