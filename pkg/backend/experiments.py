# backend/experiments.py
"""
Monte Carlo ensemble harness for the closed loop.

Trajectories are advanced in fixed batches of `batch_size`, one vectorized
call per time step. Every trajectory owns a counter-based random stream
derived from (seed, trajectory index), so results depend on neither the
batch a trajectory lands in nor the number of worker processes.
"""
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from functools import partial
from typing import Optional

import numpy as np
import pandas as pd
from multiprocess import Pool
from scipy.integrate import solve_ivp
from statsmodels.stats.weightstats import DescrStatsW

import backend.config as config
from backend.algebra import (
    IntegratorBlowupError,
    basis_state,
    build_operators,
    diagonal_mixture,
    populations,
    syndrome_expectations,
)
from backend.controller import ControllerParams, gain_levels, update_arrays
from backend.filters import FilterParams, advance_full_filter, advance_syndromes, populations_from_syndromes
from backend.lyapunov import v_closed_from_populations, v_open_from_populations
from backend.model import PlantParams, StepNoise, advance, as_channel_vector, check_integrator, check_step_size, default_dt
from backend.notes import log_note

METRICS = ("code_overlap", "fidelity", "correctable_fidelity", "p_C", "p_1", "p_2", "p_3", "v_open", "v_closed")
PROBABILITY_METRICS = METRICS[:7]
LOGICAL_LABELS = {"0": "000", "1": "111"}


class ConfigError(ValueError):
    pass


class EnsembleAbortedError(RuntimeError):
    pass


class Estimator(str, Enum):
    TRUE_STATE = "true-state"
    FULL_FILTER = "full-filter"
    REDUCED_FILTER = "reduced-filter"


def resolve_state(value, key):
    """Turns a basis label or a population 4-vector into an 8x8 density matrix."""
    try:
        if isinstance(value, str):
            return basis_state(value)
        return diagonal_mixture(value)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{key}: {e}") from None


def _normalize_state(value):
    return value if isinstance(value, str) else tuple(float(v) for v in value)


# ==============================================================================
# === Configuration                      =======================================
# ==============================================================================
@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    plant: PlantParams = field(default_factory=PlantParams)
    filter: Optional[FilterParams] = None
    controller: Optional[ControllerParams] = None
    estimator: Estimator = Estimator.REDUCED_FILTER
    dt: Optional[float] = None
    horizon: float = config.NOMINAL_HORIZON
    n_traj: int = config.NOMINAL_N_TRAJ
    latency: float = 0.0
    bias: tuple = (0.0, 0.0, 0.0)
    record_stride: int = config.DEFAULT_RECORD_STRIDE
    initial_state: object = "000"
    filter_initial_state: object = "000"
    control: bool = True
    batch_size: int = config.DEFAULT_BATCH_SIZE
    logical: str = "0"
    integrator: str = config.DEFAULT_INTEGRATOR

    def __post_init__(self):
        def put(name, value):
            object.__setattr__(self, name, value)

        if isinstance(self.seed, bool) or not isinstance(self.seed, (int, np.integer)) or not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed: requires an integer in [0, 2^64), got {self.seed!r}")
        put("seed", int(self.seed))
        if self.filter is None:
            put("filter", FilterParams.from_plant(self.plant))
        if self.controller is None:
            put("controller", ControllerParams.for_plant(self.plant))
        try:
            put("estimator", Estimator(self.estimator))
        except ValueError:
            choices = ", ".join(e.value for e in Estimator)
            raise ConfigError(f"estimator: expected one of {choices}, got {self.estimator!r}") from None

        if self.dt is None:
            put("dt", default_dt(self.plant))
        put("dt", float(self.dt))
        for section, params in (("plant", self.plant), ("filter", self.filter)):
            try:
                check_step_size(params, self.dt)
            except ValueError as e:
                raise ConfigError(f"{e} ({section} rates)") from None

        if not self.horizon > 0:
            raise ConfigError(f"horizon: requires horizon > 0, got {self.horizon}")
        put("horizon", float(self.horizon))
        if self.horizon / self.dt > config.MAX_STEPS:
            raise ConfigError(f"horizon: requires horizon / dt <= {config.MAX_STEPS:.0e}, got {self.horizon / self.dt:.3g}")
        for name in ("n_traj", "record_stride", "batch_size"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < 1:
                raise ConfigError(f"{name}: requires an integer >= 1, got {value!r}")
            put(name, int(value))
        if not self.latency >= 0:
            raise ConfigError(f"latency: requires latency >= 0, got {self.latency}")
        put("latency", float(self.latency))
        try:
            put("bias", as_channel_vector(self.bias, "bias"))
        except ValueError as e:
            raise ConfigError(str(e)) from None
        for name in ("initial_state", "filter_initial_state"):
            resolve_state(getattr(self, name), name)
            put(name, _normalize_state(getattr(self, name)))
        if not isinstance(self.control, bool):
            raise ConfigError(f"control: requires true or false, got {self.control!r}")
        put("logical", str(self.logical))
        if self.logical not in LOGICAL_LABELS:
            raise ConfigError(f"logical: expected '0' or '1', got {self.logical!r}")
        try:
            check_integrator(self.integrator)
        except ValueError as e:
            raise ConfigError(str(e)) from None

    @property
    def n_steps(self):
        return int(round(self.horizon / self.dt))

    @property
    def latency_steps(self):
        return int(round(self.latency / self.dt))

    @property
    def latency_rounding(self):
        """Difference between the applied and the requested latency."""
        return self.latency_steps * self.dt - self.latency

    @property
    def record_steps(self):
        steps = list(range(0, self.n_steps + 1, self.record_stride))
        if steps[-1] != self.n_steps:
            steps.append(self.n_steps)
        return np.asarray(steps)

    @property
    def times(self):
        return self.record_steps * self.dt

    def initial_rho(self):
        return resolve_state(self.initial_state, "initial_state")

    def filter_initial_rho(self):
        return resolve_state(self.filter_initial_state, "filter_initial_state")

    def to_dict(self):
        def state(value):
            return value if isinstance(value, str) else list(value)

        return {
            "seed": self.seed,
            "plant": self.plant.to_dict(),
            "filter": self.filter.to_dict(),
            "controller": self.controller.to_dict(),
            "estimator": self.estimator.value,
            "dt": self.dt,
            "horizon": self.horizon,
            "n_traj": self.n_traj,
            "latency": self.latency,
            "bias": list(self.bias),
            "record_stride": self.record_stride,
            "initial_state": state(self.initial_state),
            "filter_initial_state": state(self.filter_initial_state),
            "control": self.control,
            "batch_size": self.batch_size,
            "logical": self.logical,
            "integrator": self.integrator,
        }

    @classmethod
    def from_dict(cls, doc):
        """Builds a validated configuration; unknown keys and a missing seed are errors."""
        if not isinstance(doc, dict):
            raise ConfigError(f"configuration must be a JSON object, got {type(doc).__name__}")
        allowed = {f for f in cls.__dataclass_fields__}
        unknown = sorted(set(doc) - allowed)
        if unknown:
            raise ConfigError(f"{unknown[0]}: unknown configuration key (allowed: {', '.join(sorted(allowed))})")
        if "seed" not in doc:
            raise ConfigError("seed: missing; an explicit seed is required for reproducible runs")

        values = dict(doc)
        plant = _section(PlantParams, "plant", values.get("plant", {}), ("Gamma", "eta", "gamma"))
        values["plant"] = plant
        if "filter" in values:
            values["filter"] = _section(FilterParams, "filter", values["filter"], ("Gamma", "eta", "gamma"))
        controller_doc = values.get("controller", {})
        _check_keys("controller", controller_doc, ("alpha", "beta", "c"))
        try:
            values["controller"] = ControllerParams.for_plant(plant, **controller_doc)
        except ValueError as e:
            raise ConfigError(f"controller: {e}") from None
        return cls(**values)


def _check_keys(section, doc, allowed):
    if not isinstance(doc, dict):
        raise ConfigError(f"{section}: expected an object, got {doc!r}")
    unknown = sorted(set(doc) - set(allowed))
    if unknown:
        raise ConfigError(f"{section}.{unknown[0]}: unknown configuration key (allowed: {', '.join(allowed)})")


def _section(kind, section, doc, allowed):
    _check_keys(section, doc, allowed)
    try:
        return kind(**doc)
    except ValueError as e:
        raise ConfigError(f"{section}.{e}") from None


# ==============================================================================
# === Observables                        =======================================
# ==============================================================================
def correctable_fidelity(rho, reference=None, ops=None):
    """
    Overlap with `reference` after ideal majority-vote recovery
    R(rho) = PiC rho PiC + sum_j X_j Pi_j rho Pi_j X_j.

    `reference` defaults to |000><000|.
    """
    ops = ops or build_operators()
    reference = basis_state("000") if reference is None else np.asarray(reference)
    recovered = ops.PiC @ rho @ ops.PiC
    for X, Pi in zip(ops.X, ops.projectors[1:]):
        recovered = recovered + X @ Pi @ rho @ Pi @ X
    return np.real(np.trace(reference @ recovered, axis1=-2, axis2=-1))


def single_qubit_baseline(gamma, times):
    """Fidelity (1 + exp(-2 gamma t)) / 2 of one qubit under bit flips at rate gamma."""
    if gamma < 0:
        raise ValueError(f"gamma: requires gamma >= 0, got {gamma}")
    return 0.5 * (1.0 + np.exp(-2.0 * gamma * np.asarray(times, dtype=float)))


def integrate_single_qubit_lindblad(gamma, times):
    """<0|rho(t)|0> for d rho = gamma (X rho X - rho) dt from |0><0|, by numerical integration."""
    times = np.asarray(times, dtype=float)
    X = np.array([[0, 1], [1, 0]], dtype=complex)

    def rhs(_, y):
        rho = (y[:4] + 1j * y[4:]).reshape(2, 2)
        d = gamma * (X @ rho @ X - rho)
        return np.concatenate([d.real.ravel(), d.imag.ravel()])

    y0 = np.array([1, 0, 0, 0, 0, 0, 0, 0], dtype=float)
    solution = solve_ivp(rhs, (0.0, float(times.max())), y0, t_eval=times, rtol=1e-10, atol=1e-12)
    return solution.y[0]


def trajectory_rng(seed, index):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(int(index),))))


# ==============================================================================
# === Simulation                         =======================================
# ==============================================================================
@dataclass
class BatchSamples:
    indices: np.ndarray
    samples: dict
    aborted: np.ndarray
    clip_counts: np.ndarray


def _store_metrics(samples, row, rho, reference, logical_index, ops):
    p = populations(rho, ops)
    samples["code_overlap"][row] = p[:, 0]
    samples["fidelity"][row] = np.real(rho[:, logical_index, logical_index])
    samples["correctable_fidelity"][row] = correctable_fidelity(rho, reference, ops)
    for k, label in enumerate(("p_C", "p_1", "p_2", "p_3")):
        samples[label][row] = p[:, k]
    samples["v_open"][row] = v_open_from_populations(p)
    samples["v_closed"][row] = v_closed_from_populations(p)


def simulate_batch(cfg: ExperimentConfig, indices):
    """Runs the trajectories `indices` side by side and keeps metrics every record_stride steps."""
    ops = build_operators()
    indices = np.asarray(indices, dtype=int)
    n = len(indices)
    dt = cfg.dt
    rngs = [trajectory_rng(cfg.seed, i) for i in indices]

    rho = np.repeat(cfg.initial_rho()[None], n, axis=0)
    rho_hat = s_hat = None
    if cfg.estimator is Estimator.FULL_FILTER:
        rho_hat = np.repeat(cfg.filter_initial_rho()[None], n, axis=0)
    elif cfg.estimator is Estimator.REDUCED_FILTER:
        s_hat = np.repeat(syndrome_expectations(cfg.filter_initial_rho(), ops)[None], n, axis=0)

    on_gains = gain_levels(cfg.controller) if cfg.control else np.zeros(3)
    active = np.zeros((n, 3), dtype=bool)
    delay_line = deque(np.zeros((n, 3)) for _ in range(cfg.latency_steps))
    bias_drift = np.asarray(cfg.bias) * cfg.plant.readout_amplitudes * dt

    label = LOGICAL_LABELS[cfg.logical]
    reference = basis_state(label)
    logical_index = int(label, 2)

    record_steps = cfg.record_steps
    samples = {m: np.empty((len(record_steps), n)) for m in METRICS}
    aborted = np.zeros(n, dtype=bool)
    clip_counts = np.zeros(n, dtype=int)
    chunk = config.NOISE_CHUNK_STEPS
    scale = np.sqrt(dt)
    noise = None
    row = 0

    for step in range(cfg.n_steps + 1):
        if row < len(record_steps) and step == record_steps[row]:
            _store_metrics(samples, row, rho, reference, logical_index, ops)
            row += 1
        if step == cfg.n_steps:
            break

        offset = step % chunk
        if offset == 0:
            noise = np.stack([rng.standard_normal((chunk, 6)) for rng in rngs], axis=1) * scale
        dW, dB = noise[offset, :, :3], noise[offset, :, 3:]

        if cfg.estimator is Estimator.TRUE_STATE:
            estimate = populations(rho, ops)
        elif cfg.estimator is Estimator.FULL_FILTER:
            estimate = populations(rho_hat, ops)
        else:
            estimate = populations_from_syndromes(s_hat)
        active = update_arrays(active, estimate[:, 1:], cfg.controller)
        sigma = np.where(active, on_gains, 0.0)
        if delay_line:
            delay_line.append(sigma)
            sigma = delay_line.popleft()

        rho, record, blown = advance(rho, cfg.plant, sigma, dt, StepNoise(dW=dW, dB=dB), ops, cfg.integrator)
        aborted |= blown
        dY = record.dY + bias_drift
        if rho_hat is not None:
            rho_hat, filter_blown = advance_full_filter(rho_hat, dY, dB, sigma, cfg.filter, dt, ops, cfg.integrator)
            aborted |= filter_blown
        elif s_hat is not None:
            s_hat, clipped = advance_syndromes(s_hat, dY, sigma, cfg.filter, dt)
            clip_counts += clipped

    return BatchSamples(indices=indices, samples=samples, aborted=aborted, clip_counts=clip_counts)


def run_trajectory(cfg: ExperimentConfig, trajectory_index):
    """
    One trajectory's metrics on the output grid.

    Returns:
        DataFrame with a `time` column and one column per metric; the
        number of reduced-filter clipping events is in `attrs`.
    """
    if not 0 <= trajectory_index < cfg.n_traj:
        raise ConfigError(f"trajectory_index: requires 0 <= index < n_traj = {cfg.n_traj}, got {trajectory_index}")
    batch = simulate_batch(cfg, [trajectory_index])
    if batch.aborted[0]:
        raise IntegratorBlowupError(f"Trajectory {trajectory_index} aborted on integrator blow-up", [trajectory_index])
    frame = pd.DataFrame({"time": cfg.times, **{m: batch.samples[m][:, 0] for m in METRICS}})
    frame.attrs["clip_events"] = int(batch.clip_counts[0])
    frame.attrs["n_steps"] = cfg.n_steps
    return frame


@dataclass
class EnsembleResult:
    times: np.ndarray
    means: dict
    standard_errors: dict
    baseline_fidelity: np.ndarray
    clip_counts: np.ndarray
    blowup_count: int
    n_steps: int
    config: ExperimentConfig

    @property
    def mean_code_overlap(self):
        return self.means["code_overlap"]

    @property
    def mean_fidelity(self):
        return self.means["fidelity"]

    @property
    def mean_correctable_fidelity(self):
        return self.means["correctable_fidelity"]

    @property
    def n_completed(self):
        return self.config.n_traj - self.blowup_count

    @property
    def clip_fraction(self):
        """Share of reduced-filter steps that needed clipping."""
        return float(self.clip_counts.sum()) / (self.config.n_traj * max(self.n_steps, 1))

    def to_frame(self):
        columns = {"time": self.times}
        for m in METRICS:
            columns[m] = self.means[m]
            columns[f"{m}_se"] = self.standard_errors[m]
        columns["baseline_fidelity"] = self.baseline_fidelity
        return pd.DataFrame(columns)

    def diagnostics(self):
        return {
            "n_traj": self.config.n_traj,
            "n_completed": self.n_completed,
            "blowup_count": self.blowup_count,
            "n_steps": self.n_steps,
            "clip_events": int(self.clip_counts.sum()),
            "clip_fraction": self.clip_fraction,
            "latency_steps": self.config.latency_steps,
            "latency_rounding": self.config.latency_rounding,
        }


def _batches(cfg: ExperimentConfig):
    return [np.arange(start, min(start + cfg.batch_size, cfg.n_traj)) for start in range(0, cfg.n_traj, cfg.batch_size)]


def run_ensemble(cfg: ExperimentConfig, threads=1, notes_file=None):
    """
    Aggregates cfg.n_traj trajectories into per-time-step means and standard errors.

    Args:
        cfg: validated configuration.
        threads: worker processes; results do not depend on it.
        notes_file: when set, run-level diagnostics are appended there.

    Returns:
        EnsembleResult

    Raises:
        EnsembleAbortedError: more than ABORT_FRACTION_LIMIT of the
            trajectories aborted on integrator blow-up.
    """
    batches = _batches(cfg)
    if notes_file:
        log_note(
            f"Ensemble: {cfg.n_traj} trajectories, {len(batches)} batches, dt={cfg.dt:g}, "
            f"horizon={cfg.horizon:g}, estimator={cfg.estimator.value}, threads={threads}",
            notes_file,
            print_to_console=False,
        )
        if cfg.latency_rounding != 0.0:
            log_note(
                f"Notice: latency {cfg.latency:g} rounded to {cfg.latency_steps} steps "
                f"({cfg.latency_steps * cfg.dt:g}).",
                notes_file,
            )

    worker = partial(simulate_batch, cfg)
    if threads > 1 and len(batches) > 1:
        with Pool(min(threads, len(batches))) as pool:
            results = pool.map(worker, batches)
    else:
        results = [worker(batch) for batch in batches]

    aborted = np.concatenate([r.aborted for r in results])
    clip_counts = np.concatenate([r.clip_counts for r in results])
    blowups = int(aborted.sum())
    if notes_file and blowups:
        log_note(f"Warning: {blowups} of {cfg.n_traj} trajectories aborted on integrator blow-up.", notes_file)
    if blowups > config.ABORT_FRACTION_LIMIT * cfg.n_traj or blowups == cfg.n_traj:
        raise EnsembleAbortedError(
            f"{blowups} of {cfg.n_traj} trajectories aborted (limit {config.ABORT_FRACTION_LIMIT:.0%})"
        )

    keep = ~aborted
    means, errors = {}, {}
    for m in METRICS:
        data = np.concatenate([r.samples[m] for r in results], axis=1)[:, keep].T
        stats = DescrStatsW(data)
        means[m] = np.asarray(stats.mean)
        errors[m] = np.asarray(stats.std_mean) if data.shape[0] > 1 else np.zeros(data.shape[1])
    for m in PROBABILITY_METRICS:
        means[m] = np.clip(means[m], 0.0, 1.0)

    result = EnsembleResult(
        times=cfg.times,
        means=means,
        standard_errors=errors,
        baseline_fidelity=single_qubit_baseline(cfg.plant.gamma[0], cfg.times),
        clip_counts=clip_counts,
        blowup_count=blowups,
        n_steps=cfg.n_steps,
        config=cfg,
    )
    if notes_file and cfg.estimator is Estimator.REDUCED_FILTER:
        log_note(f"Reduced-filter clipping: {result.clip_fraction:.2e} of steps.", notes_file, print_to_console=False)
    return result
