# backend/config.py
import os

VERSION = "0.3.0"

# ==============================================================================
# === Directories & Files               ========================================
# ==============================================================================
OUTPUT_DIRECTORY = "backend/output"
PRESETS_DIRECTORY = "backend/presets"
NOTES_FILE = OUTPUT_DIRECTORY + "/" + "run_notes.txt"
ENSEMBLE_OUTPUT_FILE = OUTPUT_DIRECTORY + "/" + "ensemble.csv"
TRAJECTORY_OUTPUT_FILE = OUTPUT_DIRECTORY + "/" + "trajectory.csv"
BASELINE_OUTPUT_FILE = OUTPUT_DIRECTORY + "/" + "baseline.csv"
IDEAL_PRESET_FILE = PRESETS_DIRECTORY + "/" + "ideal.json"
MISMATCHED_PRESET_FILE = PRESETS_DIRECTORY + "/" + "mismatched.json"

# Fallback for --threads when the flag is omitted.
THREADS_ENV_VAR = "QEC_SIM_THREADS"

# ==============================================================================
# === Numerical Tolerances              ========================================
# ==============================================================================
HERMITIAN_TOLERANCE = 1e-12
TRACE_TOLERANCE = 1e-12
PSD_TOLERANCE = 1e-10
POPULATION_TOLERANCE = 1e-10
# A trace at or below this value before repair means the integrator blew up.
BLOWUP_TRACE = 1e-8

# ==============================================================================
# === Integration Guards                ========================================
# ==============================================================================
# dt * max(Gamma_k, gamma_s) must stay at or below this value.
STABILITY_GUARD = 0.01
# Default dt is this fraction of 1/max(Gamma_k): 100x below the guard.
DEFAULT_DT_FRACTION = 1e-3
# Plant and full-filter stepping scheme: "euler-maruyama" (Ito increment, then
# repair) or "exponential" (exact syndrome measurement update, flip channel and
# control kick as positive maps).
DEFAULT_INTEGRATOR = "euler-maruyama"
INTEGRATORS = ("euler-maruyama", "exponential")
# Desk-scale guard on horizon/dt.
MAX_STEPS = 10**8
# run_ensemble fails when more than this fraction of trajectories aborted.
ABORT_FRACTION_LIMIT = 0.01

# ==============================================================================
# === Ensemble Harness                  ========================================
# ==============================================================================
# Metrics are kept every RECORD_STRIDE steps.
DEFAULT_RECORD_STRIDE = 100
# Trajectories advanced together by one vectorized call. Batch composition
# depends only on this value, so results do not depend on the worker count.
DEFAULT_BATCH_SIZE = 250
# Steps of noise drawn at once from each trajectory stream.
NOISE_CHUNK_STEPS = 512

# ==============================================================================
# === Nominal Protocol (ideal feedback)  =======================================
# ==============================================================================
NOMINAL_MEASUREMENT_STRENGTH = 1.0  # Gamma_j
NOMINAL_BIT_FLIP_RATE = 1.0 / 64.0  # gamma_j
NOMINAL_EFFICIENCY = 0.8  # eta_j
NOMINAL_ALPHA = 0.95
NOMINAL_BETA = 0.6
NOMINAL_C = 1.5
NOMINAL_HORIZON = 64.0
NOMINAL_N_TRAJ = 1000

# ==============================================================================
# === Mismatched Protocol (reduced filter, biased records, latency) ============
# ==============================================================================
MISMATCH_GAMMA_SCALE = 0.8  # gamma_* = 0.8 gamma
MISMATCH_MEASUREMENT_SCALE = 0.9  # Gamma_* = 0.9 Gamma
MISMATCH_EFFICIENCY_SCALE = 0.9  # eta_* = 0.9 eta
# Record biases in units of sqrt(eta * Gamma).
MISMATCH_BIAS = (0.1, -0.1, 0.05)
# Latency in units of 1/Gamma.
MISMATCH_LATENCY = 0.5

# ==============================================================================
# === Rate Estimate                     ========================================
# ==============================================================================
# Grid points per axis when minimizing g over K.
RATE_GRID_RESOLUTION = 200
# Reading of the (1 - f_j) factors inside g(s, x): "derived" uses f_j = s(1 + x_j),
# "literal" uses f_j = 1 - s - s x_j.
G_CONVENTION = "derived"

if not os.path.exists(PRESETS_DIRECTORY):
    print(f"Warning: Directory '{PRESETS_DIRECTORY}' not found.")
