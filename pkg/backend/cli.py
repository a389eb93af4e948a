# backend/cli.py
import argparse
import json
import os
import sys

import numpy as np
import pandas as pd

import backend.config as config
from backend.algebra import IntegratorBlowupError
from backend.experiments import (
    ConfigError,
    EnsembleAbortedError,
    ExperimentConfig,
    run_ensemble,
    run_trajectory,
    single_qubit_baseline,
)
from backend.lyapunov import compare_g_conventions, rate_estimate
from backend.notes import initialize_notes_file, log_note
from backend.verify_invariants import run_suite
from backend.write_results import write_ensemble, write_frame_csv, write_sidecar, sidecar_path

SUBCOMMANDS = ("simulate", "ensemble", "rate-estimate", "verify", "baseline")

CONFIG_HELP = """\
configuration keys (JSON object; every 3-vector also accepts a scalar):
  seed                  required, integer in [0, 2^64)
  plant                 {Gamma, eta, gamma}; defaults 1, 0.8, 1/64
  filter                {Gamma, eta, gamma}; defaults to the plant values
  controller            {alpha, beta, c}; defaults 0.95, 0.6, 1.5
  estimator             true-state | full-filter | reduced-filter (default reduced-filter)
  dt                    default 1e-3 / max(Gamma)
  horizon               default 64
  n_traj                default 1000
  latency               default 0 (rounded to a multiple of dt)
  bias                  record bias in units of sqrt(eta Gamma), default 0
  record_stride         default 100 steps
  initial_state         basis label such as "000" or populations [pC, p1, p2, p3]
  filter_initial_state  same forms, default "000"
  control               default true; false forces sigma = 0
  batch_size            default 250 trajectories per vectorized batch
  logical               "0" or "1": logical reference for the fidelities
  integrator            "euler-maruyama" (default) or "exponential" for plant and full filter
"""


def apply_overrides(doc, overrides):
    """
    Applies dotted `key=value` overrides to a parsed document.

    Values are read as JSON when possible and as plain strings otherwise.
    """
    doc = json.loads(json.dumps(doc))
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"--set {item!r}: expected KEY=VALUE")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        target = doc
        parts = key.strip().split(".")
        for part in parts[:-1]:
            node = target.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"{key}: '{part}' is not a section")
            target = node
        target[parts[-1]] = value
    return doc


def parse_config(text, overrides=()):
    """JSON text (a configuration or a result sidecar) to a validated ExperimentConfig."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"configuration is not valid JSON: {e}") from None
    if isinstance(doc, dict) and "config" in doc and "version" in doc:
        doc = doc["config"]
    return ExperimentConfig.from_dict(apply_overrides(doc, overrides))


def load_config(path, overrides=()):
    if not path:
        raise ConfigError("--config: a configuration file is required for this command")
    if not os.path.exists(path):
        raise ConfigError(f"--config: file '{path}' not found")
    with open(path, "r", encoding="utf-8") as f:
        return parse_config(f.read(), overrides)


def resolve_threads(value):
    if value is None:
        value = os.environ.get(config.THREADS_ENV_VAR, "1")
    try:
        threads = int(value)
    except ValueError:
        raise ConfigError(f"--threads: expected an integer, got {value!r}") from None
    if threads < 1:
        raise ConfigError(f"--threads: requires at least 1, got {threads}")
    return threads


def build_parser():
    parser = argparse.ArgumentParser(
        prog="app.py",
        description="Monte Carlo simulator for continuous-time bit-flip error correction with hysteresis feedback.",
        epilog=CONFIG_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", help="JSON configuration (or a result sidecar)")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a configuration key, e.g. plant.gamma=0.02 (repeatable)")
    parser.add_argument("--out", help="output CSV path")
    parser.add_argument("--threads", help=f"worker processes (fallback: ${config.THREADS_ENV_VAR}, then 1)")
    parser.add_argument("--quick", action="store_true", help="desk-scale verify suite")
    parser.add_argument("--trajectory", type=int, default=0, help="trajectory index for simulate")
    return parser


def _simulate(args, notes):
    cfg = load_config(args.config, args.overrides)
    out = args.out or config.TRAJECTORY_OUTPUT_FILE
    print(f"1/2: Simulating trajectory {args.trajectory} ({cfg.n_steps} steps)...")
    frame = run_trajectory(cfg, args.trajectory)
    print("2/2: Writing results...")
    write_frame_csv(frame, out)
    write_sidecar(cfg, sidecar_path(out), {"trajectory": args.trajectory, "clip_events": frame.attrs["clip_events"]})
    log_note(f"Trajectory written to {out}", notes)
    return 0


def _ensemble(args, notes):
    cfg = load_config(args.config, args.overrides)
    threads = resolve_threads(args.threads)
    out = args.out or config.ENSEMBLE_OUTPUT_FILE
    print(f"1/2: Running {cfg.n_traj} trajectories on {threads} worker(s)...")
    result = run_ensemble(cfg, threads=threads, notes_file=notes)
    print("2/2: Writing results...")
    csv_path, json_path = write_ensemble(result, out)
    last = result.to_frame().iloc[-1]
    log_note(
        f"t = {last['time']:g}: code overlap {last['code_overlap']:.4f}, fidelity {last['fidelity']:.4f}, "
        f"correctable fidelity {last['correctable_fidelity']:.4f}, single qubit {last['baseline_fidelity']:.4f}",
        notes,
    )
    log_note(f"Results written to {csv_path} and {json_path}", notes)
    return 0


def _rate_estimate(args, notes):
    cfg = load_config(args.config, args.overrides)
    estimate = rate_estimate(cfg.controller, cfg.plant)
    for key, value in estimate.to_dict().items():
        log_note(f"{key}: {value}", notes)
    gaps = compare_g_conventions(np.random.Generator(np.random.Philox(cfg.seed)))
    log_note("g convention gaps to the population form: " + ", ".join(f"{k} {v:.1e}" for k, v in gaps.items()), notes)
    return 0


def _verify(args, notes):
    threads = resolve_threads(args.threads)
    print(f"--- Running {'quick ' if args.quick else ''}verification suite ---")
    table = run_suite(quick=args.quick, threads=threads)
    with pd.option_context("display.max_colwidth", None, "display.width", 200):
        print(table.to_string(index=False))
    for row in table.itertuples():
        log_note(f"[{'PASS' if row.passed else 'FAIL'}] {row.check}: {row.detail}", notes, print_to_console=False)
    if args.out:
        write_frame_csv(table, args.out)
    return 0 if table["passed"].all() else 1


def _baseline(args, notes):
    cfg = load_config(args.config, args.overrides)
    out = args.out or config.BASELINE_OUTPUT_FILE
    frame = pd.DataFrame({"time": cfg.times, "fidelity": single_qubit_baseline(cfg.plant.gamma[0], cfg.times)})
    write_frame_csv(frame, out)
    log_note(f"Single-qubit baseline (gamma = {cfg.plant.gamma[0]:g}) written to {out}", notes)
    return 0


HANDLERS = {
    "simulate": _simulate,
    "ensemble": _ensemble,
    "rate-estimate": _rate_estimate,
    "verify": _verify,
    "baseline": _baseline,
}


def dispatch(args, notes_file=None):
    """Runs one parsed command. Returns the process exit status."""
    notes = initialize_notes_file(notes_file or config.NOTES_FILE, title=f"Run notes: {args.subcommand}")
    print(f"--- Starting {args.subcommand} ---")
    try:
        status = HANDLERS[args.subcommand](args, notes)
    except (ConfigError, EnsembleAbortedError, IntegratorBlowupError) as e:
        log_note(f"Error: {e}", notes, print_to_console=False)
        print(f"Error: {e}", file=sys.stderr)
        return 2
    if status == 0:
        print("\n" + "=" * 50)
        print(f"✅ SUCCESS! {args.subcommand} complete.")
        print(f"📂 Notes: {notes}")
        print("=" * 50)
    else:
        print("❌ Verification failed; see the table above.", file=sys.stderr)
    return status


def main(argv=None):
    args = build_parser().parse_args(argv)
    return dispatch(args)
