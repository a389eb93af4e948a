# backend/write_results.py
import json
import os
import subprocess
from datetime import datetime

import backend.config as config


def _ensure_parent(path):
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)


def sidecar_path(csv_path):
    root, _ = os.path.splitext(csv_path)
    return root + ".json"


def write_frame_csv(frame, output_file):
    """Writes a result table: header row, comma separated, '.' decimals."""
    _ensure_parent(output_file)
    frame.to_csv(output_file, index=False, sep=",", decimal=".", float_format="%.17g")
    return output_file


def describe_version():
    """`git describe` of the working tree, or config.VERSION outside a checkout."""
    try:
        described = subprocess.run(
            ["git", "describe", "--tags", "--always", "--dirty"],
            cwd=os.path.dirname(os.path.abspath(__file__)),
            capture_output=True,
            text=True,
            timeout=5,
            check=True,
        ).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        return config.VERSION
    return described or config.VERSION


def sidecar_document(experiment_config, diagnostics=None):
    return {
        "config": experiment_config.to_dict(),
        "version": describe_version(),
        "generated_on": datetime.now().strftime("%Y-%m-%d %H:%M:%S"),
        "diagnostics": diagnostics or {},
    }


def write_sidecar(experiment_config, output_file, diagnostics=None):
    _ensure_parent(output_file)
    with open(output_file, "w", encoding="utf-8") as f:
        f.write(json.dumps(sidecar_document(experiment_config, diagnostics), indent=2))
    return output_file


def write_ensemble(result, output_file=config.ENSEMBLE_OUTPUT_FILE):
    """CSV of the ensemble means plus its JSON sidecar. Returns both paths."""
    csv_path = write_frame_csv(result.to_frame(), output_file)
    json_path = write_sidecar(result.config, sidecar_path(output_file), result.diagnostics())
    return csv_path, json_path
