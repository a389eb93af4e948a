# backend/notes.py
import os
from datetime import datetime

import backend.config as config
from backend.write_results import describe_version


def log_note(message, filepath=None, print_to_console=True):
    """Appends one line to the run notes and echoes it to the console."""
    filepath = filepath or config.NOTES_FILE
    directory = os.path.dirname(filepath)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(filepath, "a", encoding="utf-8") as f:
        f.write(message + "\n")
    if print_to_console:
        print(message)


def initialize_notes_file(filepath=None, title="QEC Feedback Simulation Notes"):
    filepath = filepath or config.NOTES_FILE
    directory = os.path.dirname(filepath)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(filepath, "w", encoding="utf-8") as f:
        f.write(title + "\n")
        f.write(f"Generated on: {datetime.now().strftime('%Y-%m-%d %H:%M:%S')}\n")
        f.write(f"Version: {describe_version()}\n")
        f.write("=" * 90 + "\n\n")
    return filepath
