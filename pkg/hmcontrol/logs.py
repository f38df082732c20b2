# logs.py
"""
Structured event log.
Every event is {"time", "level", "message", **extra}, appended to a JSON array
file and echoed to the console.
"""

import json
import os
from datetime import datetime, timezone
from typing import Any, Dict, List, Optional

from rich.console import Console
from rich.text import Text

_console = Console(stderr=True, highlight=False)

# -------------------------------------------------------------------
# Configuration
# -------------------------------------------------------------------
LOG_FILE: Optional[str] = os.getenv("HMCONTROL_LOG_FILE") or None
QUIET = os.getenv("HMCONTROL_QUIET", "0") == "1"
# merged into every event (experiment, seed, config hash of the active run)
CONTEXT: Dict[str, Any] = {}

_STYLES = {"DEBUG": "dim", "INFO": "cyan", "WARNING": "yellow", "ERROR": "bold red"}


def configure(log_file: Optional[str] = None, quiet: Optional[bool] = None, **context: Any) -> None:
    """Point the event log at a file (None disables the file sink) and bind run context."""
    global LOG_FILE, QUIET, CONTEXT
    LOG_FILE = log_file
    CONTEXT = dict(context)
    if quiet is not None:
        QUIET = quiet


# -------------------------------------------------------------------
# Utility
# -------------------------------------------------------------------
def now_iso() -> str:
    return datetime.now(timezone.utc).isoformat()


def _read_json(path: str, fallback):
    try:
        with open(path, "r") as f:
            return json.load(f)
    except Exception:
        return fallback


def _write_json(path: str, data):
    with open(path, "w") as f:
        json.dump(data, f, indent=2, default=str)


def log_event(level: str, message: str, **extra: Any) -> dict:
    entry = {"time": now_iso(), "level": level, "message": message, **CONTEXT}
    if extra:
        entry.update(extra)
    if LOG_FILE:
        parent = os.path.dirname(LOG_FILE)
        if parent:
            os.makedirs(parent, exist_ok=True)
        logs: List[dict] = _read_json(LOG_FILE, [])
        logs.append(entry)
        _write_json(LOG_FILE, logs)
    if not QUIET or level in ("WARNING", "ERROR"):
        style = _STYLES.get(level, "white")
        _console.print(Text.assemble((f"[{level}]", style), f" {message} {extra if extra else ''}"))
    return entry
