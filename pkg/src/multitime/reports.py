"""CSV and JSON emitters that embed the resolved config and library version."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from . import __version__


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def write_json(path, payload: dict, config: dict) -> Path:
    path = Path(path)
    doc = {"version": __version__, "config": config, "results": _plain(payload)}
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def write_csv(path, header, rows, config: dict) -> Path:
    """CSV with two leading comment lines: library version and the config as JSON."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        fh.write(f"# multitime {__version__}\n")
        fh.write("# config: " + json.dumps(config, sort_keys=True) + "\n")
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([f"{v:.17g}" if isinstance(v, float) else v for v in row])
    return path


def read_csv(path):
    """Return (config, header, rows as strings), skipping the comment lines."""
    config = None
    with open(path) as fh:
        lines = fh.read().splitlines()
    body = []
    for line in lines:
        if line.startswith("# config: "):
            config = json.loads(line[len("# config: "):])
        elif not line.startswith("#"):
            body.append(line)
    rows = list(csv.reader(body))
    return config, rows[0], rows[1:]
