"""CSV and manifest writers shared by the command line runner.

Every CSV starts with ``#``-prefixed comment lines carrying the config
hash and the root seed. Times are printed with 9 significant digits and
states with 17, so files are byte-stable and round-trip exactly.
"""

from __future__ import annotations

import hashlib
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

__all__ = [
    "config_hash",
    "header_lines",
    "write_text_atomic",
    "trajectory_csv",
    "jump_log_csv",
    "table_csv",
    "read_csv",
    "write_manifest",
]

TIME_FMT = "%.9g"
VALUE_FMT = "%.17g"


def config_hash(payload) -> str:
    """SHA-256 of the canonical JSON form of ``payload`` (sorted keys, no spaces)."""
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode()).hexdigest()


def header_lines(chash: str, seed: int, **extra) -> list:
    lines = [f"# config_hash: {chash}", f"# seed: {seed}"]
    lines += [f"# {k}: {v}" for k, v in extra.items()]
    return lines


def write_text_atomic(path, text: str) -> Path:
    """Write through a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _fmt(value, fmt=VALUE_FMT) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, str):
        return value
    return fmt % value


def table_csv(header, columns, rows, time_columns=("time", "t")) -> str:
    """Header comments, one column-name line, then ``rows`` formatted per column."""
    out = io.StringIO()
    for line in header:
        out.write(line + "\n")
    out.write(",".join(columns) + "\n")
    fmts = [TIME_FMT if c in time_columns else VALUE_FMT for c in columns]
    for row in rows:
        out.write(",".join(_fmt(v, f) for v, f in zip(row, fmts)) + "\n")
    return out.getvalue()


def trajectory_csv(header, times, states) -> str:
    """Columns ``time, particle_0, ..., particle_{N-1}``."""
    n = states.shape[1]
    columns = ["time"] + [f"particle_{i}" for i in range(n)]
    out = io.StringIO()
    for line in header:
        out.write(line + "\n")
    out.write(",".join(columns) + "\n")
    for t, row in zip(times, states):
        out.write(TIME_FMT % t + "," + ",".join(VALUE_FMT % v for v in row) + "\n")
    return out.getvalue()


def jump_log_csv(header, jump_log, population: int | None = None) -> str:
    """One line per (event, receiver): ``time, sender, receiver, increment``.

    The sender's own slot is omitted since it receives nothing. For a
    multi-population run pass the receiving ``population`` (0-based); a
    ``source`` column then names the sending population, 1-based.
    """
    columns = ["time", "sender", "receiver", "increment"]
    if population is not None:
        columns.append("source")
    out = io.StringIO()
    for line in header:
        out.write(line + "\n")
    out.write(",".join(columns) + "\n")
    for ev in jump_log:
        own = population is None or ev.source == population
        for i, inc in enumerate(ev.increments):
            if own and i == ev.sender:
                continue
            line = f"{VALUE_FMT % ev.time},{ev.sender},{i},{VALUE_FMT % inc}"
            if population is not None:
                line += f",{ev.source + 1}"
            out.write(line + "\n")
    return out.getvalue()


def read_csv(path):
    """Parse a file written by this module: ``(comments dict, column names, float array)``."""
    comments, columns, rows = {}, None, []
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("#"):
                key, _, val = line[1:].strip().partition(": ")
                comments[key] = val
            elif columns is None:
                columns = line.split(",")
            elif line:
                rows.append([float(v) for v in line.split(",")])
    return comments, columns, np.array(rows).reshape(len(rows), len(columns or []))


def write_manifest(path, manifest: dict) -> Path:
    return write_text_atomic(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
