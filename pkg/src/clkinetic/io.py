"""CSV reports and the binary state dump.  Only the CLI calls into this module."""
import csv
import json
import os
import struct

import numpy as np

DUMP_MAGIC = b"CLKS"
DUMP_VERSION = 1
_HEADER = struct.Struct("<4sIQ")


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (dict, list, tuple)):
        return json.dumps(v, sort_keys=True, default=float)
    return str(v)


def write_csv(path, columns, rows, n_pass=None, n_fail=None):
    """Header row, one line per row dict, then ``# pass=<n> fail=<m>``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_cell(r.get(c, "")) for c in columns])
        fh.write(f"# pass={int(n_pass or 0)} fail={int(n_fail or 0)}\n")


def read_csv(path):
    """(rows as dicts of strings, summary dict) for files written by write_csv."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    summary = {}
    if lines and lines[-1].startswith("#"):
        for tok in lines[-1][1:].split():
            k, v = tok.split("=")
            summary[k] = int(v)
        lines = lines[:-1]
    rows = list(csv.DictReader(lines))
    return rows, summary


def write_state_dump(path, positions, velocities):
    """"CLKS", u32 version, u64 N, then N rows of (x, y, z, vx, vy, vz) as f64, little-endian."""
    pos = np.asarray(positions, dtype="<f8")
    vel = np.asarray(velocities, dtype="<f8")
    data = np.ascontiguousarray(np.hstack([pos, vel]), dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(DUMP_MAGIC, DUMP_VERSION, data.shape[0]))
        fh.write(data.tobytes())


def read_state_dump(path):
    with open(path, "rb") as fh:
        magic, version, n = _HEADER.unpack(fh.read(_HEADER.size))
        if magic != DUMP_MAGIC:
            raise ValueError("not a state dump")
        if version != DUMP_VERSION:
            raise ValueError(f"unsupported dump version {version}")
        data = np.frombuffer(fh.read(), dtype="<f8")
    data = data.reshape(n, 6)
    return data[:, :3].copy(), data[:, 3:].copy()


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return path
