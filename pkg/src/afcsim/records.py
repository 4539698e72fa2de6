"""File formats shared by the simulator and the analysis tools.

Three formats live here:

* timestamp streams: flat binary, little endian, 16 bytes per record
  (u64 time in ps, u32 clock cycle, u16 mode index, u8 channel, u8 flags);
* comb profiles: a small key=value header followed by two-column
  ``detuning_MHz,od`` rows, plain text so they diff cleanly;
* generic x,y,sigma tables as CSV, used for fit inputs and rate curves.

Every writer also knows how to hash its own payload so run manifests can
record content digests next to the configuration digest.
"""

from __future__ import annotations

import hashlib
import io
import json
from pathlib import Path

import numpy as np

CHANNEL_SIGNAL = 0
CHANNEL_IDLER = 1

FLAG_RECALLED = 0x1
FLAG_DARK = 0x2
FLAG_NOISE = 0x4
FLAG_UNPAIRED = 0x8

# On-disk layout is fixed; numpy guarantees the packed itemsize is 16.
TIMESTAMP_DTYPE = np.dtype(
    [
        ("time_ps", "<u8"),
        ("clock", "<u4"),
        ("mode", "<u2"),
        ("channel", "<u1"),
        ("flags", "<u1"),
    ]
)

TIMESTAMP_MAGIC = b"AFCT"


def make_timestamps(time_ps, clock, mode, channel, flags=None):
    """Pack parallel arrays into a timestamp record array sorted by time."""
    n = len(time_ps)
    rec = np.zeros(n, dtype=TIMESTAMP_DTYPE)
    rec["time_ps"] = np.asarray(time_ps, dtype=np.uint64)
    rec["clock"] = np.asarray(clock, dtype=np.uint32)
    rec["mode"] = np.asarray(mode, dtype=np.uint16)
    rec["channel"] = channel if np.isscalar(channel) else np.asarray(channel, dtype=np.uint8)
    if flags is not None:
        rec["flags"] = flags if np.isscalar(flags) else np.asarray(flags, dtype=np.uint8)
    order = np.argsort(rec["time_ps"], kind="stable")
    return rec[order]


def write_timestamps(path, records):
    """Write a timestamp stream with a tiny header (magic + record count)."""
    records = np.asarray(records, dtype=TIMESTAMP_DTYPE)
    with open(path, "wb") as fh:
        fh.write(TIMESTAMP_MAGIC)
        fh.write(np.uint64(len(records)).tobytes())
        fh.write(records.tobytes())


def read_timestamps(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != TIMESTAMP_MAGIC:
            raise ValueError(f"{path}: not a timestamp stream (bad magic {magic!r})")
        (count,) = np.frombuffer(fh.read(8), dtype="<u8")
        data = np.frombuffer(fh.read(), dtype=TIMESTAMP_DTYPE)
    if len(data) != count:
        raise ValueError(f"{path}: truncated stream, header says {count}, found {len(data)}")
    return data


def write_comb_profile(path, detuning_mhz, od, header):
    """Text format: '# key = value' lines, then 'detuning_MHz,od' rows."""
    lines = [f"# {key} = {value}" for key, value in header.items()]
    lines.append("detuning_MHz,od")
    # repr gives the shortest decimal that round-trips the float exactly
    for d, o in zip(detuning_mhz, od):
        lines.append(f"{float(d)!r},{float(o)!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_comb_profile(path):
    header = {}
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].partition("=")
                header[key.strip()] = value.strip()
            elif not line.startswith("detuning"):
                a, b = line.split(",")
                rows.append((float(a), float(b)))
    arr = np.array(rows, dtype=float)
    if arr.size == 0:
        raise ValueError(f"{path}: comb profile holds no rows")
    return arr[:, 0], arr[:, 1], header


def write_xy_table(path, x, y, sigma=None, names=("x", "y", "sigma")):
    buf = io.StringIO()
    if sigma is None:
        buf.write(f"{names[0]},{names[1]}\n")
        for a, b in zip(x, y):
            buf.write(f"{a:.10g},{b:.10g}\n")
    else:
        buf.write(f"{names[0]},{names[1]},{names[2]}\n")
        for a, b, c in zip(x, y, sigma):
            buf.write(f"{a:.10g},{b:.10g},{c:.10g}\n")
    Path(path).write_text(buf.getvalue())


def read_xy_table(path):
    """Return (x, y, sigma). sigma is None when the file has two columns."""
    raw = np.genfromtxt(path, delimiter=",", names=True)
    cols = raw.dtype.names
    x = np.atleast_1d(raw[cols[0]]).astype(float)
    y = np.atleast_1d(raw[cols[1]]).astype(float)
    sigma = np.atleast_1d(raw[cols[2]]).astype(float) if len(cols) > 2 else None
    return x, y, sigma


def sha256_file(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(path, entries):
    """Manifest is JSON: config hash, seed, counts, per-file content hashes."""
    Path(path).write_text(json.dumps(entries, indent=2, sort_keys=True) + "\n")


def read_manifest(path):
    return json.loads(Path(path).read_text())
