"""File formats: trajectories, volumes, waveform exports and tables.

All writers are deterministic, and floats are written with ``repr`` so a
read followed by a write reproduces the original bytes.

Trajectory file
    ASCII ``key=value`` header lines, then ``end_header`` and a newline,
    followed by little-endian float64 samples in C order (Nfe, Ns, Nd).
Volume file
    ``<base>.hdr`` with ``key=value`` lines (dims, spacing_mm, dtype,
    order, endian) and ``<base>.bin`` holding little-endian complex64 data.
"""
from __future__ import annotations

import csv
import io
import os
from pathlib import Path

import numpy as np

from .core import Trajectory, traj_to_gradient

TRAJ_MAGIC = "trajopt-trajectory 1"
UNITS = ("rad_per_sample", "cycles_per_m")


class FormatError(ValueError):
    """Malformed or inconsistent input file."""


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _fmt_list(vals):
    return ",".join(_fmt(v) for v in vals)


def _parse_header(lines):
    out = {}
    for ln in lines:
        if "=" not in ln:
            raise FormatError(f"header line without '=': {ln!r}")
        k, v = ln.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _require(header, key, conv, path):
    if key not in header:
        raise FormatError(f"{path}: header is missing {key!r}")
    try:
        return conv(header[key])
    except ValueError as err:
        raise FormatError(f"{path}: bad value for {key!r}: {header[key]!r}") from err


def _ints(s):
    return tuple(int(v) for v in s.split(","))


def _floats(s):
    return tuple(float(v) for v in s.split(","))


# -- trajectories --

def write_trajectory(path, traj, units="rad_per_sample"):
    """Write ``traj`` in normalized or physical (cycles/m) units."""
    if units not in UNITS:
        raise ValueError(f"units must be one of {UNITS}")
    data = traj.samples if units == "rad_per_sample" else traj.to_physical()
    nfe, ns, nd = traj.samples.shape
    header = [TRAJ_MAGIC, f"n_readout={nfe}", f"n_shots={ns}", f"ndim={nd}",
              f"fov_mm={_fmt_list(traj.fov_mm)}", f"matrix_size={_fmt_list(traj.matrix_size)}",
              f"raster_s={_fmt(traj.raster_s)}", f"units={units}", "dtype=float64",
              "endian=little", "order=C", "end_header"]
    payload = np.ascontiguousarray(data, dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(payload)


def read_trajectory(path):
    """Read a trajectory file; physical-unit files are converted back."""
    try:
        raw = Path(path).read_bytes()
    except OSError as err:
        raise FormatError(f"cannot read {path}: {err}") from err
    marker = b"\nend_header\n"
    end = raw.find(marker)
    if not raw.startswith(TRAJ_MAGIC.encode()) or end < 0:
        raise FormatError(f"{path}: not a trajectory file")
    try:
        lines = raw[:end].decode("ascii").split("\n")[1:]
    except UnicodeDecodeError as err:
        raise FormatError(f"{path}: header is not ASCII") from err
    h = _parse_header(lines)
    nfe = _require(h, "n_readout", int, path)
    ns = _require(h, "n_shots", int, path)
    nd = _require(h, "ndim", int, path)
    fov = _require(h, "fov_mm", _floats, path)
    matrix = _require(h, "matrix_size", _ints, path)
    raster = _require(h, "raster_s", float, path)
    units = _require(h, "units", str, path)
    if units not in UNITS:
        raise FormatError(f"{path}: unknown units {units!r}")
    payload = raw[end + len(marker):]
    if len(payload) != nfe * ns * nd * 8:
        raise FormatError(f"{path}: payload has {len(payload)} bytes, "
                          f"expected {nfe * ns * nd * 8}")
    data = np.frombuffer(payload, dtype="<f8").reshape(nfe, ns, nd).astype(np.float64)
    try:
        if units == "cycles_per_m":
            return Trajectory.from_physical(data, fov, matrix, raster, wrap=False)
        return Trajectory(data, fov, matrix, raster, wrap=False)
    except ValueError as err:
        raise FormatError(f"{path}: {err}") from err


# -- volumes --

def _volume_paths(base):
    base = str(base)
    for ext in (".hdr", ".bin"):
        if base.endswith(ext):
            base = base[:-len(ext)]
    return base + ".hdr", base + ".bin"


def write_volume(base, data, spacing_mm=None):
    """Write ``data`` (complex, any dims) as a ``.hdr``/``.bin`` pair."""
    if spacing_mm is None:
        spacing_mm = getattr(data, "spacing_mm", None)
    data = np.asarray(getattr(data, "data", data))
    if spacing_mm is None:
        spacing_mm = (1.0,) * data.ndim
    hdr, binf = _volume_paths(base)
    lines = [f"dims={_fmt_list(data.shape)}", f"spacing_mm={_fmt_list(spacing_mm)}",
             "dtype=complex64", "order=C", "endian=little"]
    with open(hdr, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    with open(binf, "wb") as fh:
        fh.write(np.ascontiguousarray(data, dtype="<c8").tobytes())


def read_volume(base):
    """Return ``(data complex128, spacing_mm)``."""
    hdr, binf = _volume_paths(base)
    try:
        text = Path(hdr).read_text()
        payload = Path(binf).read_bytes()
    except OSError as err:
        raise FormatError(f"cannot read volume {base}: {err}") from err
    h = _parse_header([ln for ln in text.splitlines() if ln.strip()])
    dims = _require(h, "dims", _ints, hdr)
    spacing = _require(h, "spacing_mm", _floats, hdr)
    if h.get("dtype", "complex64") != "complex64":
        raise FormatError(f"{hdr}: only complex64 payloads are supported")
    if len(payload) != int(np.prod(dims)) * 8:
        raise FormatError(f"{binf}: payload has {len(payload)} bytes, "
                          f"expected {int(np.prod(dims)) * 8}")
    data = np.frombuffer(payload, dtype="<c8").reshape(dims).astype(np.complex128)
    return data, spacing


# -- tables --

def write_table(path, header, rows):
    """Comma-separated table with a header row."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([v if isinstance(v, str) else _fmt(v) for v in row])
    with open(path, "w", newline="") as fh:
        fh.write(buf.getvalue())


def _parse_cell(s):
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        return s


def read_table(path):
    """Return ``(header, rows)``; numeric cells are parsed to int/float."""
    try:
        with open(path, newline="") as fh:
            lines = [ln for ln in fh if not ln.startswith("#")]
    except OSError as err:
        raise FormatError(f"cannot read {path}: {err}") from err
    reader = csv.reader(lines)
    try:
        header = next(reader)
    except StopIteration as err:
        raise FormatError(f"{path}: empty table") from err
    return header, [[_parse_cell(c) for c in row] for row in reader]


# -- gradient waveforms --

AXES = ("gx_mT_m", "gy_mT_m", "gz_mT_m")


def write_waveforms(directory, traj, limits):
    """One CSV per shot: ``# raster_s=...`` then time and per-axis gradient.

    Sample ``j`` of the gradient lies between k-space samples ``j`` and
    ``j + 1`` and is stamped at ``(j + 0.5) * raster_s``.
    """
    os.makedirs(directory, exist_ok=True)
    g = traj_to_gradient(traj, limits)
    t = (np.arange(g.shape[0]) + 0.5) * traj.raster_s
    header = ["time_s"] + list(AXES[:traj.ndim])
    paths = []
    for i in range(traj.n_shots):
        path = os.path.join(directory, f"shot_{i:04d}.csv")
        rows = [[t[j]] + list(g[j, i]) for j in range(g.shape[0])]
        buf = io.StringIO()
        buf.write(f"# raster_s={_fmt(traj.raster_s)}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
        with open(path, "w", newline="") as fh:
            fh.write(buf.getvalue())
        paths.append(path)
    return paths


def read_waveform(path):
    """Return ``(raster_s, time, gradient (L, Nd))`` from one shot file."""
    try:
        with open(path) as fh:
            first = fh.readline()
    except OSError as err:
        raise FormatError(f"cannot read {path}: {err}") from err
    if not first.startswith("# raster_s="):
        raise FormatError(f"{path}: missing raster header")
    raster = float(first.split("=", 1)[1])
    header, rows = read_table(path)
    arr = np.array(rows, dtype=np.float64).reshape(-1, len(header))
    return raster, arr[:, 0], arr[:, 1:]
