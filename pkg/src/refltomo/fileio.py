"""On-disk formats: contrast images, scattered data, traces, and manifests.

All writers go through an atomic temp-file + rename so a crash never leaves a
half-written artifact.  Conventions:

* Contrast CSV: one row per y line, top row = largest y, columns ordered by
  increasing x.  A humane format for eyeballing and diffing.
* Contrast PGM: binary P5, 16-bit big-endian samples (maxval 65535), same
  raster order as the CSV; a JSON sidecar records the affine scaling.
* Scattered-data CSV: columns freq_hz, tx, rx, re, im.
* Scattered-data blob: little-endian packed binary with a magic header, for
  lossless round trips; noise metadata rides in a JSON sidecar.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import sys
import tempfile
from dataclasses import asdict

import numpy as np

from .forward import ScatteredData
from .scene import ContrastImage, Grid

_BLOB_MAGIC = b"RTSD"
_BLOB_VERSION = 1


# ---------------------------------------------------------------------------
# atomic writes
# ---------------------------------------------------------------------------


def atomic_write_bytes(path: str, payload: bytes) -> None:
    """Write payload to a temp file in the target directory, then rename."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


# ---------------------------------------------------------------------------
# contrast images
# ---------------------------------------------------------------------------


def _image_raster(image: ContrastImage) -> np.ndarray:
    """(ny, nx) array, row 0 = top (largest y), columns by increasing x."""
    vals = image.values_2d()  # (nx, ny), axis 0 = x, axis 1 = y ascending
    return vals.T[::-1, :]


def _raster_to_values(raster: np.ndarray) -> np.ndarray:
    return raster[::-1, :].T.ravel()


def write_contrast_csv(path: str, image: ContrastImage) -> None:
    raster = _image_raster(image)
    lines = [",".join(format(v, ".17g") for v in row) for row in raster]
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_contrast_csv(path: str, grid: Grid) -> ContrastImage:
    raster = np.loadtxt(path, delimiter=",", ndmin=2)
    if raster.shape != (grid.ny, grid.nx):
        raise ValueError(
            f"contrast CSV is {raster.shape}, expected (ny={grid.ny}, nx={grid.nx})"
        )
    return ContrastImage(grid=grid, values=_raster_to_values(raster))


def write_contrast_pgm(path: str, image: ContrastImage) -> None:
    """16-bit big-endian P5 with a JSON sidecar mapping samples to values.

    Sample s maps back to vmin + s * (vmax - vmin) / 65535.  A constant image
    writes all zeros with vmax = vmin in the sidecar.
    """
    raster = _image_raster(image)
    vmin = float(raster.min())
    vmax = float(raster.max())
    if vmax > vmin:
        samples = np.round((raster - vmin) / (vmax - vmin) * 65535.0)
    else:
        samples = np.zeros_like(raster)
    samples = samples.astype(">u2")
    header = f"P5\n{raster.shape[1]} {raster.shape[0]}\n65535\n".encode("ascii")
    atomic_write_bytes(path, header + samples.tobytes())
    sidecar = {
        "vmin": vmin,
        "vmax": vmax,
        "nx": int(image.grid.nx),
        "ny": int(image.grid.ny),
        "byte_order": "big-endian",
    }
    atomic_write_text(path + ".json", json.dumps(sidecar, indent=2, sort_keys=True) + "\n")


def read_contrast_pgm(path: str, grid: Grid) -> ContrastImage:
    with open(path, "rb") as handle:
        blob = handle.read()
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if blob[pos : pos + 1] == b"#":
            while pos < len(blob) and blob[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        fields.append(blob[start:pos])
    pos += 1  # single whitespace after maxval
    if fields[0] != b"P5":
        raise ValueError("not a binary PGM file")
    width, height, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 65535:
        raise ValueError(f"expected 16-bit samples (maxval 65535), got {maxval}")
    raster = np.frombuffer(blob, dtype=">u2", offset=pos, count=width * height)
    raster = raster.reshape(height, width).astype(float)
    with open(path + ".json", "r", encoding="utf-8") as handle:
        sidecar = json.load(handle)
    vmin, vmax = sidecar["vmin"], sidecar["vmax"]
    values = vmin + raster / 65535.0 * (vmax - vmin) if vmax > vmin else np.full_like(raster, vmin)
    if (grid.ny, grid.nx) != raster.shape:
        raise ValueError(f"PGM raster {raster.shape} does not match grid ({grid.ny}, {grid.nx})")
    return ContrastImage(grid=grid, values=_raster_to_values(values))


# ---------------------------------------------------------------------------
# scattered data
# ---------------------------------------------------------------------------


def write_scattered_csv(path: str, data: ScatteredData) -> None:
    lines = ["freq_hz,tx,rx,re,im"]
    for j in data.indices:
        Y = data.Y[j]
        freq = data.freqs_hz[j]
        for i in range(Y.shape[1]):
            for m in range(Y.shape[0]):
                lines.append(
                    f"{freq:.17g},{i},{m},{Y[m, i].real:.17g},{Y[m, i].imag:.17g}"
                )
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_scattered_csv(path: str) -> ScatteredData:
    raw = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    freqs = np.unique(raw[:, 0])
    Y: dict[int, np.ndarray] = {}
    fr: dict[int, float] = {}
    for j, freq in enumerate(np.sort(freqs)):
        rows = raw[raw[:, 0] == freq]
        n_tx = int(rows[:, 1].max()) + 1
        n_rx = int(rows[:, 2].max()) + 1
        mat = np.zeros((n_rx, n_tx), dtype=complex)
        for rec in rows:
            mat[int(rec[2]), int(rec[1])] = rec[3] + 1j * rec[4]
        Y[j] = mat
        fr[j] = float(freq)
    return ScatteredData(Y=Y, freqs_hz=fr)


def write_scattered_blob(path: str, data: ScatteredData) -> None:
    """Lossless little-endian binary: header, then per-frequency blocks.

    Layout: magic 'RTSD', u32 version, u32 frequency count; per frequency a
    u32 index, f64 frequency, u32 n_rx, u32 n_tx, then n_rx*n_tx complex128
    little-endian values in rx-major order.  Noise metadata goes in a JSON
    sidecar next to the blob.
    """
    parts = [_BLOB_MAGIC, struct.pack("<II", _BLOB_VERSION, len(data.indices))]
    for j in data.indices:
        Y = data.Y[j]
        parts.append(struct.pack("<IdII", j, data.freqs_hz[j], *Y.shape))
        parts.append(np.ascontiguousarray(Y, dtype="<c16").tobytes())
    atomic_write_bytes(path, b"".join(parts))
    meta = {"noise_rel": data.noise_rel, "noise_seed": data.noise_seed}
    atomic_write_text(path + ".json", json.dumps(meta, indent=2, sort_keys=True) + "\n")


def read_scattered_blob(path: str) -> ScatteredData:
    with open(path, "rb") as handle:
        blob = handle.read()
    if blob[:4] != _BLOB_MAGIC:
        raise ValueError("not a scattered-data blob (bad magic)")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != _BLOB_VERSION:
        raise ValueError(f"unsupported blob version {version}")
    pos = 12
    Y: dict[int, np.ndarray] = {}
    fr: dict[int, float] = {}
    for _ in range(count):
        j, freq, n_rx, n_tx = struct.unpack_from("<IdII", blob, pos)
        pos += struct.calcsize("<IdII")
        mat = np.frombuffer(blob, dtype="<c16", offset=pos, count=n_rx * n_tx)
        pos += 16 * n_rx * n_tx
        Y[j] = mat.reshape(n_rx, n_tx).copy()
        fr[j] = freq
    noise_rel, noise_seed = 0.0, None
    sidecar = path + ".json"
    if os.path.exists(sidecar):
        with open(sidecar, "r", encoding="utf-8") as handle:
            meta = json.load(handle)
        noise_rel = float(meta.get("noise_rel", 0.0))
        noise_seed = meta.get("noise_seed")
    return ScatteredData(Y=Y, freqs_hz=fr, noise_rel=noise_rel, noise_seed=noise_seed)


# ---------------------------------------------------------------------------
# traces, reports, manifests
# ---------------------------------------------------------------------------


def write_trace_csv(path: str, trace) -> None:
    lines = ["iteration,misfit,alpha,tv,min_value,grad_map_norm"]
    for rec in trace:
        lines.append(
            f"{rec.iteration},{rec.misfit:.17g},{rec.alpha:.17g},"
            f"{rec.tv:.17g},{rec.min_value:.17g},{rec.grad_map_norm:.17g}"
        )
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_report_json(path: str, report, extra: dict | None = None) -> None:
    """Serialize an InversionReport without the bulky per-iteration traces."""
    body = {
        "method": report.method,
        "dr": report.dr,
        "snr_db": report.snr_db,
        "wall_time_s": report.wall_time_s,
        "tau_history": report.tau_history,
        "stages": [
            {
                "index": s.index,
                "batch": s.batch,
                "tau": s.tau,
                "iterations": s.iterations,
                "misfit": s.misfit,
                "grad_map_norm": s.grad_map_norm,
                "wall_time_s": s.wall_time_s,
            }
            for s in report.stages
        ],
    }
    if extra:
        body.update(extra)
    atomic_write_text(path, json.dumps(body, indent=2, sort_keys=True) + "\n")


def config_digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def write_manifest(path: str, config_text: str, seed: int | None, command: str) -> None:
    """Record everything needed to reproduce a run bitwise."""
    import scipy

    from . import __version__

    manifest = {
        "command": command,
        "config_sha256": config_digest(config_text),
        "config": config_text,
        "seed": seed,
        "versions": {
            "python": sys.version.split()[0],
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "refltomo": __version__,
        },
    }
    atomic_write_text(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
