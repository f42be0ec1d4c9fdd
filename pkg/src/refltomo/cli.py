"""Configuration-driven experiment runner.

Subcommands
-----------
synthesize      phantom -> forward solves -> (noisy) scattered data on disk
invert          scattered data -> reconstruction report + images
demo-landscape  misfit-vs-contrast curves for a cylinder sweep
demo-spectrum   reflection vs transmission linearized reconstruction spectra
metrics         DR/SNR of a stored image against stored data

Configs are flat ``key = value`` text files ('#' starts a comment).  Keys are
validated strictly per subcommand: unknown or missing-required keys abort with
exit code 1 before any solve starts.  Exit codes: 0 ok, 1 config error,
2 solver failure, 3 I/O error.  Every run writes ``manifest.json`` with the
config text, its SHA-256, the seed, and library versions; reruns with an
identical manifest reproduce all outputs bitwise.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg

from . import fileio
from .forward import (
    ForwardSolveError,
    ScatteredData,
    add_noise,
    set_worker_threads,
    solve_total_field,
    synthesize_data,
)
from .greens import build_green_operators
from .inversion import cisor, metric_dr, metric_snr, rl, sf_sigma, sf_tau
from .objective import misfit
from .proxqn import ProxQNConfig
from .scene import (
    ContrastImage,
    FrequencySchedule,
    cylinder_scene,
    default_acquisition,
    frequency_bands,
    layered_phantom,
    pipes_phantom,
    resample_nearest,
    shepp_logan_phantom,
    square_grid,
)

logger = logging.getLogger(__name__)

_PHANTOMS = {
    "shepp": shepp_logan_phantom,
    "layered": layered_phantom,
    "pipes": pipes_phantom,
}

# The desk-scale frequency set used by the demos when none is configured:
# 12 points spanning the full band, denser at the low end.
_DESK_FREQS_MHZ = "10,30,60,95,150,250,400,600,850,1100,1500,2000"


class ConfigError(ValueError):
    """Raised for unparseable, unknown, or missing configuration keys."""


@dataclass
class ExperimentConfig:
    """Validated key/value configuration plus the raw text it came from."""

    command: str
    values: dict
    text: str

    def __getitem__(self, key):
        return self.values[key]


# key -> (type, default); default None means required
_COMMON_KEYS = {
    "out": (str, "."),
    "seed": (int, 0),
    "tol": (float, 1e-8),
    "threads": (int, 1),
}

_SCHEMAS = {
    "synthesize": {
        **_COMMON_KEYS,
        "phantom": (str, None),
        "n": (int, None),
        "synth_n": (int, 0),  # 0 -> same as n
        "fmax": (float, 1.0),
        "freq_mhz": (str, ""),
        "freq_indices": (str, "all"),
        "noise_rel": (float, 0.0),
    },
    "invert": {
        **_COMMON_KEYS,
        "data": (str, None),
        "n": (int, None),
        "method": (str, None),
        "tau": (float, float("nan")),
        "noise_rel": (float, float("nan")),
        "truth": (str, ""),
        "i_max": (int, 0),  # 0 -> method default
        "grad_tol": (float, 1e-6),
        "memory": (int, 10),
    },
    "demo-landscape": {
        **_COMMON_KEYS,
        "n": (int, 16),
        "c_true": (float, 10.0),
        "c_min": (float, 0.0),
        "c_max": (float, 20.0),
        "c_step": (float, 0.25),
        "freq_mhz": (str, _DESK_FREQS_MHZ),
    },
    "demo-spectrum": {
        **_COMMON_KEYS,
        "n": (int, 32),
        "fmax": (float, 1.0),
        "freq_ghz": (str, "2,3,5"),
        "ridge": (float, 1e-6),
    },
    "metrics": {
        **_COMMON_KEYS,
        "data": (str, None),
        "image": (str, None),
        "n": (int, None),
        "truth": (str, ""),
    },
}

_METHODS = ("sf-tau", "sf-sigma", "cisor", "rl")


def parse_config(text: str, command: str) -> ExperimentConfig:
    """Parse and validate a flat key = value config for one subcommand."""
    if command not in _SCHEMAS:
        raise ConfigError(f"unknown subcommand {command!r}")
    schema = _SCHEMAS[command]
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key not in schema:
            raise ConfigError(f"line {lineno}: unknown key {key!r} for {command}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        typ, _default = schema[key]
        try:
            values[key] = typ(val)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from exc
    for key, (typ, default) in schema.items():
        if key not in values:
            if default is None:
                raise ConfigError(f"missing required key {key!r} for {command}")
            values[key] = default
    _validate(command, values)
    return ExperimentConfig(command=command, values=values, text=text)


def _validate(command: str, values: dict) -> None:
    if values["threads"] < 1:
        raise ConfigError("threads must be >= 1")
    if not 0.0 < values["tol"] < 1.0:
        raise ConfigError("tol must lie in (0, 1)")
    if values["seed"] < 0:
        raise ConfigError("seed must be a nonnegative integer")
    if command == "synthesize":
        if values["phantom"] not in (*_PHANTOMS, "cylinder"):
            raise ConfigError(
                f"phantom must be one of {sorted((*_PHANTOMS, 'cylinder'))}, "
                f"got {values['phantom']!r}"
            )
        if values["n"] < 8:
            raise ConfigError("n must be at least 8")
        if values["noise_rel"] < 0:
            raise ConfigError("noise_rel must be nonnegative")
    if command == "invert":
        if values["method"] not in _METHODS:
            raise ConfigError(f"method must be one of {_METHODS}, got {values['method']!r}")
        if values["method"] == "sf-sigma":
            if np.isnan(values["noise_rel"]):
                raise ConfigError("sf-sigma needs noise_rel (its residual target)")
        elif np.isnan(values["tau"]) or values["tau"] < 0:
            raise ConfigError(f"{values['method']} needs a nonnegative tau")
    if command == "demo-landscape" and values["c_step"] <= 0:
        raise ConfigError("c_step must be positive")


def load_config(path: str, command: str) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            text = handle.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
    return parse_config(text, command)


# ---------------------------------------------------------------------------
# shared helpers
# ---------------------------------------------------------------------------


def _parse_float_list(text: str, what: str) -> list[float]:
    try:
        return [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad {what} list {text!r}") from exc


def _schedule_from_config(cfg: ExperimentConfig) -> FrequencySchedule:
    """Custom MHz list if given, else a selection from the standard band."""
    if cfg.values.get("freq_mhz"):
        mhz = _parse_float_list(cfg["freq_mhz"], "freq_mhz")
        return FrequencySchedule(freqs=np.asarray(mhz) * 1e6)
    full = frequency_bands()
    sel = cfg.values.get("freq_indices", "all")
    if sel == "all":
        return full
    try:
        idx = [int(tok) for tok in sel.split(",") if tok.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad freq_indices {sel!r}") from exc
    if any(i < 0 or i >= full.freqs.size for i in idx):
        raise ConfigError(f"freq_indices out of range 0..{full.freqs.size - 1}")
    return full.subset(idx)


def _build_phantom(name: str, n: int, fmax: float) -> ContrastImage:
    if name == "cylinder":
        return cylinder_scene(fmax, n=n)
    return _PHANTOMS[name](n, fmax)


def _ops_for(grid, acq, sched) -> dict:
    return {
        j: build_green_operators(grid, acq, sched, j) for j in range(sched.freqs.size)
    }


def _rekey_to_schedule(data: ScatteredData) -> tuple[ScatteredData, FrequencySchedule]:
    """Re-index stored data to consecutive indices sorted by frequency."""
    pairs = sorted(data.freqs_hz.items(), key=lambda kv: kv[1])
    Y = {p: data.Y[j] for p, (j, _) in enumerate(pairs)}
    fr = {p: f for p, (_, f) in enumerate(pairs)}
    sched = FrequencySchedule(freqs=np.array([f for _, f in pairs]))
    return (
        ScatteredData(Y=Y, freqs_hz=fr, noise_rel=data.noise_rel, noise_seed=data.noise_seed),
        sched,
    )


# ---------------------------------------------------------------------------
# synthesize
# ---------------------------------------------------------------------------


def cmd_synthesize(cfg: ExperimentConfig) -> int:
    out = cfg["out"]
    n = cfg["n"]
    synth_n = cfg["synth_n"] or n
    sched = _schedule_from_config(cfg)
    acq = default_acquisition()
    base = _build_phantom(cfg["phantom"], n, cfg["fmax"])
    if synth_n == n:
        scene = base
        grid = base.grid
    else:
        # Inexact-model protocol: solve the forward problem on a finer grid
        # than the one the inversion will use.
        scene = resample_nearest(base, synth_n)
        grid = scene.grid
    ops = _ops_for(grid, acq, sched)
    Y: dict[int, np.ndarray] = {}
    fr: dict[int, float] = {}
    for j in range(sched.freqs.size):
        fields = solve_total_field(ops[j], scene, tol=cfg["tol"])
        part = synthesize_data(ops[j], scene, fields)
        Y[j] = part.Y[j]
        fr[j] = part.freqs_hz[j]
        logger.info("synthesized %.0f MHz", fr[j] / 1e6)
    data = ScatteredData(Y=Y, freqs_hz=fr)
    if cfg["noise_rel"] > 0:
        data = add_noise(data, cfg["noise_rel"], cfg["seed"])
    fileio.write_scattered_blob(os.path.join(out, "data.bin"), data)
    fileio.write_scattered_csv(os.path.join(out, "data.csv"), data)
    fileio.write_contrast_csv(os.path.join(out, "truth.csv"), base)
    fileio.write_contrast_pgm(os.path.join(out, "truth.pgm"), base)
    fileio.write_manifest(
        os.path.join(out, "manifest.json"), cfg.text, cfg["seed"], "synthesize"
    )
    return 0


# ---------------------------------------------------------------------------
# invert
# ---------------------------------------------------------------------------


def cmd_invert(cfg: ExperimentConfig) -> int:
    out = cfg["out"]
    path = cfg["data"]
    if not os.path.exists(path):
        raise FileNotFoundError(f"data file not found: {path}")
    raw = (
        fileio.read_scattered_blob(path)
        if path.endswith(".bin")
        else fileio.read_scattered_csv(path)
    )
    data, sched = _rekey_to_schedule(raw)
    grid = square_grid(cfg["n"])
    acq = default_acquisition()
    ops = _ops_for(grid, acq, sched)
    truth = None
    if cfg["truth"]:
        truth = fileio.read_contrast_csv(cfg["truth"], grid)
    defaults = {"sf-tau": 500, "sf-sigma": 500, "cisor": 5000, "rl": 500}
    method = cfg["method"]
    solver_cfg = ProxQNConfig(
        i_max=cfg["i_max"] or defaults[method],
        grad_tol=cfg["grad_tol"],
        memory=cfg["memory"],
        forward_tol=cfg["tol"],
    )
    f_true = truth.values if truth is not None else None
    if method == "sf-tau":
        report = sf_tau(data, ops, sched, cfg["tau"], solver_cfg, f_true=f_true)
    elif method == "sf-sigma":
        report = sf_sigma(data, ops, sched, cfg["noise_rel"], solver_cfg, f_true=f_true)
    elif method == "cisor":
        report = cisor(data, ops, sched, cfg["tau"], solver_cfg, f_true=f_true)
    else:
        report = rl(data, ops, sched, cfg["tau"], solver_cfg, f_true=f_true)
    fileio.write_report_json(os.path.join(out, "report.json"), report)
    fileio.write_contrast_csv(os.path.join(out, "final.csv"), report.f_star)
    fileio.write_contrast_pgm(os.path.join(out, "final.pgm"), report.f_star)
    for stage in report.stages:
        fileio.write_trace_csv(
            os.path.join(out, f"trace_stage_{stage.index:02d}.csv"), stage.trace
        )
    fileio.write_manifest(
        os.path.join(out, "manifest.json"), cfg.text, cfg["seed"], "invert"
    )
    logger.info("invert done: DR %.4f, SNR %s", report.dr, report.snr_db)
    return 0


# ---------------------------------------------------------------------------
# demo: misfit landscape over cylinder contrast
# ---------------------------------------------------------------------------


def landscape_curves(
    n: int,
    c_true: float,
    c_values: np.ndarray,
    sched: FrequencySchedule,
    tol: float = 1e-8,
):
    """Per-frequency, full-batch, and incremental misfit curves over c.

    Returns (per_freq, incremental) arrays of shapes (n_c, n_freq); column k
    of ``incremental`` aggregates frequencies 0..k, so its last column is the
    full fixed batch.
    """
    grid = square_grid(n)
    acq = default_acquisition()
    ops = _ops_for(grid, acq, sched)
    n_f = sched.freqs.size
    truth = cylinder_scene(c_true, n=n)
    Y: dict[int, np.ndarray] = {}
    fr: dict[int, float] = {}
    for j in range(n_f):
        fields = solve_total_field(ops[j], truth, tol=tol)
        part = synthesize_data(ops[j], truth, fields)
        Y[j] = part.Y[j]
        fr[j] = part.freqs_hz[j]
    data = ScatteredData(Y=Y, freqs_hz=fr)
    per_freq = np.empty((c_values.size, n_f))
    warm: dict[int, np.ndarray] = {}
    for row, c in enumerate(c_values):
        scene = cylinder_scene(float(c), n=n)
        for j in range(n_f):
            fields = solve_total_field(ops[j], scene, tol=tol, initial=warm.get(j))
            warm[j] = fields.fields[j]
            part = synthesize_data(ops[j], scene, fields)
            per_freq[row, j] = 0.5 * float(np.sum(np.abs(data.Y[j] - part.Y[j]) ** 2))
        logger.info("landscape: c = %.2f done", c)
    incremental = np.cumsum(per_freq, axis=1)
    return per_freq, incremental


def count_local_minima(curve: np.ndarray) -> int:
    """Strict interior local minima: v[i] < v[i-1] and v[i] < v[i+1]."""
    v = np.asarray(curve)
    return int(np.sum((v[1:-1] < v[:-2]) & (v[1:-1] < v[2:])))


def cmd_demo_landscape(cfg: ExperimentConfig) -> int:
    out = cfg["out"]
    sched = _schedule_from_config(cfg)
    c_values = np.arange(cfg["c_min"], cfg["c_max"] + 0.5 * cfg["c_step"], cfg["c_step"])
    per_freq, incremental = landscape_curves(
        cfg["n"], cfg["c_true"], c_values, sched, tol=cfg["tol"]
    )
    mhz = [f"{f / 1e6:g}" for f in sched.freqs]
    header = (
        ["c"]
        + [f"perfreq_{m}MHz" for m in mhz]
        + [f"incr_{k + 1}" for k in range(len(mhz))]
        + ["batch"]
    )
    lines = [",".join(header)]
    for row, c in enumerate(c_values):
        cells = [format(c, ".17g")]
        cells += [format(v, ".17g") for v in per_freq[row]]
        cells += [format(v, ".17g") for v in incremental[row]]
        cells += [format(incremental[row, -1], ".17g")]
        lines.append(",".join(cells))
    fileio.atomic_write_text(os.path.join(out, "landscape.csv"), "\n".join(lines) + "\n")
    summary = {
        "c_grid": [float(c) for c in c_values],
        "argmin_incremental": [
            float(c_values[int(np.argmin(incremental[:, k]))]) for k in range(len(mhz))
        ],
        "local_minima_per_freq": [int(count_local_minima(per_freq[:, j])) for j in range(len(mhz))],
        "freqs_mhz": [float(m) for m in mhz],
    }
    fileio.atomic_write_text(
        os.path.join(out, "landscape_summary.json"),
        json.dumps(summary, indent=2, sort_keys=True) + "\n",
    )
    fileio.write_manifest(
        os.path.join(out, "manifest.json"), cfg.text, cfg["seed"], "demo-landscape"
    )
    return 0


# ---------------------------------------------------------------------------
# demo: reflection vs transmission spectra
# ---------------------------------------------------------------------------


def _linearized_solve(ops_list, scene, y_list, ridge_rel: float, tol: float) -> np.ndarray:
    """Ridge-regularized real least squares on rows H diag(U*) at true fields."""
    rows = []
    rhs = []
    for op, y in zip(ops_list, y_list):
        fields = solve_total_field(op, scene, tol=tol)
        # single-transmitter demo: rows are H diag(u*) for the one column
        U = fields.fields[op.freq_index][:, 0]
        rows.append(op.H * U[None, :])
        rhs.append(y[:, 0])
    A = np.vstack(rows)
    b = np.concatenate(rhs)
    n = A.shape[1]

    def normal_matvec(x: np.ndarray) -> np.ndarray:
        return np.real(A.conj().T @ (A @ x))

    # relative ridge: 1e-6 of the dominant eigenvalue of Re(A^H A)
    v = np.ones(n) / np.sqrt(n)
    lam = 1.0
    for _ in range(50):
        Av = normal_matvec(v)
        lam = float(np.linalg.norm(Av))
        if lam == 0.0:
            break
        v = Av / lam
    eps = ridge_rel * lam if lam > 0 else ridge_rel
    M = LinearOperator((n, n), matvec=lambda x: normal_matvec(x) + eps * x, dtype=float)
    target = np.real(A.conj().T @ b)
    f, info = cg(M, target, rtol=1e-10, atol=0.0, maxiter=20 * n)
    if info != 0:
        raise RuntimeError(f"normal-equation CG failed (info={info})")
    return f


def _spectrum(f: np.ndarray, n: int) -> np.ndarray:
    return np.fft.fftshift(np.abs(np.fft.fft2(f.reshape(n, n))))


def low_band_fraction(spectrum: np.ndarray) -> float:
    """Energy fraction inside the circle |xi| < (1/4) Nyquist."""
    n = spectrum.shape[0]
    k = np.arange(n) - n // 2
    kx, ky = np.meshgrid(k, k, indexing="ij")
    mask = np.sqrt(kx**2 + ky**2) < n / 8.0
    total = float(np.sum(spectrum**2))
    if total == 0.0:
        return 0.0
    return float(np.sum(spectrum[mask] ** 2) / total)


def cmd_demo_spectrum(cfg: ExperimentConfig) -> int:
    out = cfg["out"]
    n = cfg["n"]
    grid = square_grid(n)
    ghz = _parse_float_list(cfg["freq_ghz"], "freq_ghz")
    sched = FrequencySchedule(freqs=np.asarray(ghz) * 1e9)
    scene = shepp_logan_phantom(n, cfg["fmax"])
    tx = np.array([[-0.6, 0.0]])
    line = np.linspace(-0.5, 0.5, 5)
    geometries = {
        "reflection": np.column_stack([np.full(5, -0.6), line]),
        "transmission": np.column_stack([np.full(5, 0.6), line]),
    }
    fractions = {}
    for mode, rx in geometries.items():
        from .scene import AcquisitionGeometry

        acq = AcquisitionGeometry(tx=tx, rx=rx)
        ops_list = [
            build_green_operators(grid, acq, sched, j) for j in range(sched.freqs.size)
        ]
        y_list = []
        for op in ops_list:
            fields = solve_total_field(op, scene, tol=cfg["tol"])
            part = synthesize_data(op, scene, fields)
            y_list.append(part.Y[op.freq_index])
        f_rec = _linearized_solve(ops_list, scene, y_list, cfg["ridge"], cfg["tol"])
        spec = _spectrum(f_rec, n)
        lines = [",".join(format(v, ".17g") for v in row) for row in spec]
        fileio.atomic_write_text(
            os.path.join(out, f"spectrum_{mode}.csv"), "\n".join(lines) + "\n"
        )
        fractions[mode] = low_band_fraction(spec)
        logger.info("%s low-band fraction: %.4f", mode, fractions[mode])
    fileio.atomic_write_text(
        os.path.join(out, "spectrum_summary.json"),
        json.dumps(fractions, indent=2, sort_keys=True) + "\n",
    )
    fileio.write_manifest(
        os.path.join(out, "manifest.json"), cfg.text, cfg["seed"], "demo-spectrum"
    )
    return 0


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def cmd_metrics(cfg: ExperimentConfig) -> int:
    out = cfg["out"]
    path = cfg["data"]
    if not os.path.exists(path):
        raise FileNotFoundError(f"data file not found: {path}")
    raw = (
        fileio.read_scattered_blob(path)
        if path.endswith(".bin")
        else fileio.read_scattered_csv(path)
    )
    data, sched = _rekey_to_schedule(raw)
    grid = square_grid(cfg["n"])
    image = fileio.read_contrast_csv(cfg["image"], grid)
    ops = _ops_for(grid, default_acquisition(), sched)
    body = {"dr": metric_dr(image.values, data, ops, tol=cfg["tol"])}
    if cfg["truth"]:
        truth = fileio.read_contrast_csv(cfg["truth"], grid)
        body["snr_db"] = metric_snr(image.values, truth.values)
    fileio.atomic_write_text(
        os.path.join(out, "metrics.json"), json.dumps(body, indent=2, sort_keys=True) + "\n"
    )
    fileio.write_manifest(
        os.path.join(out, "manifest.json"), cfg.text, cfg["seed"], "metrics"
    )
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


_COMMANDS = {
    "synthesize": cmd_synthesize,
    "invert": cmd_invert,
    "demo-landscape": cmd_demo_landscape,
    "demo-spectrum": cmd_demo_spectrum,
    "metrics": cmd_metrics,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="refltomo",
        description="Frequency-domain reflection tomography experiments.",
    )
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", required=True, help="key = value config file")
    parser.add_argument("--out", help="output directory (overrides config)")
    parser.add_argument("--seed", type=int, help="RNG seed (overrides config)")
    parser.add_argument("--threads", type=int, help="worker threads (overrides config)")
    parser.add_argument("--tol", type=float, help="forward tolerance (overrides config)")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.command)
        for key, val in (
            ("out", args.out),
            ("seed", args.seed),
            ("threads", args.threads),
            ("tol", args.tol),
        ):
            if val is not None:
                cfg.values[key] = val
        _validate(args.command, cfg.values)
        set_worker_threads(cfg["threads"])
        os.makedirs(cfg["out"], exist_ok=True)
        return _COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (ForwardSolveError, ArithmeticError, RuntimeError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
