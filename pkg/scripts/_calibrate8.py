"""Scratch probe (deleted before ship): can sf-tau reach 12 dB on the desk scene?

Probe A: i_max=1000 (double the outer budget).
Probe B: i_max=500 with inner_t_max=1000, inner_tol=1e-10 (better directions).
"""

import sys
import time

sys.path.insert(0, "src")

import numpy as np

from refltomo.forward import WavefieldSet, solve_total_field, synthesize_data
from refltomo.greens import build_green_operators
from refltomo.inversion import sf_tau
from refltomo.proxqn import ProxQNConfig
from refltomo.proxtv import TVOperator
from refltomo.scene import FrequencySchedule, default_acquisition, layered_phantom, square_grid

FREQS = np.array(
    [10e6, 30e6, 60e6, 95e6, 150e6, 250e6, 400e6, 600e6, 850e6, 1100e6, 1500e6, 2000e6]
)


def main() -> None:
    grid = square_grid(16)
    acq = default_acquisition()
    sched = FrequencySchedule(freqs=FREQS)
    ops = {j: build_green_operators(grid, acq, sched, j) for j in range(12)}
    truth = layered_phantom(16, 1.0)
    fields = WavefieldSet()
    for j in range(12):
        fields.merge(solve_total_field(ops[j], truth, tol=1e-10))
    data = synthesize_data(list(ops.values()), truth, fields)
    tau = TVOperator(16, 16).tv(truth.values)
    print(f"tau_true {tau:.4f}", flush=True)

    for label, cfg in (
        ("A i1000", ProxQNConfig(i_max=1000)),
        ("B inner1000", ProxQNConfig(i_max=500, inner_t_max=1000, inner_tol=1e-10)),
    ):
        t0 = time.perf_counter()
        rep = sf_tau(data, ops, sched, tau, cfg, f_true=truth.values)
        wall = time.perf_counter() - t0
        iters = [len(st.trace) - 1 for st in rep.stages]
        print(
            f"{label:12s} {wall:6.1f}s  DR {rep.dr:10.6f}  SNR {rep.snr_db:6.2f}  iters {iters}",
            flush=True,
        )


if __name__ == "__main__":
    main()
