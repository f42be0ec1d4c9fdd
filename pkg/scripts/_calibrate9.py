"""Scratch probe (deleted before ship): i_max=1000 consequences for c08b/c09/RL.

Measures, on the 16x16 desk scene with i_max=1000 everywhere:
  1. sf-sigma on noiseless data (c08b: must be within 5 dB of sf-tau's 18.22),
  2. sf-tau on 20% noisy data (c09: drop <= 8 dB, DR in [1, 4]),
  3. rl on clean data (c07 ordering: must stay below cisor's 0.86 dB).
"""

import sys
import time

sys.path.insert(0, "src")

import numpy as np

from refltomo.forward import WavefieldSet, add_noise, solve_total_field, synthesize_data
from refltomo.greens import build_green_operators
from refltomo.inversion import rl, sf_sigma, sf_tau
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
    cfg = ProxQNConfig(i_max=1000)

    t0 = time.perf_counter()
    rep = sf_sigma(data, ops, sched, 0.0, cfg, f_true=truth.values)
    taus = [f"{st.tau:.1f}" for st in rep.stages]
    print(
        f"SF-sig  {time.perf_counter()-t0:6.1f}s  DR {rep.dr:10.6f}  SNR {rep.snr_db:6.2f}  taus {taus}",
        flush=True,
    )

    noisy = add_noise(data, 0.2, seed=42)
    t0 = time.perf_counter()
    rep = sf_tau(noisy, ops, sched, tau, cfg, f_true=truth.values)
    print(
        f"SF-tau20 {time.perf_counter()-t0:5.1f}s  DR {rep.dr:10.6f}  SNR {rep.snr_db:6.2f}",
        flush=True,
    )

    t0 = time.perf_counter()
    rep = rl(data, ops, sched, tau, cfg, f_true=truth.values)
    iters = [len(st.trace) - 1 for st in rep.stages]
    print(
        f"RL      {time.perf_counter()-t0:6.1f}s  DR {rep.dr:10.6f}  SNR {rep.snr_db:6.2f}  iters {iters}",
        flush=True,
    )


if __name__ == "__main__":
    main()
