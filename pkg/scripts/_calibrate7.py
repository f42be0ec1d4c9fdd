"""Scratch calibration for the desk-scale method comparison (deleted before ship)."""
import time
import logging

import numpy as np

logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s", datefmt="%H:%M:%S")
logging.getLogger("refltomo.proxqn").setLevel(logging.WARNING)

import refltomo as rt
from refltomo.forward import solve_total_field, synthesize_data, WavefieldSet
from refltomo.inversion import sf_tau, sf_sigma, cisor, rl
from refltomo.proxqn import ProxQNConfig
from refltomo.proxtv import TVOperator
from refltomo.scene import FrequencySchedule

g = rt.square_grid(16)
acq = rt.default_acquisition()
freqs = np.array([10e6, 30e6, 60e6, 95e6, 150e6, 250e6, 400e6, 600e6, 850e6, 1100e6, 1500e6, 2000e6])
sched = FrequencySchedule(freqs=freqs)
ops = {j: rt.build_green_operators(g, acq, sched, j) for j in range(12)}
truth = rt.layered_phantom(16, 1.0)

t0 = time.time()
U = WavefieldSet()
for j in range(12):
    U.merge(solve_total_field(ops[j], truth, tol=1e-10))
data = synthesize_data(list(ops.values()), truth, U)
print("synthesis %.1fs" % (time.time() - t0), flush=True)
tau_true = TVOperator(16, 16).tv(truth.values)
pernorm = [data.norm([j]) for j in range(12)]
print("tau_true %.4f  data norm %.6f" % (tau_true, data.norm()), flush=True)
print("per-freq norms", np.array2string(np.array(pernorm), precision=4), flush=True)

cfg = ProxQNConfig(i_max=500)
t0 = time.time()
rep = sf_tau(data, ops, sched, tau_true, cfg, f_true=truth.values)
print("SF-tau  %6.1fs  DR %10.6f  SNR %6.2f  iters %s" % (time.time() - t0, rep.dr, rep.snr_db, [s.iterations for s in rep.stages]), flush=True)

t0 = time.time()
repc = cisor(data, ops, sched, tau_true, ProxQNConfig(i_max=1000), f_true=truth.values)
print("CISOR   %6.1fs  DR %10.6f  SNR %6.2f  iters %s" % (time.time() - t0, repc.dr, repc.snr_db, [s.iterations for s in repc.stages]), flush=True)

t0 = time.time()
repr_ = rl(data, ops, sched, tau_true, cfg, f_true=truth.values)
print("RL      %6.1fs  DR %10.6f  SNR %6.2f  iters %s" % (time.time() - t0, repr_.dr, repr_.snr_db, [s.iterations for s in repr_.stages]), flush=True)

t0 = time.time()
reps = sf_sigma(data, ops, sched, 0.0, cfg, f_true=truth.values)
print("SF-sig  %6.1fs  DR %10.6f  SNR %6.2f  taus %s" % (time.time() - t0, reps.dr, reps.snr_db, ["%.1f" % s.tau for s in reps.stages]), flush=True)
