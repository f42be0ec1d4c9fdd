"""Workflow drivers, the TV-budget update, and reporting metrics."""

import numpy as np
import pytest

from refltomo.forward import solve_total_field
from refltomo.inversion import (
    InversionReport,
    TVBudget,
    TVConstraintState,
    cisor,
    metric_dr,
    metric_snr,
    rl,
    sf_sigma,
    sf_tau,
    tau_update,
)
from refltomo.objective import misfit
from refltomo.proxqn import ProxQNConfig
from refltomo.proxtv import TVOperator

_FAST = ProxQNConfig(i_max=10, memory=5, inner_t_max=2000, inner_tol=1e-10,
                     prox_t_max=2000, prox_tol=1e-9, forward_tol=1e-8)


def test_tv_budget_validation():
    assert TVBudget(tau=0.0).tau == 0.0
    for bad in (-1.0, np.nan, np.inf):
        with pytest.raises(ValueError):
            TVBudget(tau=bad)


# --- metrics -------------------------------------------------------------------

def test_metric_dr_zero_contrast_is_fifty(data8, ops8):
    assert metric_dr(np.zeros(64), data8, ops8) == pytest.approx(50.0, rel=1e-12)


def test_metric_dr_truth_is_tiny(layered8, data8, ops8):
    assert metric_dr(layered8, data8, ops8, tol=1e-12) < 1e-12


def test_metric_snr_values(layered8):
    truth = layered8.values
    assert metric_snr(truth, truth) == 300.0
    # an error of a tenth of the signal is exactly 20 dB
    off = truth + 0.1 * np.linalg.norm(truth) * np.eye(64)[0]
    assert metric_snr(off, truth) == pytest.approx(20.0, rel=1e-12)
    with pytest.raises(ValueError):
        metric_snr(truth, np.zeros(64))


# --- budget update ---------------------------------------------------------------

def test_tau_update_fixed_point_at_target(layered8, data8, ops8):
    """||r|| equal to the target leaves the budget untouched."""
    f = 0.5 * layered8.values
    _, residuals, fields = misfit(f, [0, 1, 2], data8, ops8, tol=1e-10)
    state = TVConstraintState(tau=3.0)
    out = tau_update(state, residuals, fields, ops8, sigma_next=residuals.norm())
    assert out.tau == pytest.approx(3.0, abs=1e-12)


def test_tau_update_grows_when_residual_exceeds_target(layered8, data8, ops8):
    f = 0.5 * layered8.values
    _, residuals, fields = misfit(f, [0, 1, 2], data8, ops8, tol=1e-10)
    state = TVConstraintState(tau=3.0)
    out = tau_update(state, residuals, fields, ops8, sigma_next=0.0)
    assert out.tau > 3.0


def test_tau_update_zero_gauge_raises(ops8, data8):
    from refltomo.forward import WavefieldSet
    from refltomo.objective import ResidualSet

    residuals = ResidualSet(R={0: np.ones((5, 5), dtype=complex)})
    fields = WavefieldSet(fields={0: np.zeros((64, 5), dtype=complex)},
                          residuals={0: 0.0})
    with pytest.raises(ZeroDivisionError):
        tau_update(TVConstraintState(tau=1.0), residuals, fields, ops8, 0.0)


# --- workflows --------------------------------------------------------------------

def _tau_of(img):
    return TVOperator(img.grid.nx, img.grid.ny).tv(img.values)


def test_sf_tau_batches_and_report(layered8, data8, ops8):
    rep = sf_tau(data8, ops8, tau=_tau_of(layered8), config=_FAST,
                 f_true=layered8.values)
    assert isinstance(rep, InversionReport)
    assert rep.method == "sf-tau"
    assert [s.batch for s in rep.stages] == [[0], [0, 1], [0, 1, 2]]
    assert rep.tau_history == [_tau_of(layered8)] * 3
    assert rep.dr < 50.0
    assert rep.snr_db is not None and np.isfinite(rep.snr_db)
    assert rep.wall_time_s > 0
    assert rep.f_star.values.min() >= 0.0


def test_cisor_single_stage(layered8, data8, ops8):
    rep = cisor(data8, ops8, tau=_tau_of(layered8), config=_FAST)
    assert rep.method == "cisor"
    assert [s.batch for s in rep.stages] == [[0, 1, 2]]
    assert rep.snr_db is None
    assert rep.dr < 50.0


def test_rl_singleton_batches(layered8, data8, ops8):
    rep = rl(data8, ops8, tau=_tau_of(layered8), config=_FAST)
    assert rep.method == "rl"
    assert [s.batch for s in rep.stages] == [[0], [1], [2]]


def test_sf_sigma_starts_flat_and_grows_budget(layered8, data8, ops8):
    rep = sf_sigma(data8, ops8, noise_rel=0.0, config=_FAST, f_true=layered8.values)
    assert rep.method == "sf-sigma"
    assert rep.stages[0].tau == 0.0
    # noiseless data keeps pushing the budget up as frequencies arrive
    assert rep.stages[1].tau > 0.0
    assert all(t >= 0.0 for t in rep.tau_history)
    assert rep.dr < 50.0


def test_stage_misfits_do_not_regress_within_stage(data8, ops8, layered8):
    rep = sf_tau(data8, ops8, tau=_tau_of(layered8), config=_FAST)
    for stage in rep.stages:
        misfits = [r.misfit for r in stage.trace]
        assert all(b <= a + 1e-14 for a, b in zip(misfits, misfits[1:]))
