"""Green kernel, singular-cell coefficient, and per-frequency operators.

Reference values for the singular-cell coefficient come from adaptive
quadrature of the kernel over the actual square cell (radial integral in
closed form, angular integral numerically); the equivalent-area-disk formula
must agree with them to about a percent at the cell sizes used here.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from refltomo.greens import (
    SourceSpec,
    build_all_operators,
    build_green_operators,
    green_kernel_2d,
    hankel_h0_2,
    self_cell_coefficient,
)
from refltomo.scene import (
    AcquisitionGeometry,
    FrequencySchedule,
    default_acquisition,
    square_grid,
)

_TWO_PI_OVER_C = 2.0 * np.pi / 299792458.0


@pytest.mark.parametrize(
    "z, expected",
    [
        (0.5, 0.938469807240813 + 0.444518733506707j),
        (1.0, 0.765197686557967 - 0.088256964215677j),
        (3.2, -0.320188169657123 - 0.307053250132403j),
        (100.0, 0.019985850304223 + 0.077244313365083j),
    ],
)
def test_hankel_h0_2_reference_values(z, expected):
    assert hankel_h0_2(z) == pytest.approx(expected, rel=1e-12)


def test_hankel_h0_2_large_argument_envelope():
    # |H0^(2)(z)| ~ sqrt(2 / (pi z)) for large z
    assert abs(hankel_h0_2(100.0)) == pytest.approx(np.sqrt(2 / (np.pi * 100)), rel=1e-4)


def test_hankel_h0_2_rejects_nonpositive():
    with pytest.raises(ValueError):
        hankel_h0_2(0.0)
    with pytest.raises(ValueError):
        hankel_h0_2(-1.0)


def test_green_kernel_small_argument():
    # at k rho = 1e-6 the kernel is dominated by the log singularity in the
    # real part while the imaginary part is -J0/4 ~ -1/4
    g = green_kernel_2d(1.0, 1e-6)
    assert g.real == pytest.approx(2.217257870414861, rel=1e-12)
    assert g.imag == pytest.approx(-0.2499999999999375, rel=1e-12)


def test_green_kernel_rejects_zero_distance():
    with pytest.raises(ValueError):
        green_kernel_2d(1.0, 0.0)
    with pytest.raises(ValueError):
        green_kernel_2d(1.0, np.array([0.5, 0.0]))


@pytest.mark.parametrize(
    "freq_hz, dx, dy, quad, rel",
    [
        # square cells: the disk approximation is good to ~1%
        (100e6, 1 / 16, 1 / 16, 1.993742545848092e-03 - 9.758644950613911e-04j, 1e-2),
        (300e6, 1 / 16, 1 / 16, 1.301164898784e-03 - 9.702930177203e-04j, 1e-2),
        (300e6, 1 / 8, 1 / 8, 3.390453853734129e-03 - 3.806613530561450e-03j, 1e-2),
        # 2:1 aspect cell: equal-area disk is a coarser substitute
        (100e6, 1 / 8, 1 / 16, 3.469585047887424e-03 - 1.949636509429792e-03j, 3e-2),
    ],
)
def test_self_cell_matches_square_quadrature(freq_hz, dx, dy, quad, rel):
    k = _TWO_PI_OVER_C * freq_hz
    got = self_cell_coefficient(k, dx, dy)
    assert abs(got - quad) / abs(quad) < rel


def test_self_cell_area_scaling():
    # doubling the cell side at 300 MHz scales the square integral by this
    # frozen quadrature ratio; the disk formula must track it closely
    k = _TWO_PI_OVER_C * 300e6
    ratio = self_cell_coefficient(k, 1 / 8, 1 / 8) / self_cell_coefficient(k, 1 / 16, 1 / 16)
    expected = 3.076513295733 - 0.631352845098j
    assert abs(ratio - expected) / abs(expected) < 2e-2


def test_self_cell_rejects_bad_arguments():
    for args in [(0.0, 0.1, 0.1), (1.0, 0.0, 0.1), (1.0, 0.1, -0.1)]:
        with pytest.raises(ValueError):
            self_cell_coefficient(*args)


def test_source_spec():
    assert np.all(SourceSpec().amplitudes(3) == 1.0 + 0.0j)
    assert np.all(SourceSpec(q=2.0 - 1.0j).amplitudes(2) == 2.0 - 1.0j)
    with pytest.raises(ValueError):
        SourceSpec(q=np.nan)


# --- operator assembly -------------------------------------------------------

def test_dense_G_matches_direct_assembly(grid8, acq, sched3):
    """FFT-based application reproduces entrywise kernel assembly exactly."""
    op = build_green_operators(grid8, acq, sched3, 2)
    centers = grid8.cell_centers()
    d = np.linalg.norm(centers[:, None, :] - centers[None, :, :], axis=2)
    direct = np.zeros((64, 64), dtype=complex)
    off = d > 0
    direct[off] = op.k**2 * green_kernel_2d(op.k, d[off]) * grid8.dx * grid8.dy
    np.fill_diagonal(direct, op.k**2 * self_cell_coefficient(op.k, grid8.dx, grid8.dy))
    np.testing.assert_allclose(op.dense_G(), direct, atol=1e-12 * np.abs(direct).max())


def test_G_is_complex_symmetric(ops8):
    G = ops8[1].dense_G()
    np.testing.assert_allclose(G, G.T, rtol=0, atol=1e-14 * np.abs(G).max())


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(min_value=0, max_value=2**32 - 1))
def test_apply_GH_is_adjoint_of_apply_G(ops8, seed):
    """<G x, y> == <x, G^H y> for random complex vectors."""
    op = ops8[2]
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(64) + 1j * rng.standard_normal(64)
    y = rng.standard_normal(64) + 1j * rng.standard_normal(64)
    lhs = np.vdot(y, op.apply_G(x))
    rhs = np.vdot(op.apply_GH(y), x)
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_apply_G_matrix_argument(ops8):
    op = ops8[0]
    rng = np.random.default_rng(7)
    X = rng.standard_normal((64, 3)) + 1j * rng.standard_normal((64, 3))
    batched = op.apply_G(X)
    for i in range(3):
        np.testing.assert_allclose(batched[:, i], op.apply_G(X[:, i]), rtol=1e-13)


def test_dense_G_scale_guard(acq):
    sched = FrequencySchedule(np.array([100e6]))
    op = build_green_operators(square_grid(33), acq, sched, 0)
    with pytest.raises(ValueError):
        op.dense_G()


def test_receiver_matrix_has_no_k2_factor(grid8, acq, sched3):
    op = build_green_operators(grid8, acq, sched3, 1)
    centers = grid8.cell_centers()
    rho = np.linalg.norm(acq.rx[0] - centers[17])
    expected = green_kernel_2d(op.k, rho) * grid8.dx * grid8.dy
    assert op.H[0, 17] == pytest.approx(expected, rel=1e-12)


def test_incident_field_columns(grid8, acq, sched3):
    q = 0.5 + 2.0j
    op = build_green_operators(grid8, acq, sched3, 1, src=SourceSpec(q=q))
    centers = grid8.cell_centers()
    rho = np.linalg.norm(acq.tx[3] - centers[42])
    expected = op.k**2 * green_kernel_2d(op.k, rho) * q
    assert op.V[42, 3] == pytest.approx(expected, rel=1e-12)


def test_operator_shapes_and_frequency(grid8, acq, sched3):
    ops = build_all_operators(grid8, acq, sched3)
    assert [op.freq_index for op in ops] == [0, 1, 2]
    for op, f in zip(ops, sched3.freqs):
        assert op.H.shape == (5, 64)
        assert op.V.shape == (64, 5)
        assert op.n_rx == op.n_tx == 5
        assert op.freq_hz == pytest.approx(f, rel=1e-12)


def test_sensor_on_cell_center_rejected(grid8, sched3):
    centers = grid8.cell_centers()
    bad = AcquisitionGeometry(tx=centers[:1], rx=np.array([[0.0, -0.6]]))
    with pytest.raises(ValueError):
        build_green_operators(grid8, bad, sched3, 0)


def test_acquisition_outside_grid_ok(sched3):
    # sensors on the default line never coincide with cell centers
    build_green_operators(square_grid(9), default_acquisition(), sched3, 0)
